#pragma once

// X-Fusion: key-value generators, the cross-modal transformer with adaptive
// pooling, per-modality cross-attention injection, the iterative driver,
// the stacked/transformer-only variants and the task heads.
//
// Key projections are bias-free everywhere: a key bias shifts every logit of
// a query row by the same amount, so softmax is invariant to it.

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "xfi/encoding.hpp"
#include "xfi/errors.hpp"
#include "xfi/layers.hpp"
#include "xfi/ops.hpp"
#include "xfi/parameter_store.hpp"

namespace xfi {

enum class Variant { IterativeSharedBlock, StackedFreshKV, StackedSharedKV, TransformerOnly };

inline const char* to_string(Variant v) {
    switch (v) {
    case Variant::IterativeSharedBlock: return "iterative-shared-block";
    case Variant::StackedFreshKV: return "stacked-fresh-kv";
    case Variant::StackedSharedKV: return "stacked-shared-kv";
    case Variant::TransformerOnly: return "transformer-only";
    }
    return "?";
}

inline Variant parse_variant(const std::string& s) {
    for (auto v : {Variant::IterativeSharedBlock, Variant::StackedFreshKV, Variant::StackedSharedKV,
                   Variant::TransformerOnly})
        if (s == to_string(v)) return v;
    throw ConfigError("unknown fusion variant '" + s + "'");
}

enum class Task { Hpe, Har };

inline const char* to_string(Task t) { return t == Task::Hpe ? "hpe" : "har"; }

inline Task parse_task(const std::string& s) {
    if (s == "hpe") return Task::Hpe;
    if (s == "har") return Task::Har;
    throw ConfigError("unknown task '" + s + "'");
}

struct FusionConfig {
    std::size_t n_f = 8;
    std::size_t d_f = 64;
    std::size_t heads = 4;
    double scale = 0.25;
    std::size_t iterations = 4; // T
    std::size_t ffn_hidden = 128;
    Variant variant = Variant::IterativeSharedBlock;
    bool post_norm = true;
    double dropout_rate = 0.0;
    bool positional_encoding = true;
    CombineMode combine_mode = CombineMode::Concat;
    std::size_t transformer_layers = 4;
    bool identity_attention_output = false; // init attention output projections to I
    double norm_eps = 1e-5;

    void validate() const {
        if (n_f == 0 || d_f == 0) throw ConfigError("n_f and d_f must be positive");
        if (heads == 0 || d_f % heads != 0)
            throw ConfigError("d_f (" + std::to_string(d_f) + ") must be divisible by heads (" + std::to_string(heads) + ")");
        if (!(scale > 0.0)) throw ConfigError("attention scale must be positive");
        if (iterations == 0) throw ConfigError("iterations must be >= 1");
        if (ffn_hidden == 0) throw ConfigError("ffn_hidden must be positive");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
        if (transformer_layers == 0) throw ConfigError("transformer_layers must be >= 1");
    }
};

/// Per-forward state: training mode (dropout), its random stream and an
/// optional trace sink.
struct XFusionTrace {
    // kv_values[t][i]: flattened (K_i, V_i) values bound to iteration t for
    // canonical modality i (empty when absent).
    std::vector<std::vector<std::pair<std::vector<double>, std::vector<double>>>> kv_values;
    std::vector<Tensor> cross_modal_embeddings;
};

struct ForwardContext {
    bool training = false;
    std::mt19937_64* rng = nullptr;
    XFusionTrace* trace = nullptr;

    Tensor maybe_dropout(const Tensor& x, double rate) const {
        if (!training || rate == 0.0) return x;
        if (!rng) throw PreconditionError("training-mode dropout needs a random stream");
        return dropout(x, rate, *rng);
    }
};

struct KVGeneratorParams {
    LinearParams mlp1; // d_f -> 2 d_f
    NormParams norm;   // over 2 d_f
    LinearParams mlp2; // 2 d_f -> d_f
    LinearParams key;  // bias-free
    LinearParams value;

    static KVGeneratorParams create(ParameterStore& s, const std::string& name, const FusionConfig& c) {
        return {LinearParams::create(s, name + ".mlp1", c.d_f, 2 * c.d_f),
                NormParams::create(s, name + ".norm", 2 * c.d_f, c.norm_eps),
                LinearParams::create(s, name + ".mlp2", 2 * c.d_f, c.d_f),
                LinearParams::create(s, name + ".key", c.d_f, c.d_f, false),
                LinearParams::create(s, name + ".value", c.d_f, c.d_f)};
    }
};

struct CrossModalParams {
    LinearParams query, key, value, attn_out;
    FeedForwardParams ffn;
    NormParams norm1, norm2; // used when post_norm

    static CrossModalParams create(ParameterStore& s, const std::string& name, const FusionConfig& c) {
        CrossModalParams p{LinearParams::create(s, name + ".query", c.d_f, c.d_f),
                           LinearParams::create(s, name + ".key", c.d_f, c.d_f, false),
                           LinearParams::create(s, name + ".value", c.d_f, c.d_f),
                           LinearParams::create(s, name + ".attn_out", c.d_f, c.d_f),
                           FeedForwardParams::create(s, name + ".ffn", c.d_f, c.ffn_hidden, c.d_f),
                           {},
                           {}};
        if (c.post_norm) {
            p.norm1 = NormParams::create(s, name + ".norm1", c.d_f, c.norm_eps);
            p.norm2 = NormParams::create(s, name + ".norm2", c.d_f, c.norm_eps);
        }
        if (c.identity_attention_output) p.attn_out.set_identity();
        return p;
    }
};

/// Same layout as the cross-modal block; used by the transformer-only encoder.
using SelfAttentionBlockParams = CrossModalParams;

struct CrossAttentionParams {
    LinearParams query, attn_out;
    FeedForwardParams ffn;
    NormParams norm1, norm2;

    static CrossAttentionParams create(ParameterStore& s, const std::string& name, const FusionConfig& c) {
        CrossAttentionParams p{LinearParams::create(s, name + ".query", c.d_f, c.d_f),
                               LinearParams::create(s, name + ".attn_out", c.d_f, c.d_f),
                               FeedForwardParams::create(s, name + ".ffn", c.d_f, c.ffn_hidden, c.d_f),
                               {},
                               {}};
        if (c.post_norm) {
            p.norm1 = NormParams::create(s, name + ".norm1", c.d_f, c.norm_eps);
            p.norm2 = NormParams::create(s, name + ".norm2", c.d_f, c.norm_eps);
        }
        if (c.identity_attention_output) p.attn_out.set_identity();
        return p;
    }
};

struct TaskHeadParams {
    Task task = Task::Hpe;
    std::size_t output_dim = 0; // 3*J or number of classes
    FeedForwardParams mlp;

    static TaskHeadParams create(ParameterStore& s, const std::string& name, std::size_t d_f, std::size_t hidden,
                                 Task task, std::size_t output_dim) {
        if (task == Task::Hpe && output_dim % 3 != 0) throw ConfigError("keypoint head width must be a multiple of 3");
        return {task, output_dim, FeedForwardParams::create(s, name, d_f, hidden, output_dim)};
    }
};

struct KeyValue {
    Tensor key;
    Tensor value;
};

/// h = mlp2(layer_norm(relu(mlp1(F)))); K = key(h); V = value(h).
inline KeyValue generate_kv(const Tensor& features, const KVGeneratorParams& p) {
    if (features.rank() != 2 || features.dim(1) != p.mlp1.weight.dim(0))
        throw ShapeError("generate_kv: feature block " + to_string(features.shape()) + " does not match d_f " +
                         std::to_string(p.mlp1.weight.dim(0)));
    Tensor h = p.mlp2(p.norm(relu(p.mlp1(features))));
    return {p.key(h), p.value(h)};
}

/// Z = pool(MHA(Q,K,V)) + pool(Emb_mm); Emb_cm = FFN(Z) + Z, with a layer
/// norm after each residual sum when post_norm is set.
inline Tensor cross_modal_forward(const Tensor& emb_mm, const CrossModalParams& p, const FusionConfig& c,
                                  const ForwardContext& ctx = {}) {
    if (emb_mm.rank() != 2 || emb_mm.dim(1) != c.d_f || emb_mm.dim(0) == 0 || emb_mm.dim(0) % c.n_f != 0)
        throw ShapeError("cross_modal_forward: token count of " + to_string(emb_mm.shape()) +
                         " is not a positive multiple of n_f=" + std::to_string(c.n_f));
    Tensor attended = multi_head_attention(p.query(emb_mm), p.key(emb_mm), p.value(emb_mm), c.heads, c.scale,
                                           p.attn_out.weight, p.attn_out.bias);
    attended = ctx.maybe_dropout(attended, c.dropout_rate);
    Tensor z = add(adaptive_avg_pool(attended, c.n_f), adaptive_avg_pool(emb_mm, c.n_f));
    if (c.post_norm) z = p.norm1(z);
    Tensor out = add(ctx.maybe_dropout(p.ffn(z), c.dropout_rate), z);
    if (c.post_norm) out = p.norm2(out);
    return out;
}

/// O = MHA(query(Emb_cm), K_i, V_i); O' = O + Emb_cm; F' = FFN(O') + O'.
inline Tensor cross_attention_inject(const Tensor& emb_cm, const KeyValue& kv, const CrossAttentionParams& p,
                                     const FusionConfig& c, const ForwardContext& ctx = {}) {
    const Shape expected{c.n_f, c.d_f};
    if (emb_cm.shape() != expected || kv.key.shape() != expected || kv.value.shape() != expected)
        throw ShapeError("cross_attention_inject: expected " + to_string(expected) + " inputs, got " +
                         to_string(emb_cm.shape()) + ", " + to_string(kv.key.shape()) + ", " + to_string(kv.value.shape()));
    Tensor o = multi_head_attention(p.query(emb_cm), kv.key, kv.value, c.heads, c.scale, p.attn_out.weight,
                                    p.attn_out.bias);
    Tensor o_res = add(ctx.maybe_dropout(o, c.dropout_rate), emb_cm);
    if (c.post_norm) o_res = p.norm1(o_res);
    Tensor out = add(ctx.maybe_dropout(p.ffn(o_res), c.dropout_rate), o_res);
    if (c.post_norm) out = p.norm2(out);
    return out;
}

/// Self-attention encoder block over all tokens (no pooling).
inline Tensor self_attention_block(const Tensor& x, const SelfAttentionBlockParams& p, const FusionConfig& c,
                                   const ForwardContext& ctx = {}) {
    Tensor attended = multi_head_attention(p.query(x), p.key(x), p.value(x), c.heads, c.scale, p.attn_out.weight,
                                           p.attn_out.bias);
    Tensor h = add(ctx.maybe_dropout(attended, c.dropout_rate), x);
    if (c.post_norm) h = p.norm1(h);
    Tensor out = add(ctx.maybe_dropout(p.ffn(h), c.dropout_rate), h);
    if (c.post_norm) out = p.norm2(out);
    return out;
}

/// One X-Fusion block: cross-modal transformer plus per-modality injection
/// (and, for stacked-fresh-kv, its own key-value generators).
struct XFusionBlockParams {
    std::vector<KVGeneratorParams> kv; // empty unless the block owns generators
    CrossModalParams cross_modal;
    std::vector<CrossAttentionParams> cross_attention; // per canonical modality
};

struct FusionParams {
    Variant variant = Variant::IterativeSharedBlock;
    std::vector<KVGeneratorParams> kv; // shared generators (iterative, stacked-shared-kv)
    std::vector<XFusionBlockParams> blocks;
    std::vector<SelfAttentionBlockParams> encoder; // transformer-only

    /// Parameter names: fusion.kv.<id>, fusion.cm, fusion.ca.<id> for the
    /// iterative block; fusion.block<t>.* for stacked blocks;
    /// fusion.encoder<t>.* for transformer-only.
    static FusionParams create(ParameterStore& s, const FusionConfig& c, const std::vector<std::string>& modality_ids) {
        c.validate();
        FusionParams p;
        p.variant = c.variant;
        auto make_kv = [&](const std::string& prefix) {
            std::vector<KVGeneratorParams> out;
            for (const auto& id : modality_ids) out.push_back(KVGeneratorParams::create(s, prefix + id, c));
            return out;
        };
        auto make_block = [&](const std::string& prefix, bool own_kv) {
            XFusionBlockParams b;
            if (own_kv) b.kv = make_kv(prefix + ".kv.");
            b.cross_modal = CrossModalParams::create(s, prefix + ".cm", c);
            for (const auto& id : modality_ids)
                b.cross_attention.push_back(CrossAttentionParams::create(s, prefix + ".ca." + id, c));
            return b;
        };
        switch (c.variant) {
        case Variant::IterativeSharedBlock:
            p.kv = make_kv("fusion.kv.");
            p.blocks.push_back(make_block("fusion", false));
            break;
        case Variant::StackedFreshKV:
            for (std::size_t t = 0; t < c.iterations; ++t)
                p.blocks.push_back(make_block("fusion.block" + std::to_string(t), true));
            break;
        case Variant::StackedSharedKV:
            p.kv = make_kv("fusion.kv.");
            for (std::size_t t = 0; t < c.iterations; ++t)
                p.blocks.push_back(make_block("fusion.block" + std::to_string(t), false));
            break;
        case Variant::TransformerOnly:
            for (std::size_t t = 0; t < c.transformer_layers; ++t)
                p.encoder.push_back(SelfAttentionBlockParams::create(s, "fusion.encoder" + std::to_string(t), c));
            break;
        }
        return p;
    }
};

namespace detail {

inline std::vector<std::optional<KeyValue>> generate_all_kv(const FeatureSet& blocks,
                                                            const std::vector<KVGeneratorParams>& generators) {
    if (generators.size() != blocks.size())
        throw ConfigError("key-value generator count does not match configured modality count");
    std::vector<std::optional<KeyValue>> kv(blocks.size());
    for (std::size_t i = 0; i < blocks.size(); ++i)
        if (blocks[i]) kv[i] = generate_kv(*blocks[i], generators[i]);
    return kv;
}

inline void record_kv(const ForwardContext& ctx, const std::vector<std::optional<KeyValue>>& kv) {
    if (!ctx.trace) return;
    auto& slot = ctx.trace->kv_values.emplace_back(kv.size());
    for (std::size_t i = 0; i < kv.size(); ++i)
        if (kv[i]) slot[i] = {kv[i]->key.values(), kv[i]->value.values()};
}

// F'_i for every present modality, concatenated in canonical order.
inline FeatureSet inject_all(const Tensor& emb_cm, const std::vector<std::optional<KeyValue>>& kv,
                             const XFusionBlockParams& block, const FusionConfig& c, const ForwardContext& ctx) {
    FeatureSet out(kv.size());
    for (std::size_t i = 0; i < kv.size(); ++i)
        if (kv[i]) out[i] = cross_attention_inject(emb_cm, *kv[i], block.cross_attention.at(i), c, ctx);
    return out;
}

inline Tensor concat_present(const FeatureSet& blocks) {
    std::vector<Tensor> parts;
    for (const auto& b : blocks)
        if (b) parts.push_back(*b);
    return parts.size() == 1 ? parts.front() : concat(parts, 0);
}

} // namespace detail

/// Iterative X-Fusion: K_i, V_i are generated once from F_i; the same block
/// runs T times. Returns Emb_cm^T (the injection of the last round would feed
/// no further pass and is not computed).
inline Tensor xfusion_forward(const FeatureSet& features, const std::optional<Tensor>& pe, const FusionConfig& c,
                              const FusionParams& p, const ForwardContext& ctx = {},
                              std::optional<std::size_t> pe_block = std::nullopt) {
    if (c.variant != Variant::IterativeSharedBlock || p.variant != Variant::IterativeSharedBlock)
        throw ConfigError("xfusion_forward requires the iterative-shared-block variant");
    Tensor emb_mm = assemble_multimodal_embedding(features, pe, c.combine_mode, pe_block);
    const auto kv = detail::generate_all_kv(features, p.kv);
    const auto& block = p.blocks.front();
    Tensor emb_cm;
    for (std::size_t t = 0; t < c.iterations; ++t) {
        emb_cm = cross_modal_forward(emb_mm, block.cross_modal, c, ctx);
        detail::record_kv(ctx, kv);
        if (ctx.trace) ctx.trace->cross_modal_embeddings.push_back(emb_cm);
        if (t + 1 < c.iterations) emb_mm = detail::concat_present(detail::inject_all(emb_cm, kv, block, c, ctx));
    }
    return emb_cm;
}

/// Stacked X-Fusion blocks (fresh or shared key-value pairs) and the
/// transformer-only baseline encoder.
inline Tensor fusion_variant_forward(const FeatureSet& features, const std::optional<Tensor>& pe, const FusionConfig& c,
                                     const FusionParams& p, const ForwardContext& ctx = {},
                                     std::optional<std::size_t> pe_block = std::nullopt) {
    if (c.variant != p.variant) throw ConfigError("fusion config and parameters disagree on the variant");
    Tensor emb_mm = assemble_multimodal_embedding(features, pe, c.combine_mode, pe_block);
    switch (c.variant) {
    case Variant::IterativeSharedBlock:
        throw ConfigError("fusion_variant_forward does not handle the iterative-shared-block variant");
    case Variant::TransformerOnly: {
        Tensor x = emb_mm;
        for (const auto& layer : p.encoder) x = self_attention_block(x, layer, c, ctx);
        Tensor out = adaptive_avg_pool(x, c.n_f);
        if (ctx.trace) ctx.trace->cross_modal_embeddings.push_back(out);
        return out;
    }
    case Variant::StackedFreshKV:
    case Variant::StackedSharedKV: {
        const bool fresh = c.variant == Variant::StackedFreshKV;
        std::vector<std::optional<KeyValue>> kv;
        if (!fresh) kv = detail::generate_all_kv(features, p.kv);
        FeatureSet kv_source = features;
        Tensor emb_cm;
        for (std::size_t t = 0; t < p.blocks.size(); ++t) {
            const auto& block = p.blocks[t];
            if (fresh) kv = detail::generate_all_kv(kv_source, block.kv);
            emb_cm = cross_modal_forward(emb_mm, block.cross_modal, c, ctx);
            detail::record_kv(ctx, kv);
            if (ctx.trace) ctx.trace->cross_modal_embeddings.push_back(emb_cm);
            if (t + 1 < p.blocks.size()) {
                kv_source = detail::inject_all(emb_cm, kv, block, c, ctx);
                emb_mm = detail::concat_present(kv_source);
            }
        }
        return emb_cm;
    }
    }
    throw ConfigError("unknown fusion variant");
}

/// Dispatches on the configured variant.
inline Tensor fuse(const FeatureSet& features, const std::optional<Tensor>& pe, const FusionConfig& c,
                   const FusionParams& p, const ForwardContext& ctx = {},
                   std::optional<std::size_t> pe_block = std::nullopt) {
    if (c.variant == Variant::IterativeSharedBlock) return xfusion_forward(features, pe, c, p, ctx, pe_block);
    return fusion_variant_forward(features, pe, c, p, ctx, pe_block);
}

/// Token mean followed by the head MLP. HPE output is J x 3 keypoints, HAR
/// output is a vector of raw class logits.
inline Tensor task_head_forward(const Tensor& emb_cm, const TaskHeadParams& p, Task task) {
    if (task != p.task) throw ConfigError("task head was built for a different task");
    if (emb_cm.rank() != 2 || emb_cm.dim(1) != p.mlp.in.weight.dim(0))
        throw ShapeError("task head expects [* x " + std::to_string(p.mlp.in.weight.dim(0)) + "], got " +
                         to_string(emb_cm.shape()));
    Tensor out = p.mlp(mean(emb_cm, 0));
    if (task == Task::Hpe) return reshape(out, {p.output_dim / 3, 3});
    return reshape(out, {p.output_dim});
}

} // namespace xfi
