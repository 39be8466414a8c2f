#pragma once

// Per-modality feature encoding: frozen stub extractor, learned row-wise
// projection, positional encoding from the spatial modality and assembly of
// the multi-modal embedding.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xfi/errors.hpp"
#include "xfi/layers.hpp"
#include "xfi/ops.hpp"

namespace xfi {

struct ModalityConfig {
    std::string id;
    std::size_t raw_dim = 0;
    std::vector<bool> informative_mask; // over latent dims
    double noise_sigma = 0.0;
    double p_exist = 0.5;
    bool is_spatial = false;
};

/// Checks mask widths, joint coverage of the latent space and the
/// at-most-one spatial modality rule.
inline void validate_modalities(const std::vector<ModalityConfig>& modalities, std::size_t latent_dim) {
    if (modalities.empty()) throw ConfigError("at least one modality must be configured");
    std::vector<bool> covered(latent_dim, false);
    std::size_t spatial = 0;
    for (std::size_t i = 0; i < modalities.size(); ++i) {
        const auto& m = modalities[i];
        if (m.id.empty() || m.id.find_first_of("+,. \t") != std::string::npos)
            throw ConfigError("invalid modality id '" + m.id + "'");
        for (std::size_t j = 0; j < i; ++j)
            if (modalities[j].id == m.id) throw ConfigError("duplicate modality id '" + m.id + "'");
        if (m.raw_dim == 0) throw ConfigError("modality " + m.id + ": raw_dim must be positive");
        if (m.informative_mask.size() != latent_dim)
            throw ConfigError("modality " + m.id + ": mask width " + std::to_string(m.informative_mask.size()) +
                              " differs from latent dim " + std::to_string(latent_dim));
        if (m.noise_sigma < 0.0) throw ConfigError("modality " + m.id + ": noise_sigma must be non-negative");
        if (m.p_exist < 0.0 || m.p_exist > 1.0) throw ConfigError("modality " + m.id + ": p_exist outside [0,1]");
        for (std::size_t d = 0; d < latent_dim; ++d)
            if (m.informative_mask[d]) covered[d] = true;
        if (m.is_spatial) ++spatial;
    }
    for (std::size_t d = 0; d < latent_dim; ++d)
        if (!covered[d]) throw ConfigError("latent dim " + std::to_string(d) + " is not covered by any modality mask");
    if (spatial > 1) throw ConfigError("at most one modality may be spatial");
}

/// Frozen random linear extractor standing in for a pretrained backbone.
/// Output is n_f x d_hid.
class EncoderStub {
public:
    EncoderStub(std::size_t raw_dim, std::size_t n_f, std::size_t d_hid, std::uint64_t seed)
        : raw_dim_(raw_dim), n_f_(n_f), d_hid_(d_hid), frozen_(raw_dim * n_f * d_hid) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(raw_dim)));
        for (double& w : frozen_) w = dist(rng);
    }

    /// Wraps an explicit matrix [raw_dim x (n_f*d_hid)].
    EncoderStub(std::size_t raw_dim, std::size_t n_f, std::size_t d_hid, std::vector<double> matrix)
        : raw_dim_(raw_dim), n_f_(n_f), d_hid_(d_hid), frozen_(std::move(matrix)) {
        if (frozen_.size() != raw_dim * n_f * d_hid) throw ShapeError("encoder stub matrix has wrong size");
    }

    std::size_t raw_dim() const { return raw_dim_; }
    std::size_t n_f() const { return n_f_; }
    std::size_t d_hid() const { return d_hid_; }
    const std::vector<double>& frozen_matrix() const { return frozen_; }

    /// reshape(raw * M) to n_f x d_hid. The result never requires grad.
    Tensor extract(std::span<const double> raw) const {
        if (raw.size() != raw_dim_)
            throw ShapeError("encoder stub expects raw length " + std::to_string(raw_dim_) + ", got " +
                             std::to_string(raw.size()));
        const std::size_t width = n_f_ * d_hid_;
        std::vector<double> out(width, 0.0);
        for (std::size_t r = 0; r < raw_dim_; ++r) {
            const double x = raw[r];
            const double* row = frozen_.data() + r * width;
            for (std::size_t c = 0; c < width; ++c) out[c] += x * row[c];
        }
        return Tensor({n_f_, d_hid_}, std::move(out));
    }

private:
    std::size_t raw_dim_, n_f_, d_hid_;
    std::vector<double> frozen_;
};

struct ModalityEncoderParams {
    LinearParams projection; // d_hid -> d_f, applied per feature row

    static ModalityEncoderParams create(ParameterStore& store, const std::string& name, std::size_t d_hid,
                                        std::size_t d_f) {
        return {LinearParams::create(store, name + ".proj", d_hid, d_f)};
    }
};

inline Tensor encode_modality(std::span<const double> raw, const EncoderStub& stub, const ModalityEncoderParams& params) {
    return params.projection(stub.extract(raw));
}

struct PositionalEncodingParams {
    LinearParams map; // spatial raw_dim -> n_f*d_f
    std::size_t n_f = 0;
    std::size_t d_f = 0;

    static PositionalEncodingParams create(ParameterStore& store, const std::string& name, std::size_t raw_dim,
                                           std::size_t n_f, std::size_t d_f) {
        return {LinearParams::create(store, name, raw_dim, n_f * d_f), n_f, d_f};
    }
};

/// Positional encoding from the spatial modality's raw vector. Absent when
/// disabled or when the spatial modality is missing from the current input;
/// enabling it on a model with no spatial modality is a precondition error.
inline std::optional<Tensor> positional_encoding(std::optional<std::span<const double>> spatial_raw, bool enabled,
                                                 const PositionalEncodingParams* params) {
    if (!enabled) return std::nullopt;
    if (!params) throw PreconditionError("positional encoding enabled but no spatial modality is configured");
    if (!spatial_raw) return std::nullopt;
    const auto& raw = *spatial_raw;
    Tensor x({1, raw.size()}, std::vector<double>(raw.begin(), raw.end()));
    return reshape(params->map(x), {params->n_f, params->d_f});
}

enum class CombineMode { Concat, Add };

/// Feature blocks indexed by canonical (declaration-order) modality position;
/// absent modalities are nullopt.
using FeatureSet = std::vector<std::optional<Tensor>>;

inline std::size_t present_count(const FeatureSet& features) {
    std::size_t n = 0;
    for (const auto& f : features) n += f.has_value();
    return n;
}

/// Places named blocks at their canonical positions regardless of the order
/// they arrive in.
inline FeatureSet canonical_features(const std::vector<std::pair<std::string, Tensor>>& named,
                                     const std::vector<std::string>& canonical_ids) {
    FeatureSet out(canonical_ids.size());
    for (const auto& [id, block] : named) {
        auto it = std::find(canonical_ids.begin(), canonical_ids.end(), id);
        if (it == canonical_ids.end()) throw ConfigError("unknown modality id '" + id + "'");
        auto& slot = out[static_cast<std::size_t>(it - canonical_ids.begin())];
        if (slot) throw ConfigError("modality '" + id + "' supplied twice");
        slot = block;
    }
    return out;
}

/// Builds Emb_mm from present blocks in canonical order. The positional
/// encoding, when given, is added to every block, or only to block
/// `pe_block` when that is set. Concat stacks blocks along the token axis;
/// Add averages them.
inline Tensor assemble_multimodal_embedding(const FeatureSet& features, const std::optional<Tensor>& pe,
                                            CombineMode mode, std::optional<std::size_t> pe_block = std::nullopt) {
    std::vector<Tensor> blocks;
    const Tensor* first = nullptr;
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (!features[i]) continue;
        const Tensor& f = *features[i];
        if (first && f.shape() != first->shape())
            throw ShapeError("feature block shapes differ: " + to_string(first->shape()) + " vs " + to_string(f.shape()));
        if (!first) first = &f;
        const bool add_pe = pe && (!pe_block || *pe_block == i);
        blocks.push_back(add_pe ? add(f, *pe) : f);
    }
    if (blocks.empty()) throw PreconditionError("empty modality set: at least one modality must be present");
    if (blocks.size() == 1) return blocks.front();
    if (mode == CombineMode::Concat) return concat(blocks, 0);
    Tensor total = blocks.front();
    for (std::size_t i = 1; i < blocks.size(); ++i) total = add(total, blocks[i]);
    return scale(total, 1.0 / static_cast<double>(blocks.size()));
}

} // namespace xfi
