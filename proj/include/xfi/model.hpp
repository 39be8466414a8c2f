#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xfi/dataset.hpp"
#include "xfi/encoding.hpp"
#include "xfi/parameter_store.hpp"
#include "xfi/xfusion.hpp"

namespace xfi {

struct ModelConfig {
    FusionConfig fusion;
    std::size_t d_hid = 16;
    Task task = Task::Hpe;
    std::size_t joints = 17;
    std::size_t classes = 8;
    bool pe_all_blocks = true; // false: add the positional encoding to the spatial block only

    std::size_t output_dim() const { return task == Task::Hpe ? 3 * joints : classes; }
};

/// Task prediction plus the unified embedding it was computed from.
struct ModelOutput {
    Tensor prediction;
    Tensor embedding; // n_f x d_f
};

inline std::vector<std::string> modality_ids(const std::vector<ModalityConfig>& modalities) {
    std::vector<std::string> ids;
    for (const auto& m : modalities) ids.push_back(m.id);
    return ids;
}

/// Stub seeds depend on the data seed and modality id only, so every model
/// trained on one dataset sees the same frozen extractors.
inline std::vector<EncoderStub> make_encoder_stubs(const std::vector<ModalityConfig>& modalities, std::size_t n_f,
                                                   std::size_t d_hid, std::uint64_t stub_seed) {
    std::vector<EncoderStub> stubs;
    for (const auto& m : modalities) stubs.emplace_back(m.raw_dim, n_f, d_hid, stub_seed ^ fnv1a("stub." + m.id));
    return stubs;
}

/// Full modality-invariant model: frozen stubs, per-modality projections,
/// optional positional encoding, a fusion variant and the task head. One
/// parameter set serves every non-empty modality subset.
class XFiModel {
public:
    XFiModel(std::vector<ModalityConfig> modalities, ModelConfig config, std::uint64_t init_seed,
             std::uint64_t stub_seed)
        : modalities_(std::move(modalities)), config_(config), params_(init_seed) {
        config_.fusion.validate();
        if (modalities_.empty()) throw ConfigError("model needs at least one modality");
        const auto& f = config_.fusion;
        stubs_ = make_encoder_stubs(modalities_, f.n_f, config_.d_hid, stub_seed);
        for (std::size_t i = 0; i < modalities_.size(); ++i) {
            encoders_.push_back(ModalityEncoderParams::create(params_, "encoder." + modalities_[i].id, config_.d_hid, f.d_f));
            if (modalities_[i].is_spatial) spatial_ = i;
        }
        if (f.positional_encoding) {
            if (!spatial_) throw ConfigError("positional encoding enabled but no modality is marked spatial");
            pe_ = PositionalEncodingParams::create(params_, "encoder.pe", modalities_[*spatial_].raw_dim, f.n_f, f.d_f);
        }
        fusion_ = FusionParams::create(params_, f, modality_ids(modalities_));
        head_ = TaskHeadParams::create(params_, "head", f.d_f, f.ffn_hidden, config_.task, config_.output_dim());
    }

    XFiModel(const XFiModel&) = delete;
    XFiModel& operator=(const XFiModel&) = delete;
    XFiModel(XFiModel&&) = default;
    XFiModel& operator=(XFiModel&&) = default;

    const ModelConfig& config() const { return config_; }
    const std::vector<ModalityConfig>& modalities() const { return modalities_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }
    const std::vector<EncoderStub>& stubs() const { return stubs_; }
    const FusionParams& fusion() const { return fusion_; }
    const TaskHeadParams& head() const { return head_; }

    FeatureSet encode(const ModalitySample& sample, const std::vector<bool>& present) const {
        check_present(sample, present);
        FeatureSet features(modalities_.size());
        for (std::size_t i = 0; i < modalities_.size(); ++i)
            if (present[i]) features[i] = encode_modality(sample.raw[i], stubs_[i], encoders_[i]);
        return features;
    }

    std::optional<Tensor> positional(const ModalitySample& sample, const std::vector<bool>& present) const {
        if (!config_.fusion.positional_encoding) return std::nullopt;
        std::optional<std::span<const double>> raw;
        if (present[*spatial_]) raw = std::span<const double>(sample.raw[*spatial_]);
        return positional_encoding(raw, true, &*pe_);
    }

    ModelOutput forward(const ModalitySample& sample, const std::vector<bool>& present,
                        const ForwardContext& ctx = {}) const {
        FeatureSet features = encode(sample, present);
        std::optional<std::size_t> pe_block;
        if (!config_.pe_all_blocks && spatial_) pe_block = spatial_;
        Tensor emb_cm = fuse(features, positional(sample, present), config_.fusion, fusion_, ctx, pe_block);
        return {task_head_forward(emb_cm, head_, config_.task), emb_cm};
    }

private:
    void check_present(const ModalitySample& sample, const std::vector<bool>& present) const {
        if (present.size() != modalities_.size() || sample.raw.size() != modalities_.size())
            throw ShapeError("existence list / sample width does not match the " + std::to_string(modalities_.size()) +
                             " configured modalities");
        if (std::none_of(present.begin(), present.end(), [](bool b) { return b; }))
            throw PreconditionError("empty modality set: at least one modality must be present");
    }

    std::vector<ModalityConfig> modalities_;
    ModelConfig config_;
    ParameterStore params_;
    std::vector<EncoderStub> stubs_;
    std::vector<ModalityEncoderParams> encoders_;
    std::optional<std::size_t> spatial_;
    std::optional<PositionalEncodingParams> pe_;
    FusionParams fusion_;
    TaskHeadParams head_;
};

} // namespace xfi
