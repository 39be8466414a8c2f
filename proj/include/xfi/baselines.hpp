#pragma once

// The two fusion baselines: feature-level (concatenate encoded blocks, pool
// to n_f tokens, MLP head; one model per modality subset) and
// decision-level (average the outputs of single-modality models).

#include <cstdint>
#include <string>
#include <vector>

#include "xfi/encoding.hpp"
#include "xfi/model.hpp"

namespace xfi {

enum class BaselineMode { FeatureConcat, DecisionAverage };

class FeatureConcatModel {
public:
    FeatureConcatModel(std::vector<ModalityConfig> modalities, ModelConfig config, std::uint64_t init_seed,
                       std::uint64_t stub_seed)
        : modalities_(std::move(modalities)), config_(config), params_(init_seed) {
        const auto& f = config_.fusion;
        stubs_ = make_encoder_stubs(modalities_, f.n_f, config_.d_hid, stub_seed);
        for (const auto& m : modalities_)
            encoders_.push_back(ModalityEncoderParams::create(params_, "baseline.encoder." + m.id, config_.d_hid, f.d_f));
        head_ = FeedForwardParams::create(params_, "baseline.head", f.n_f * f.d_f, f.ffn_hidden, config_.output_dim());
    }

    FeatureConcatModel(const FeatureConcatModel&) = delete;
    FeatureConcatModel& operator=(const FeatureConcatModel&) = delete;
    FeatureConcatModel(FeatureConcatModel&&) = default;
    FeatureConcatModel& operator=(FeatureConcatModel&&) = default;

    const ModelConfig& config() const { return config_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    ModelOutput forward(const ModalitySample& sample, const std::vector<bool>& present,
                        const ForwardContext& = {}) const {
        if (present.size() != modalities_.size()) throw ShapeError("existence list width mismatch");
        FeatureSet features(modalities_.size());
        for (std::size_t i = 0; i < modalities_.size(); ++i)
            if (present[i]) features[i] = encode_modality(sample.raw.at(i), stubs_[i], encoders_[i]);
        const auto& f = config_.fusion;
        Tensor pooled = adaptive_avg_pool(assemble_multimodal_embedding(features, std::nullopt, CombineMode::Concat), f.n_f);
        Tensor out = head_(reshape(pooled, {1, f.n_f * f.d_f}));
        Tensor prediction = config_.task == Task::Hpe ? reshape(out, {config_.joints, 3}) : reshape(out, {config_.classes});
        return {prediction, pooled};
    }

private:
    std::vector<ModalityConfig> modalities_;
    ModelConfig config_;
    ParameterStore params_;
    std::vector<EncoderStub> stubs_;
    std::vector<ModalityEncoderParams> encoders_;
    FeedForwardParams head_;
};

/// Elementwise arithmetic mean (sum in order, then divide by the count).
inline Tensor average_outputs(const std::vector<Tensor>& outputs) {
    if (outputs.empty()) throw PreconditionError("empty modality set: nothing to average");
    std::vector<double> acc = outputs.front().values();
    for (std::size_t k = 1; k < outputs.size(); ++k) {
        if (outputs[k].shape() != outputs.front().shape()) throw ShapeError("decision outputs differ in shape");
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += outputs[k].values()[i];
    }
    const double n = static_cast<double>(outputs.size());
    for (double& v : acc) v /= n;
    return Tensor(outputs.front().shape(), std::move(acc));
}

/// Decision-level fusion: `singles[i]` is the model trained on modality i
/// alone; outputs (and embeddings) of the present modalities are averaged.
inline ModelOutput decision_average(const std::vector<const FeatureConcatModel*>& singles, const ModalitySample& sample,
                                    const std::vector<bool>& present) {
    if (singles.size() != present.size()) throw ShapeError("one single-modality model per modality is required");
    std::vector<Tensor> predictions, embeddings;
    for (std::size_t i = 0; i < present.size(); ++i) {
        if (!present[i]) continue;
        if (!singles[i]) throw PreconditionError("missing single-modality model for modality " + std::to_string(i));
        std::vector<bool> only(present.size(), false);
        only[i] = true;
        NoGradGuard guard;
        auto out = singles[i]->forward(sample, only);
        predictions.push_back(out.prediction);
        embeddings.push_back(out.embedding);
    }
    return {average_outputs(predictions), average_outputs(embeddings)};
}

/// Baseline dispatch used by the harness.
inline ModelOutput baseline_forward(BaselineMode mode, const FeatureConcatModel* subset_model,
                                    const std::vector<const FeatureConcatModel*>& singles, const ModalitySample& sample,
                                    const std::vector<bool>& present) {
    if (std::none_of(present.begin(), present.end(), [](bool b) { return b; }))
        throw PreconditionError("empty modality set");
    if (mode == BaselineMode::FeatureConcat) {
        if (!subset_model) throw PreconditionError("feature-concat baseline for this subset is not trained");
        return subset_model->forward(sample, present);
    }
    return decision_average(singles, sample, present);
}

} // namespace xfi
