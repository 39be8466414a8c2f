#pragma once

// Modality-invariant training: existence-list sampling, the binomial
// occurrence model, task losses, AdamW/SGD and the training loop.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "xfi/dataset.hpp"
#include "xfi/errors.hpp"
#include "xfi/model.hpp"
#include "xfi/ops.hpp"
#include "xfi/parameter_store.hpp"

namespace xfi {

struct ExistenceList {
    std::vector<bool> present;
    std::vector<double> probs;

    std::size_t count() const { return static_cast<std::size_t>(std::count(present.begin(), present.end(), true)); }
};

/// Independent Bernoulli(p_i) per modality, resampled until at least one
/// modality is present.
template <class Rng>
ExistenceList sample_existence_list(const std::vector<double>& probs, Rng& rng) {
    if (probs.empty()) throw PreconditionError("existence probabilities must cover at least one modality");
    bool any_positive = false;
    for (double p : probs) {
        if (!(p >= 0.0 && p <= 1.0)) throw PreconditionError("existence probability outside [0,1]");
        any_positive |= p > 0.0;
    }
    if (!any_positive) throw PreconditionError("all existence probabilities are zero: a non-empty list is impossible");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    ExistenceList out{std::vector<bool>(probs.size()), probs};
    do {
        for (std::size_t i = 0; i < probs.size(); ++i) out.present[i] = unit(rng) < probs[i];
    } while (out.count() == 0);
    return out;
}

/// P(K_1=k_1, ..., K_n=k_n) = prod_i C(m,k_i) p_i^k_i (1-p_i)^(m-k_i),
/// accumulated in log space.
inline double binomial_count_pmf(const std::vector<std::size_t>& counts, std::size_t m, const std::vector<double>& probs) {
    if (counts.size() != probs.size()) throw ShapeError("count and probability vectors differ in length");
    double log_p = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const std::size_t k = counts[i];
        const double p = probs[i];
        if (k > m) throw PreconditionError("occurrence count " + std::to_string(k) + " exceeds m=" + std::to_string(m));
        if (!(p >= 0.0 && p <= 1.0)) throw PreconditionError("probability outside [0,1]");
        if ((p == 0.0 && k > 0) || (p == 1.0 && k < m)) return 0.0;
        log_p += std::lgamma(static_cast<double>(m) + 1) - std::lgamma(static_cast<double>(k) + 1) -
                 std::lgamma(static_cast<double>(m - k) + 1);
        if (k > 0) log_p += static_cast<double>(k) * std::log(p);
        if (m > k) log_p += static_cast<double>(m - k) * std::log1p(-p);
    }
    return std::exp(log_p);
}

/// Occurrence counts k_i of each modality over a run of sampled lists.
struct OccurrenceStats {
    std::size_t iterations = 0; // m
    std::vector<std::size_t> counts;

    void record(const ExistenceList& list) {
        if (counts.empty()) counts.assign(list.present.size(), 0);
        for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += list.present[i];
        ++iterations;
    }
};

/// HPE: mean over joints of squared Euclidean distance. HAR: cross-entropy
/// of raw logits against the class index.
inline Tensor compute_loss(const Tensor& prediction, const ModalitySample& target, Task task) {
    if (task == Task::Hpe) {
        if (prediction.rank() != 2 || prediction.dim(1) != 3 || prediction.size() != target.keypoints.size())
            throw ShapeError("keypoint loss: prediction " + to_string(prediction.shape()) + " vs " +
                             std::to_string(target.keypoints.size() / 3) + "x3 target");
        Tensor diff = sub(prediction, Tensor(prediction.shape(), target.keypoints));
        return scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(prediction.dim(0)));
    }
    return cross_entropy(prediction, target.label);
}

enum class OptimizerKind { AdamW, Sgd };

struct TrainConfig {
    Task task = Task::Hpe;
    double learning_rate = 1e-3;
    std::size_t batch_size = 16;
    std::size_t steps = 2000;
    OptimizerKind optimizer = OptimizerKind::AdamW;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    // SGD step-decay schedule: lr * gamma^(step / decay_every); 0 disables.
    std::size_t lr_decay_every = 0;
    double lr_decay_gamma = 0.1;
    double momentum = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
        if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("betas must lie in [0,1)");
        if (!(eps > 0.0)) throw ConfigError("eps must be positive");
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    }
};

struct OptimState {
    struct Moments {
        std::vector<double> first;
        std::vector<double> second;
        std::size_t step = 0; // updates applied to this parameter
    };
    std::map<std::string, Moments> moments;
    std::size_t step = 0;
};

namespace detail {

inline void check_finite_grads(const ParameterStore& params) {
    for (const auto& [name, t] : params)
        for (double g : t.grad())
            if (!std::isfinite(g)) throw NonFiniteError("non-finite gradient for parameter " + name);
}

} // namespace detail

/// Decoupled weight decay Adam:
///   m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2
///   theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta
/// Parameters backward never reached (no gradient at all, e.g. the encoder
/// of an absent modality) are skipped: no decay, no moment update. Bias
/// correction counts each parameter's own updates.
inline void adamw_step(ParameterStore& params, OptimState& state, const TrainConfig& config, double lr) {
    detail::check_finite_grads(params);
    ++state.step;
    for (auto& [name, tensor] : params) {
        if (!tensor.has_grad()) continue;
        auto& mom = state.moments[name];
        if (mom.first.size() != tensor.size()) {
            mom.first.assign(tensor.size(), 0.0);
            mom.second.assign(tensor.size(), 0.0);
        }
        const double t = static_cast<double>(++mom.step);
        const double c1 = 1.0 - std::pow(config.beta1, t);
        const double c2 = 1.0 - std::pow(config.beta2, t);
        const std::vector<double> g = tensor.grad();
        auto& theta = tensor.data();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            mom.first[i] = config.beta1 * mom.first[i] + (1.0 - config.beta1) * g[i];
            mom.second[i] = config.beta2 * mom.second[i] + (1.0 - config.beta2) * g[i] * g[i];
            const double mhat = mom.first[i] / c1;
            const double vhat = mom.second[i] / c2;
            theta[i] = theta[i] - lr * (mhat / (std::sqrt(vhat) + config.eps)) - lr * config.weight_decay * theta[i];
        }
    }
}

/// Plain SGD with optional momentum and decoupled weight decay; parameters
/// without a gradient are skipped as in adamw_step.
inline void sgd_step(ParameterStore& params, OptimState& state, const TrainConfig& config, double lr) {
    detail::check_finite_grads(params);
    ++state.step;
    for (auto& [name, tensor] : params) {
        if (!tensor.has_grad()) continue;
        auto& mom = state.moments[name];
        if (mom.first.size() != tensor.size()) mom.first.assign(tensor.size(), 0.0);
        const std::vector<double> g = tensor.grad();
        auto& theta = tensor.data();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            mom.first[i] = config.momentum * mom.first[i] + g[i];
            theta[i] = theta[i] - lr * mom.first[i] - lr * config.weight_decay * theta[i];
        }
    }
}

inline double scheduled_learning_rate(const TrainConfig& config, std::size_t step) {
    if (config.optimizer != OptimizerKind::Sgd || config.lr_decay_every == 0) return config.learning_rate;
    return config.learning_rate * std::pow(config.lr_decay_gamma, static_cast<double>(step / config.lr_decay_every));
}

struct HistoryEntry {
    std::size_t step = 0;
    double loss = 0.0;
    std::vector<bool> present;
};

struct TrainingHistory {
    std::vector<HistoryEntry> entries;
    OccurrenceStats occurrences;

    /// Mean loss over a window of entries [begin, begin+count).
    double mean_loss(std::size_t begin, std::size_t count) const {
        double total = 0.0;
        std::size_t n = 0;
        for (std::size_t i = begin; i < std::min(entries.size(), begin + count); ++i, ++n) total += entries[i].loss;
        return n ? total / static_cast<double>(n) : 0.0;
    }
};

/// Anything trainable: exposes its parameters and a forward over one sample
/// and existence list.
template <class M>
concept TrainableModel = requires(M& m, const M& cm, const ModalitySample& s, const std::vector<bool>& present,
                                  const ForwardContext& ctx) {
    { m.params() } -> std::same_as<ParameterStore&>;
    { cm.forward(s, present, ctx) } -> std::same_as<ModelOutput>;
};

/// Per step: sample one existence list for the batch, draw batch indices,
/// accumulate gradients of the mean batch loss, then take one optimizer step.
/// Deterministic given config.seed.
///
/// Batch indices and existence lists come from separate streams, and each
/// step's existence draws from its own stream (seeded by step). Runs that
/// differ only in the probabilities therefore see the same samples in the
/// same order, and raising one p_i only switches modality i on in extra
/// steps; everything else is held fixed.
template <TrainableModel Model>
TrainingHistory train_model(Model& model, const std::vector<ModalitySample>& data, const TrainConfig& config,
                            const std::vector<double>& existence_probs, double dropout_rate = 0.0) {
    config.validate();
    if (data.empty()) throw PreconditionError("training set is empty");
    const std::uint64_t existence_seed = config.seed ^ fnv1a("train.existence");
    std::mt19937_64 batch_rng(config.seed ^ fnv1a("train.batches"));
    std::mt19937_64 dropout_rng(config.seed ^ fnv1a("train.dropout"));
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    ForwardContext ctx{dropout_rate > 0.0, &dropout_rng, nullptr};
    OptimState state;
    TrainingHistory history;
    const double inv_batch = 1.0 / static_cast<double>(config.batch_size);

    for (std::size_t step = 0; step < config.steps; ++step) {
        std::seed_seq step_seed{static_cast<std::uint32_t>(existence_seed), static_cast<std::uint32_t>(existence_seed >> 32),
                                static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32)};
        std::mt19937_64 existence_rng(step_seed);
        const ExistenceList existence = sample_existence_list(existence_probs, existence_rng);
        history.occurrences.record(existence);
        model.params().clear_grads();
        double batch_loss = 0.0;
        for (std::size_t b = 0; b < config.batch_size; ++b) {
            const ModalitySample& sample = data[pick(batch_rng)];
            Tensor loss;
            try {
                loss = compute_loss(model.forward(sample, existence.present, ctx).prediction, sample, config.task);
            } catch (const NonFiniteError& e) {
                throw DivergenceError(step, e.what());
            }
            batch_loss += loss.item();
            backward(scale(loss, inv_batch));
        }
        batch_loss *= inv_batch;
        if (!std::isfinite(batch_loss)) throw DivergenceError(step, "non-finite batch loss");
        history.entries.push_back({step, batch_loss, existence.present});
        const double lr = scheduled_learning_rate(config, step);
        try {
            if (config.optimizer == OptimizerKind::AdamW)
                adamw_step(model.params(), state, config, lr);
            else
                sgd_step(model.params(), state, config, lr);
        } catch (const NonFiniteError& e) {
            throw DivergenceError(step, e.what());
        }
    }
    return history;
}

} // namespace xfi
