#pragma once

// Experiment orchestration: train, eval over every non-empty modality
// subset, existence-probability ablations and the variant comparison.

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "xfi/baselines.hpp"
#include "xfi/checkpoint.hpp"
#include "xfi/config.hpp"
#include "xfi/metrics.hpp"
#include "xfi/model.hpp"
#include "xfi/report.hpp"
#include "xfi/training.hpp"

namespace xfi {

struct Subset {
    std::vector<bool> present;
    std::string label; // "+"-joined ids, e.g. "I+L+R"
};

/// All 2^N - 1 non-empty subsets: by size, then lexicographically by
/// modality position.
inline std::vector<Subset> enumerate_subsets(const std::vector<std::string>& ids) {
    const std::size_t n = ids.size();
    if (n == 0) throw PreconditionError("no modalities to enumerate");
    if (n > 20) throw PreconditionError("too many modalities for exhaustive subset evaluation");
    std::vector<Subset> out;
    for (std::size_t size = 1; size <= n; ++size) {
        std::vector<std::size_t> idx(size);
        for (std::size_t k = 0; k < size; ++k) idx[k] = k;
        while (true) {
            Subset s{std::vector<bool>(n, false), ""};
            for (std::size_t k : idx) {
                s.present[k] = true;
                s.label += (s.label.empty() ? "" : "+") + ids[k];
            }
            out.push_back(std::move(s));
            std::size_t pos = size;
            while (pos > 0 && idx[pos - 1] == n - size + pos - 1) --pos;
            if (pos == 0) break;
            ++idx[pos - 1];
            for (std::size_t k = pos; k < size; ++k) idx[k] = idx[k - 1] + 1;
        }
    }
    return out;
}

inline Dataset build_dataset(const ExperimentConfig& c) { return generate_synthetic_dataset(c.data); }

inline std::uint64_t model_init_seed(const ExperimentConfig& c) { return c.train.seed ^ fnv1a("model.init"); }

inline XFiModel build_model(const ExperimentConfig& c) {
    return XFiModel(c.data.modalities, c.model, model_init_seed(c), c.data.seed);
}

inline TrainingHistory fit(XFiModel& model, const Dataset& data, const ExperimentConfig& c) {
    return train_model(model, data.train, c.train, c.existence_probs(), c.model.fusion.dropout_rate);
}

namespace detail {

inline std::vector<double> token_mean(const Tensor& embedding) {
    const std::size_t rows = embedding.dim(0), cols = embedding.dim(1);
    std::vector<double> out(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c] += embedding.values()[r * cols + c];
    for (double& v : out) v /= static_cast<double>(rows);
    return out;
}

} // namespace detail

/// Evaluates `forward(sample, present) -> ModelOutput` on every subset.
/// HPE rows: mpjpe, pa_mpjpe. HAR rows: accuracy, silhouette,
/// calinski_harabasz (on token-mean embeddings, true labels).
template <class Forward>
Report evaluate_subsets(Forward&& forward, const std::vector<ModalitySample>& eval, Task task,
                        const std::vector<Subset>& subsets, const std::string& task_label) {
    if (eval.empty()) throw PreconditionError("evaluation split is empty");
    Report report;
    NoGradGuard guard;
    for (const auto& s : subsets) {
        if (task == Task::Hpe) {
            KeypointMetrics total;
            for (const auto& sample : eval) {
                const ModelOutput out = forward(sample, s.present);
                const auto m = keypoint_metrics(out.prediction.values(), sample.keypoints);
                total.mpjpe += m.mpjpe;
                total.pa_mpjpe += m.pa_mpjpe;
            }
            const double n = static_cast<double>(eval.size());
            report.add(task_label, s.label, "mpjpe", total.mpjpe / n);
            report.add(task_label, s.label, "pa_mpjpe", total.pa_mpjpe / n);
        } else {
            std::vector<std::vector<double>> logits, embeddings;
            std::vector<std::size_t> labels;
            for (const auto& sample : eval) {
                const ModelOutput out = forward(sample, s.present);
                logits.push_back(out.prediction.values());
                embeddings.push_back(detail::token_mean(out.embedding));
                labels.push_back(sample.label);
            }
            const auto m = classification_metrics(logits, labels, embeddings);
            report.add(task_label, s.label, "accuracy", m.accuracy);
            report.add(task_label, s.label, "silhouette", m.silhouette);
            report.add(task_label, s.label, "calinski_harabasz", m.calinski_harabasz);
        }
    }
    return report;
}

inline Report evaluate_model(const XFiModel& model, const Dataset& data, const std::string& task_label) {
    const auto subsets = enumerate_subsets(data.modality_ids);
    return evaluate_subsets([&](const ModalitySample& s, const std::vector<bool>& p) { return model.forward(s, p); },
                            data.eval, model.config().task, subsets, task_label);
}

inline std::map<std::string, std::string> run_metadata(const ExperimentConfig& c) {
    return {{"config_digest", config_digest(c)},
            {"preset", c.preset},
            {"seed", std::to_string(c.train.seed)},
            {"data_seed", std::to_string(c.data.seed)},
            {"task", to_string(c.train.task)},
            {"variant", to_string(c.model.fusion.variant)}};
}

inline void ensure_directory(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create output directory '" + dir + "'");
}

inline std::string checkpoint_path(const std::string& dir) { return dir + "/checkpoint.xfi"; }

inline void write_history(const TrainingHistory& history, const std::string& path) {
    std::string text = "step,loss,present\n";
    for (const auto& e : history.entries) {
        std::string mask;
        for (bool b : e.present) mask += b ? '1' : '0';
        text += std::to_string(e.step) + "," + format_value(e.loss) + "," + mask + "\n";
    }
    write_text_file(path, text);
}

/// train: fits one model and writes checkpoint.xfi, history.csv and
/// train.json into `out_dir`.
inline TrainingHistory run_train(const ExperimentConfig& c, const std::string& out_dir) {
    c.validate();
    ensure_directory(out_dir);
    const Dataset data = build_dataset(c);
    XFiModel model = build_model(c);
    TrainingHistory history = fit(model, data, c);
    save_checkpoint(checkpoint_path(out_dir), model.params(), config_digest(c));
    write_history(history, out_dir + "/history.csv");
    nlohmann::ordered_json j;
    j["metadata"] = run_metadata(c);
    j["steps"] = history.entries.size();
    j["parameters"] = model.params().scalar_count();
    j["final_window_loss"] = std::stod(format_value(history.mean_loss(history.entries.size() >= 100 ? history.entries.size() - 100 : 0, 100)));
    j["occurrences"] = history.occurrences.counts;
    write_text_file(out_dir + "/train.json", j.dump(2) + "\n");
    return history;
}

/// eval: restores checkpoint.xfi from `out_dir` (digest must match) and
/// writes report.csv / report.json.
inline Report run_eval(const ExperimentConfig& c, const std::string& out_dir, const std::string& task_label = "") {
    c.validate();
    const std::string ckpt = checkpoint_path(out_dir);
    if (!std::filesystem::exists(ckpt)) throw IoError("no checkpoint at '" + ckpt + "': run train first");
    const Dataset data = build_dataset(c);
    XFiModel model = build_model(c);
    load_checkpoint(ckpt, model.params(), config_digest(c));
    Report report = evaluate_model(model, data, task_label.empty() ? to_string(c.train.task) : task_label);
    report.metadata = run_metadata(c);
    write_report(report, out_dir, "report");
    return report;
}

inline std::string prob_label(const std::vector<double>& probs) {
    std::string s = "p=";
    for (std::size_t i = 0; i < probs.size(); ++i) s += (i ? "/" : "") + format_value(probs[i]);
    return s;
}

/// ablate: one train+eval cycle per probability vector, each in
/// `out_dir/ablate_<k>`; combined rows carry task "<task>@p=a/b/c".
inline Report run_ablate(const ExperimentConfig& c, const std::string& out_dir) {
    c.validate();
    if (c.ablate_probs.empty()) throw ConfigError("ablate needs at least one probability vector ([ablate] probs)");
    ensure_directory(out_dir);
    Report combined;
    combined.metadata = run_metadata(c);
    for (std::size_t k = 0; k < c.ablate_probs.size(); ++k) {
        ExperimentConfig cell = c;
        for (std::size_t i = 0; i < cell.data.modalities.size(); ++i) cell.data.modalities[i].p_exist = c.ablate_probs[k][i];
        const std::string dir = out_dir + "/ablate_" + std::to_string(k);
        run_train(cell, dir);
        combined.append(run_eval(cell, dir, std::string(to_string(c.train.task)) + "@" + prob_label(c.ablate_probs[k])));
    }
    write_report(combined, out_dir, "ablate_report");
    return combined;
}

inline constexpr Variant kAllVariants[] = {Variant::IterativeSharedBlock, Variant::StackedFreshKV, Variant::StackedSharedKV,
                                          Variant::TransformerOnly};

/// Feature-concat baseline trained on one fixed subset.
inline FeatureConcatModel train_feature_concat(const ExperimentConfig& c, const Dataset& data, const Subset& subset) {
    FeatureConcatModel model(c.data.modalities, c.model, c.train.seed ^ fnv1a("baseline.init." + subset.label),
                             c.data.seed);
    TrainConfig t = c.train;
    t.steps = c.baseline_steps;
    std::vector<double> fixed;
    for (bool b : subset.present) fixed.push_back(b ? 1.0 : 0.0);
    train_model(model, data.train, t, fixed);
    return model;
}

/// variants: the four fusion variants plus both baselines on the same data
/// and seeds. Each variant gets `out_dir/<variant>`; combined rows carry
/// task "<task>@<variant>".
inline Report run_variants(const ExperimentConfig& c, const std::string& out_dir) {
    c.validate();
    ensure_directory(out_dir);
    const std::string task = to_string(c.train.task);
    Report combined;
    combined.metadata = run_metadata(c);
    combined.metadata.erase("variant");
    for (Variant v : kAllVariants) {
        ExperimentConfig cell = c;
        cell.model.fusion.variant = v;
        const std::string dir = out_dir + "/" + to_string(v);
        run_train(cell, dir);
        combined.append(run_eval(cell, dir, task + "@" + to_string(v)));
    }

    // Baselines: one feature-concat model per subset; the singleton models
    // double as the per-modality models averaged by decision-level fusion.
    const Dataset data = build_dataset(c);
    const auto subsets = enumerate_subsets(data.modality_ids);
    std::vector<std::unique_ptr<FeatureConcatModel>> per_subset;
    for (const auto& s : subsets) per_subset.push_back(std::make_unique<FeatureConcatModel>(train_feature_concat(c, data, s)));
    std::vector<const FeatureConcatModel*> singles(data.modality_ids.size(), nullptr);
    for (std::size_t k = 0; k < subsets.size(); ++k)
        if (std::count(subsets[k].present.begin(), subsets[k].present.end(), true) == 1)
            singles[static_cast<std::size_t>(std::find(subsets[k].present.begin(), subsets[k].present.end(), true) -
                                             subsets[k].present.begin())] = per_subset[k].get();

    for (std::size_t k = 0; k < subsets.size(); ++k) {
        const FeatureConcatModel* model = per_subset[k].get();
        combined.append(evaluate_subsets(
            [&](const ModalitySample& s, const std::vector<bool>& p) {
                return baseline_forward(BaselineMode::FeatureConcat, model, singles, s, p);
            },
            data.eval, c.train.task, {subsets[k]}, task + "@feature-concat"));
    }
    combined.append(evaluate_subsets(
        [&](const ModalitySample& s, const std::vector<bool>& p) {
            return baseline_forward(BaselineMode::DecisionAverage, nullptr, singles, s, p);
        },
        data.eval, c.train.task, subsets, task + "@decision-average"));
    write_report(combined, out_dir, "variants_report");
    return combined;
}

} // namespace xfi
