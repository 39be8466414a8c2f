#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <cstring>

#include "xfi/experiment.hpp"

using namespace xfi;

namespace {

SyntheticDataConfig two_modalities(double sigma_a, double sigma_b, std::vector<bool> mask_a, std::vector<bool> mask_b) {
    SyntheticDataConfig d;
    d.latent_dim = 12;
    d.n_train = 400;
    d.n_eval = 200;
    d.joints = 17;
    d.classes = 4;
    d.seed = 11;
    d.modalities = {{"A", 24, std::move(mask_a), sigma_a, 0.5, false}, {"B", 24, std::move(mask_b), sigma_b, 0.5, false}};
    return d;
}

// Rows of [raw of the chosen modalities | 1] and the keypoint targets.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> design(const std::vector<ModalitySample>& split,
                                                   const std::vector<std::size_t>& use) {
    std::size_t width = 1;
    for (std::size_t m : use) width += split.front().raw[m].size();
    Eigen::MatrixXd x(split.size(), width), y(split.size(), split.front().keypoints.size());
    for (std::size_t i = 0; i < split.size(); ++i) {
        std::size_t c = 0;
        for (std::size_t m : use)
            for (double v : split[i].raw[m]) x(i, c++) = v;
        x(i, c) = 1.0;
        for (std::size_t k = 0; k < split[i].keypoints.size(); ++k) y(i, k) = split[i].keypoints[k];
    }
    return {x, y};
}

// Ridge regression fitted on train, mean squared keypoint error on eval.
double ridge_eval_error(const Dataset& data, const std::vector<std::size_t>& use, double lambda) {
    const auto [xt, yt] = design(data.train, use);
    const auto [xe, ye] = design(data.eval, use);
    const Eigen::MatrixXd gram = xt.transpose() * xt + lambda * Eigen::MatrixXd::Identity(xt.cols(), xt.cols());
    const Eigen::MatrixXd w = gram.ldlt().solve(xt.transpose() * yt);
    return (xe * w - ye).squaredNorm() / static_cast<double>(ye.size());
}

ExperimentConfig small_four_modality(Task task) {
    ExperimentConfig c = desk_preset();
    c.data.n_train = 32;
    c.data.n_eval = 8;
    auto& f = c.model.fusion;
    f.n_f = 4;
    f.d_f = 8;
    f.heads = 2;
    f.scale = 0.5;
    f.ffn_hidden = 16;
    c.model.d_hid = 6;
    c.train.task = c.model.task = task;
    c.train.batch_size = 4;
    c.baseline_steps = 3;
    return c;
}

} // namespace

TEST(SyntheticData, NoiselessFullMaskDeterminesKeypoints) {
    const auto d = generate_synthetic_dataset(two_modalities(0.0, 0.5, std::vector<bool>(12, true),
                                                             std::vector<bool>(12, true)));
    const auto [xt, yt] = design(d.train, {0});
    const auto [xe, ye] = design(d.eval, {0});
    const Eigen::MatrixXd w = xt.completeOrthogonalDecomposition().solve(yt);
    EXPECT_LT((xe * w - ye).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(SyntheticData, DisjointMasksAreComplementary) {
    std::vector<bool> low(12, false), high(12, false);
    for (std::size_t i = 0; i < 6; ++i) low[i] = high[i + 6] = true;
    const auto d = generate_synthetic_dataset(two_modalities(0.1, 0.1, low, high));
    const double a = ridge_eval_error(d, {0}, 1e-3), b = ridge_eval_error(d, {1}, 1e-3);
    const double joint = ridge_eval_error(d, {0, 1}, 1e-3);
    EXPECT_LT(joint, a);
    EXPECT_LT(joint, b);
    EXPECT_LT(joint, 0.5 * std::min(a, b));
}

TEST(SyntheticData, SameSeedIsBitIdentical) {
    const auto cfg = desk_preset().data;
    const auto a = generate_synthetic_dataset(cfg), b = generate_synthetic_dataset(cfg);
    ASSERT_EQ(a.train.size(), b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        EXPECT_EQ(a.train[i].keypoints, b.train[i].keypoints);
        EXPECT_EQ(a.train[i].raw, b.train[i].raw);
        EXPECT_EQ(a.train[i].label, b.train[i].label);
    }
    auto other = cfg;
    other.seed += 1;
    EXPECT_NE(generate_synthetic_dataset(other).train[0].keypoints, a.train[0].keypoints);
}

TEST(SyntheticData, ShapesSplitsAndLabels) {
    const auto cfg = desk_preset().data;
    const auto d = generate_synthetic_dataset(cfg);
    EXPECT_EQ(d.train.size(), cfg.n_train);
    EXPECT_EQ(d.eval.size(), cfg.n_eval);
    EXPECT_EQ(d.modality_ids, (std::vector<std::string>{"I", "L", "R", "W"}));
    std::vector<std::size_t> per_class(cfg.classes, 0);
    for (const auto& s : d.train) {
        EXPECT_EQ(s.keypoints.size(), 3 * cfg.joints);
        ASSERT_EQ(s.raw.size(), 4u);
        for (const auto& r : s.raw) EXPECT_EQ(r.size(), 24u);
        ASSERT_LT(s.label, cfg.classes);
        ++per_class[s.label];
    }
    for (std::size_t n : per_class) EXPECT_GT(n, 0u);
    EXPECT_NE(d.train[0].keypoints, d.eval[0].keypoints);
}

TEST(SyntheticData, InvalidConfigs) {
    auto uncovered = two_modalities(0.1, 0.1, std::vector<bool>(12, false), std::vector<bool>(12, false));
    uncovered.modalities[0].informative_mask[0] = true;
    EXPECT_THROW(generate_synthetic_dataset(uncovered), ConfigError);
    auto few_joints = two_modalities(0.1, 0.1, std::vector<bool>(12, true), std::vector<bool>(12, true));
    few_joints.joints = 2;
    EXPECT_THROW(generate_synthetic_dataset(few_joints), ConfigError);
    auto one_class = few_joints;
    one_class.joints = 17;
    one_class.classes = 1;
    EXPECT_THROW(generate_synthetic_dataset(one_class), ConfigError);
}

TEST(Baselines, FeatureConcatShapesOverAllSubsets) {
    for (Task task : {Task::Hpe, Task::Har}) {
        const auto c = small_four_modality(task);
        const Dataset data = build_dataset(c);
        FeatureConcatModel model(c.data.modalities, c.model, 5, c.data.seed);
        const auto subsets = enumerate_subsets(data.modality_ids);
        ASSERT_EQ(subsets.size(), 15u);
        for (const auto& s : subsets) {
            const auto out = model.forward(data.eval[0], s.present);
            EXPECT_EQ(out.embedding.shape(), (std::vector<std::size_t>{4, 8}));
            if (task == Task::Hpe)
                EXPECT_EQ(out.prediction.shape(), (std::vector<std::size_t>{17, 3}));
            else
                EXPECT_EQ(out.prediction.shape(), (std::vector<std::size_t>{8}));
        }
    }
}

TEST(Baselines, DecisionAverageOfOneIsThatModel) {
    const auto c = small_four_modality(Task::Hpe);
    const Dataset data = build_dataset(c);
    FeatureConcatModel single(c.data.modalities, c.model, 7, c.data.seed);
    const std::vector<const FeatureConcatModel*> singles = {nullptr, &single, nullptr, nullptr};
    const std::vector<bool> only = {false, true, false, false};
    const auto avg = decision_average(singles, data.eval[0], only);
    const auto direct = single.forward(data.eval[0], only);
    EXPECT_EQ(avg.prediction.values(), direct.prediction.values());
    EXPECT_EQ(avg.embedding.values(), direct.embedding.values());
}

TEST(Baselines, OppositeOutputsAverageToZero) {
    const Tensor y({2, 3}, {1.5, -2.0, 0.25, 3.0, 7.0, -0.5});
    std::vector<double> flipped = y.values();
    for (double& v : flipped) v = -v;
    const Tensor neg({2, 3}, flipped);
    const Tensor avg = average_outputs({y, neg});
    for (double v : avg.values()) EXPECT_EQ(v, 0.0);
}

TEST(Baselines, DecisionAverageIsExactMean) {
    const auto c = small_four_modality(Task::Har);
    const Dataset data = build_dataset(c);
    std::vector<std::unique_ptr<FeatureConcatModel>> models;
    std::vector<const FeatureConcatModel*> singles;
    for (std::uint64_t k = 0; k < 4; ++k) {
        models.push_back(std::make_unique<FeatureConcatModel>(c.data.modalities, c.model, 100 + k, c.data.seed));
        singles.push_back(models.back().get());
    }
    for (const auto& s : enumerate_subsets(data.modality_ids)) {
        for (const auto& sample : data.eval) {
            std::vector<double> sum;
            double count = 0.0;
            for (std::size_t m = 0; m < 4; ++m) {
                if (!s.present[m]) continue;
                std::vector<bool> only(4, false);
                only[m] = true;
                const auto v = singles[m]->forward(sample, only).prediction.values();
                if (sum.empty())
                    sum = v;
                else
                    for (std::size_t i = 0; i < v.size(); ++i) sum[i] += v[i];
                count += 1.0;
            }
            for (double& v : sum) v /= count;
            const auto avg = decision_average(singles, sample, s.present).prediction.values();
            ASSERT_EQ(avg.size(), sum.size());
            EXPECT_EQ(std::memcmp(avg.data(), sum.data(), sum.size() * sizeof(double)), 0) << s.label;
        }
    }
}

TEST(Baselines, Errors) {
    const auto c = small_four_modality(Task::Hpe);
    const Dataset data = build_dataset(c);
    FeatureConcatModel model(c.data.modalities, c.model, 5, c.data.seed);
    const std::vector<const FeatureConcatModel*> singles = {&model, nullptr, nullptr, nullptr};
    const std::vector<bool> none(4, false);
    EXPECT_THROW(baseline_forward(BaselineMode::FeatureConcat, &model, singles, data.eval[0], none), PreconditionError);
    EXPECT_THROW(baseline_forward(BaselineMode::DecisionAverage, nullptr, singles, data.eval[0], none),
                 PreconditionError);
    EXPECT_THROW(decision_average(singles, data.eval[0], {true, true, false, false}), PreconditionError);
    EXPECT_THROW(average_outputs({}), PreconditionError);
    EXPECT_THROW(average_outputs({Tensor({2}, {1.0, 2.0}), Tensor({3}, {1.0, 2.0, 3.0})}), ShapeError);
}

TEST(Baselines, FeatureConcatTrainsOnFixedSubset) {
    const auto c = small_four_modality(Task::Hpe);
    const Dataset data = build_dataset(c);
    const auto subsets = enumerate_subsets(data.modality_ids);
    const auto before = FeatureConcatModel(c.data.modalities, c.model, c.train.seed ^ fnv1a("baseline.init.L"),
                                           c.data.seed).params().at("baseline.encoder.L.proj.weight").values();
    const FeatureConcatModel trained = train_feature_concat(c, data, subsets[1]);
    EXPECT_NE(trained.params().at("baseline.encoder.L.proj.weight").values(), before);
    // Modalities outside the subset are never updated.
    const auto fresh = FeatureConcatModel(c.data.modalities, c.model, c.train.seed ^ fnv1a("baseline.init.L"),
                                          c.data.seed);
    EXPECT_EQ(trained.params().at("baseline.encoder.I.proj.bias").values(),
              fresh.params().at("baseline.encoder.I.proj.bias").values());
}
