#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "clustering_oracle.hpp"
#include "procrustes_oracle.hpp"
#include "xfi/metrics.hpp"

using namespace xfi;

namespace {

std::vector<double> random_points(std::mt19937_64& rng, std::size_t joints) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> p(3 * joints);
    for (double& v : p) v = n(rng);
    return p;
}

const std::vector<std::vector<double>> kTwelve = {
    {2.041, -2.556, 0.418}, {-0.568, -0.453, -0.216}, {-2.02, -0.232, -0.865}, {3.323, 0.226, -0.353},
    {-0.281, -0.668, -1.055}, {-0.391, 0.482, -0.239}, {0.958, -0.2, 0.024},   {1.546, 0.545, -0.505},
    {-0.183, 0.541, 1.935},  {-0.27, -0.244, 1.002},  {-0.886, -0.292, 0.883}, {0.58, 0.092, 0.67}};
const std::vector<std::size_t> kTwelveLabels = {0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3};

} // namespace

TEST(Keypoints, IdenticalPosesScoreZero) {
    std::mt19937_64 rng(1);
    const auto p = random_points(rng, 17);
    const auto m = keypoint_metrics(p, p);
    EXPECT_EQ(m.mpjpe, 0.0);
    EXPECT_LT(m.pa_mpjpe, 1e-12);
}

TEST(Keypoints, MpjpeIsMeanJointDistance) {
    const std::vector<double> gt = {0, 0, 0, 1, 0, 0, 0, 1, 0};
    const std::vector<double> pred = {3, 4, 0, 1, 0, 0, 0, 1, 2};
    EXPECT_DOUBLE_EQ(keypoint_metrics(pred, gt).mpjpe, (5.0 + 0.0 + 2.0) / 3.0);
}

TEST(Keypoints, SimilarityTransformIsRemoved) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const auto gt = random_points(rng, 17);
        const auto pred = oracle::similarity_transform(gt, oracle::random_rotation(rng),
                                                       std::uniform_real_distribution<double>(0.2, 5.0)(rng),
                                                       {1.5, -3.0, 0.25});
        const auto m = keypoint_metrics(pred, gt);
        EXPECT_LT(m.pa_mpjpe, 1e-8);
        EXPECT_GT(m.mpjpe, 0.0);
    }
}

TEST(Keypoints, AlignedErrorIsInvariantToTransformingPrediction) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const auto gt = random_points(rng, 17);
        const auto pred = random_points(rng, 17);
        const auto moved = oracle::similarity_transform(pred, oracle::random_rotation(rng),
                                                        std::uniform_real_distribution<double>(0.2, 5.0)(rng),
                                                        {-2.0, 0.5, 7.0});
        EXPECT_NEAR(keypoint_metrics(moved, gt).pa_mpjpe, keypoint_metrics(pred, gt).pa_mpjpe, 1e-8);
    }
}

TEST(Keypoints, AlignmentNeverIncreasesError) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t joints = 3 + trial % 15;
        const auto gt = random_points(rng, joints);
        auto pred = gt;
        std::normal_distribution<double> noise(0.0, trial % 2 ? 0.1 : 2.0);
        for (double& v : pred) v += noise(rng);
        const auto m = keypoint_metrics(pred, gt);
        EXPECT_LE(m.pa_mpjpe, m.mpjpe);
    }
}

TEST(Keypoints, ReflectionIsNotAllowed) {
    std::mt19937_64 rng(5);
    const auto gt = random_points(rng, 6);
    auto mirrored = gt;
    for (std::size_t j = 0; j < 6; ++j) mirrored[3 * j] = -mirrored[3 * j];
    EXPECT_GT(keypoint_metrics(mirrored, gt).pa_mpjpe, 1e-3);
}

TEST(Keypoints, MatchesBruteForceRotationSearch) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 5; ++trial) {
        const auto gt = random_points(rng, 3);
        const auto pred = random_points(rng, 3);
        EXPECT_NEAR(keypoint_metrics(pred, gt).pa_mpjpe, oracle::brute_force_pa_mpjpe(pred, gt), 1e-3);
    }
}

TEST(Keypoints, DegenerateAndMalformedInputs) {
    const std::vector<double> same = {1, 1, 1, 1, 1, 1, 1, 1, 1};
    const std::vector<double> gt = {0, 0, 0, 1, 0, 0, 0, 1, 0};
    EXPECT_THROW(keypoint_metrics(same, gt), PreconditionError);
    EXPECT_THROW(keypoint_metrics(std::vector<double>(6, 0.0), std::vector<double>(6, 0.0)), PreconditionError);
    EXPECT_THROW(keypoint_metrics(std::vector<double>(9, 0.0), std::vector<double>(12, 0.0)), ShapeError);
}

TEST(Classification, Accuracy) {
    EXPECT_EQ(accuracy({{0.1, 0.9}, {2.0, -1.0}, {0.0, 3.0}}, {1, 0, 1}), 1.0);
    EXPECT_DOUBLE_EQ(accuracy({{0.1, 0.9}, {2.0, -1.0}, {0.0, 3.0}, {1.0, 0.0}}, {1, 1, 1, 1}), 0.5);
    EXPECT_THROW(accuracy({{1.0, 0.0}}, {0, 1}), ShapeError);
}

TEST(Classification, TwoTightClusters) {
    const std::vector<std::vector<double>> x = {{0, 0}, {0, 1}, {10, 10}, {10, 11}};
    const std::vector<std::size_t> y = {0, 0, 1, 1};
    // Reference values from an established implementation.
    EXPECT_NEAR(silhouette_score(x, y), 0.9292895427118657, 1e-12);
    EXPECT_NEAR(calinski_harabasz(x, y), 400.0, 1e-9);
    // The first point alone: a = 1, b = (sqrt(200) + sqrt(221)) / 2, s ~ 0.931.
    EXPECT_NEAR(oracle::silhouette_of(x, y, 0), 1.0 - 2.0 / (std::sqrt(200.0) + std::sqrt(221.0)), 1e-12);
}

TEST(Classification, OverlappingClustersWithSingleton) {
    EXPECT_NEAR(silhouette_score(kTwelve, kTwelveLabels), -0.2479101904203754, 1e-12);
    EXPECT_NEAR(calinski_harabasz(kTwelve, kTwelveLabels), 0.8197699965789833, 1e-12);
    EXPECT_EQ(oracle::silhouette_of(kTwelve, kTwelveLabels, 11), 0.0);
}

TEST(Classification, ClusteringMatchesStraightLineOracle) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t points = 5 + trial % 16, dim = 1 + trial % 5, k = 2 + trial % 3;
        std::vector<std::vector<double>> x(points, std::vector<double>(dim));
        std::vector<std::size_t> y(points);
        for (std::size_t i = 0; i < points; ++i) {
            y[i] = i < k ? i : rng() % k;
            for (double& v : x[i]) v = n(rng) + 2.0 * static_cast<double>(y[i]);
        }
        EXPECT_EQ(silhouette_score(x, y), oracle::silhouette(x, y)) << "trial " << trial;
        EXPECT_EQ(calinski_harabasz(x, y), oracle::calinski_harabasz(x, y)) << "trial " << trial;
    }
}

TEST(Classification, ClusteringErrors) {
    EXPECT_THROW(silhouette_score({{0.0}, {1.0}}, {0, 0}), PreconditionError);
    EXPECT_THROW(calinski_harabasz({{0.0}, {1.0}}, {0, 0}), PreconditionError);
    EXPECT_THROW(silhouette_score({{0.0}, {1.0, 2.0}}, {0, 1}), ShapeError);
    EXPECT_THROW(silhouette_score({{0.0}}, {0, 1}), ShapeError);
}

TEST(Classification, CombinedMetrics) {
    const std::vector<std::vector<double>> x = {{0, 0}, {0, 1}, {10, 10}, {10, 11}};
    const auto m = classification_metrics({{1, 0}, {1, 0}, {0, 1}, {1, 0}}, {0, 0, 1, 1}, x);
    EXPECT_DOUBLE_EQ(m.accuracy, 0.75);
    EXPECT_EQ(m.silhouette, silhouette_score(x, {0, 0, 1, 1}));
    EXPECT_EQ(m.calinski_harabasz, calinski_harabasz(x, {0, 0, 1, 1}));
}
