#pragma once

// Evaluation metrics: MPJPE / PA-MPJPE for keypoints; accuracy, silhouette
// and Calinski-Harabasz for classification embeddings.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <vector>

#include "xfi/errors.hpp"

namespace xfi {

struct KeypointMetrics {
    double mpjpe = 0.0;
    double pa_mpjpe = 0.0;
};

using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

inline double mean_joint_distance(const Points3& a, const Points3& b) {
    return (a - b).rowwise().norm().mean();
}

/// Optimal similarity transform (rotation without reflection, uniform scale,
/// translation) mapping `pred` onto `gt` in the least-squares sense.
inline Points3 procrustes_align(const Points3& pred, const Points3& gt) {
    const Eigen::RowVector3d mu_pred = pred.colwise().mean();
    const Eigen::RowVector3d mu_gt = gt.colwise().mean();
    const Points3 p0 = pred.rowwise() - mu_pred;
    const Points3 g0 = gt.rowwise() - mu_gt;
    const double pred_var = p0.squaredNorm();
    if (!(pred_var > 0.0)) throw PreconditionError("procrustes alignment is degenerate: all predicted joints coincide");
    // Row-vector convention: aligned = s * p0 * R + mu_gt, R = U D V^T from
    // the SVD of p0^T g0.
    const Eigen::Matrix3d cross = p0.transpose() * g0;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Matrix3d& u = svd.matrixU();
    const Eigen::Matrix3d& v = svd.matrixV();
    Eigen::Vector3d d(1.0, 1.0, (u * v.transpose()).determinant() < 0.0 ? -1.0 : 1.0);
    const Eigen::Matrix3d rotation = u * d.asDiagonal() * v.transpose();
    const double s = svd.singularValues().dot(d) / pred_var;
    return ((s * p0 * rotation).rowwise() + mu_gt).eval();
}

/// pred and gt are J x 3 row-major keypoints (J >= 3).
inline KeypointMetrics keypoint_metrics(std::span<const double> pred, std::span<const double> gt) {
    if (pred.size() != gt.size() || pred.size() % 3 != 0)
        throw ShapeError("keypoint arrays must both be J x 3 with equal J");
    const auto joints = static_cast<Eigen::Index>(pred.size() / 3);
    if (joints < 3) throw PreconditionError("PA-MPJPE needs at least 3 joints");
    const Points3 p = Eigen::Map<const Points3>(pred.data(), joints, 3);
    const Points3 g = Eigen::Map<const Points3>(gt.data(), joints, 3);
    return {mean_joint_distance(p, g), mean_joint_distance(procrustes_align(p, g), g)};
}

inline double accuracy(const std::vector<std::vector<double>>& logits, const std::vector<std::size_t>& labels) {
    if (logits.size() != labels.size() || logits.empty()) throw ShapeError("accuracy needs one label per logit row");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        auto best = std::max_element(logits[i].begin(), logits[i].end());
        hits += static_cast<std::size_t>(best - logits[i].begin()) == labels[i];
    }
    return static_cast<double>(hits) / static_cast<double>(logits.size());
}

namespace detail {

inline double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(s);
}

inline std::map<std::size_t, std::vector<std::size_t>> group_by_label(const std::vector<std::vector<double>>& points,
                                                                       const std::vector<std::size_t>& labels) {
    if (points.size() != labels.size() || points.empty()) throw ShapeError("clustering needs one label per point");
    for (const auto& p : points)
        if (p.size() != points.front().size()) throw ShapeError("embedding widths differ");
    std::map<std::size_t, std::vector<std::size_t>> clusters;
    for (std::size_t i = 0; i < labels.size(); ++i) clusters[labels[i]].push_back(i);
    if (clusters.size() < 2) throw PreconditionError("clustering metrics need at least 2 distinct labels");
    return clusters;
}

} // namespace detail

/// Mean silhouette with Euclidean distances; members of singleton clusters
/// contribute 0.
inline double silhouette_score(const std::vector<std::vector<double>>& points, const std::vector<std::size_t>& labels) {
    const auto clusters = detail::group_by_label(points, labels);
    const std::size_t n = points.size();
    std::vector<double> dist(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) dist[i * n + j] = dist[j * n + i] = detail::euclidean(points[i], points[j]);

    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& own = clusters.at(labels[i]);
        if (own.size() == 1) continue;
        double a = 0.0;
        for (std::size_t j : own)
            if (j != i) a += dist[i * n + j];
        a /= static_cast<double>(own.size() - 1);
        double b = std::numeric_limits<double>::infinity();
        for (const auto& [label, members] : clusters) {
            if (label == labels[i]) continue;
            double d = 0.0;
            for (std::size_t j : members) d += dist[i * n + j];
            b = std::min(b, d / static_cast<double>(members.size()));
        }
        const double denom = std::max(a, b);
        if (denom > 0.0) total += (b - a) / denom;
    }
    return total / static_cast<double>(n);
}

/// [tr(B)/(k-1)] / [tr(W)/(n-k)] with between/within-cluster dispersion.
inline double calinski_harabasz(const std::vector<std::vector<double>>& points, const std::vector<std::size_t>& labels) {
    const auto clusters = detail::group_by_label(points, labels);
    const std::size_t n = points.size(), dim = points.front().size(), k = clusters.size();
    if (n <= k) throw PreconditionError("Calinski-Harabasz needs more points than clusters");
    std::vector<double> global(dim, 0.0);
    for (const auto& p : points)
        for (std::size_t d = 0; d < dim; ++d) global[d] += p[d];
    for (double& g : global) g /= static_cast<double>(n);

    double between = 0.0, within = 0.0;
    for (const auto& [label, members] : clusters) {
        std::vector<double> centroid(dim, 0.0);
        for (std::size_t i : members)
            for (std::size_t d = 0; d < dim; ++d) centroid[d] += points[i][d];
        for (double& c : centroid) c /= static_cast<double>(members.size());
        for (std::size_t d = 0; d < dim; ++d)
            between += static_cast<double>(members.size()) * (centroid[d] - global[d]) * (centroid[d] - global[d]);
        for (std::size_t i : members)
            for (std::size_t d = 0; d < dim; ++d) within += (points[i][d] - centroid[d]) * (points[i][d] - centroid[d]);
    }
    if (!(within > 0.0)) return std::numeric_limits<double>::infinity();
    return (between / static_cast<double>(k - 1)) / (within / static_cast<double>(n - k));
}

struct ClassificationMetrics {
    double accuracy = 0.0;
    double silhouette = 0.0;
    double calinski_harabasz = 0.0;
};

/// Embeddings are one vector per sample (token mean of Emb_cm); clustering
/// uses the true labels.
inline ClassificationMetrics classification_metrics(const std::vector<std::vector<double>>& logits,
                                                    const std::vector<std::size_t>& labels,
                                                    const std::vector<std::vector<double>>& embeddings) {
    return {accuracy(logits, labels), silhouette_score(embeddings, labels), calinski_harabasz(embeddings, labels)};
}

} // namespace xfi
