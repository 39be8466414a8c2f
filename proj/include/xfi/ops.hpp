#pragma once

// Differentiable primitives. Every op validates shapes, rejects non-finite
// results and records its backward closure when an input requires grad.

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "xfi/errors.hpp"
#include "xfi/tensor.hpp"

namespace xfi {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

// Eigen's vectorized kernels pick their loop split from the buffer address,
// so one product or reduction over differently aligned heap memory can round
// differently from run to run. Products and reductions therefore read and
// write owned (aligned) copies; only element-wise updates touch the maps.
inline RowMat owned(const double* p, std::size_t rows, std::size_t cols) { return ConstMatMap(p, rows, cols); }

inline std::vector<double>* grad_of(const std::shared_ptr<Node>& p) {
    return p->requires_grad ? &p->grad_buffer() : nullptr;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
}

inline void require_matrix(const Tensor& a, const char* op) {
    if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + to_string(a.shape()));
}

// Splits a shape around `axis` into (outer, length, inner) for strided loops.
struct AxisView {
    std::size_t outer = 1, len = 1, inner = 1;
};

inline AxisView axis_view(const Shape& shape, std::size_t axis, const char* op) {
    if (axis >= shape.size())
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + to_string(shape));
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
    v.len = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

} // namespace detail

/// Matrix product a[m x k] * b[k x n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError("matmul: inner dimensions differ " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    const detail::RowMat r = detail::owned(a.values().data(), m, k) * detail::owned(b.values().data(), k, n);
    std::vector<double> out(r.data(), r.data() + m * n);
    auto pa = a.node_ptr(), pb = b.node_ptr();
    return detail::make_result({m, n}, std::move(out), "matmul", {&a, &b}, [pa, pb, m, k, n](detail::Node& self) {
        const detail::RowMat g = detail::owned(self.grad.data(), m, n);
        if (auto* ga = detail::grad_of(pa))
            detail::MatMap(ga->data(), m, k) += detail::RowMat(g * detail::owned(pb->values.data(), k, n).transpose());
        if (auto* gb = detail::grad_of(pb))
            detail::MatMap(gb->data(), k, n) += detail::RowMat(detail::owned(pa->values.data(), m, k).transpose() * g);
    });
}

inline Tensor transpose(const Tensor& a) {
    detail::require_matrix(a, "transpose");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.values()[i * n + j];
    auto pa = a.node_ptr();
    return detail::make_result({n, m}, std::move(out), "transpose", {&a}, [pa, m, n](detail::Node& self) {
        if (auto* ga = detail::grad_of(pa))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += self.grad[j * m + i];
    });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    auto pa = a.node_ptr(), pb = b.node_ptr();
    return detail::make_result(a.shape(), std::move(out), "add", {&a, &b}, [pa, pb](detail::Node& self) {
        for (auto* g : {detail::grad_of(pa), detail::grad_of(pb)})
            if (g)
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    auto pa = a.node_ptr(), pb = b.node_ptr();
    return detail::make_result(a.shape(), std::move(out), "sub", {&a, &b}, [pa, pb](detail::Node& self) {
        if (auto* g = detail::grad_of(pa))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
        if (auto* g = detail::grad_of(pb))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    });
}

/// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    auto pa = a.node_ptr(), pb = b.node_ptr();
    return detail::make_result(a.shape(), std::move(out), "mul", {&a, &b}, [pa, pb](detail::Node& self) {
        if (auto* g = detail::grad_of(pa))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * pb->values[i];
        if (auto* g = detail::grad_of(pb))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * pa->values[i];
    });
}

inline Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * factor;
    auto pa = a.node_ptr();
    return detail::make_result(a.shape(), std::move(out), "scale", {&a}, [pa, factor](detail::Node& self) {
        if (auto* g = detail::grad_of(pa))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * factor;
    });
}

/// x[m x k] * w[k x n] + b[n]; pass an undefined bias for a bias-free map.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {}) {
    detail::require_matrix(x, "linear");
    detail::require_matrix(w, "linear");
    const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
    if (w.dim(0) != k)
        throw ShapeError("linear: input " + to_string(x.shape()) + " incompatible with weight " + to_string(w.shape()));
    if (b.defined() && (b.rank() != 1 || b.dim(0) != n))
        throw ShapeError("linear: bias " + to_string(b.shape()) + " incompatible with weight " + to_string(w.shape()));
    detail::RowMat r = detail::owned(x.values().data(), m, k) * detail::owned(w.values().data(), k, n);
    if (b.defined()) r.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.values().data(), n);
    std::vector<double> out(r.data(), r.data() + m * n);
    auto px = x.node_ptr(), pw = w.node_ptr();
    auto pb = b.defined() ? b.node_ptr() : nullptr;
    return detail::make_result({m, n}, std::move(out), "linear", {&x, &w, &b}, [px, pw, pb, m, k, n](detail::Node& self) {
        const detail::RowMat g = detail::owned(self.grad.data(), m, n);
        if (auto* gx = detail::grad_of(px))
            detail::MatMap(gx->data(), m, k) += detail::RowMat(g * detail::owned(pw->values.data(), k, n).transpose());
        if (auto* gw = detail::grad_of(pw))
            detail::MatMap(gw->data(), k, n) += detail::RowMat(detail::owned(px->values.data(), m, k).transpose() * g);
        if (pb)
            if (auto* gb = detail::grad_of(pb))
                Eigen::Map<Eigen::RowVectorXd>(gb->data(), n) += Eigen::RowVectorXd(g.colwise().sum());
    });
}

inline Tensor relu(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
    auto px = x.node_ptr();
    return detail::make_result(x.shape(), std::move(out), "relu", {&x}, [px](detail::Node& self) {
        if (auto* g = detail::grad_of(px))
            for (std::size_t i = 0; i < g->size(); ++i)
                if (px->values[i] > 0.0) (*g)[i] += self.grad[i];
    });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size())
        throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    auto px = x.node_ptr();
    return detail::make_result(std::move(shape), x.values(), "reshape", {&x}, [px](detail::Node& self) {
        if (auto* g = detail::grad_of(px))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    });
}

/// Concatenation along `axis`; all other dimensions must match exactly.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = parts.front().shape();
    Shape shape = first;
    shape.at(axis) = 0;
    for (const auto& p : parts) {
        if (p.rank() != first.size()) throw ShapeError("concat: rank mismatch " + to_string(first) + " vs " + to_string(p.shape()));
        for (std::size_t d = 0; d < first.size(); ++d)
            if (d != axis && p.dim(d) != first[d])
                throw ShapeError("concat: shape mismatch " + to_string(first) + " vs " + to_string(p.shape()));
        shape[axis] += p.dim(axis);
    }
    auto view = detail::axis_view(shape, axis, "concat");
    std::vector<double> out(numel(shape));
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        offsets.push_back(offset);
        const std::size_t chunk = p.dim(axis) * view.inner;
        for (std::size_t o = 0; o < view.outer; ++o)
            std::copy_n(p.values().begin() + o * chunk, chunk, out.begin() + o * view.len * view.inner + offset * view.inner);
        offset += p.dim(axis);
    }
    std::vector<std::shared_ptr<detail::Node>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node_ptr());
    return detail::make_result(shape, std::move(out), "concat", parts, [nodes, offsets, view, axis](detail::Node& self) {
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            auto* g = detail::grad_of(nodes[i]);
            if (!g) continue;
            const std::size_t chunk = nodes[i]->shape[axis] * view.inner;
            for (std::size_t o = 0; o < view.outer; ++o)
                for (std::size_t j = 0; j < chunk; ++j)
                    (*g)[o * chunk + j] += self.grad[o * view.len * view.inner + offsets[i] * view.inner + j];
        }
    });
}

/// Half-open range [begin, end) along `axis`.
inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
    auto view = detail::axis_view(x.shape(), axis, "slice");
    if (begin >= end || end > view.len)
        throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                         to_string(x.shape()));
    Shape shape = x.shape();
    shape[axis] = end - begin;
    const std::size_t chunk = (end - begin) * view.inner;
    std::vector<double> out(view.outer * chunk);
    for (std::size_t o = 0; o < view.outer; ++o)
        std::copy_n(x.values().begin() + (o * view.len + begin) * view.inner, chunk, out.begin() + o * chunk);
    auto px = x.node_ptr();
    return detail::make_result(std::move(shape), std::move(out), "slice", {&x}, [px, view, begin, chunk](detail::Node& self) {
        if (auto* g = detail::grad_of(px))
            for (std::size_t o = 0; o < view.outer; ++o)
                for (std::size_t j = 0; j < chunk; ++j) (*g)[(o * view.len + begin) * view.inner + j] += self.grad[o * chunk + j];
    });
}

/// Mean along `axis`, keeping the reduced axis with length 1.
inline Tensor mean(const Tensor& x, std::size_t axis) {
    auto v = detail::axis_view(x.shape(), axis, "mean");
    Shape shape = x.shape();
    shape[axis] = 1;
    std::vector<double> out(v.outer * v.inner, 0.0);
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t l = 0; l < v.len; ++l)
            for (std::size_t i = 0; i < v.inner; ++i) out[o * v.inner + i] += x.values()[(o * v.len + l) * v.inner + i];
    const double inv = 1.0 / static_cast<double>(v.len);
    for (double& o : out) o *= inv;
    auto px = x.node_ptr();
    return detail::make_result(std::move(shape), std::move(out), "mean", {&x}, [px, v, inv](detail::Node& self) {
        if (auto* g = detail::grad_of(px))
            for (std::size_t o = 0; o < v.outer; ++o)
                for (std::size_t l = 0; l < v.len; ++l)
                    for (std::size_t i = 0; i < v.inner; ++i)
                        (*g)[(o * v.len + l) * v.inner + i] += self.grad[o * v.inner + i] * inv;
    });
}

/// Sum of all elements as a shape-[1] tensor.
inline Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    auto px = x.node_ptr();
    return detail::make_result({1}, {s}, "sum", {&x}, [px](detail::Node& self) {
        if (auto* g = detail::grad_of(px))
            for (double& gi : *g) gi += self.grad[0];
    });
}

/// Row-wise normalization over the last axis with affine gamma/beta.
/// Uses the biased variance; a row with zero variance and eps == 0 is a
/// non-finite error.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (eps < 0.0) throw PreconditionError("layer_norm: eps must be non-negative");
    const std::size_t n = x.cols(), rows = x.size() / n;
    if (gamma.size() != n || beta.size() != n)
        throw ShapeError("layer_norm: gamma/beta " + to_string(gamma.shape()) + "/" + to_string(beta.shape()) +
                         " do not match feature width of " + to_string(x.shape()));
    std::vector<double> out(x.size()), xhat(x.size()), inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.values().data() + r * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += xr[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[r * n + j] = (xr[j] - mu) * inv_std[r];
            out[r * n + j] = xhat[r * n + j] * gamma.values()[j] + beta.values()[j];
        }
    }
    auto px = x.node_ptr(), pg = gamma.node_ptr(), pb = beta.node_ptr();
    return detail::make_result(x.shape(), std::move(out), "layer_norm", {&x, &gamma, &beta},
                               [px, pg, pb, xhat = std::move(xhat), inv_std = std::move(inv_std), n, rows](detail::Node& self) {
        auto* gx = detail::grad_of(px);
        auto* gg = detail::grad_of(pg);
        auto* gb = detail::grad_of(pb);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* go = self.grad.data() + r * n;
            const double* xh = xhat.data() + r * n;
            if (gg)
                for (std::size_t j = 0; j < n; ++j) (*gg)[j] += go[j] * xh[j];
            if (gb)
                for (std::size_t j = 0; j < n; ++j) (*gb)[j] += go[j];
            if (gx) {
                double mean_d = 0.0, mean_dx = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double d = go[j] * pg->values[j];
                    mean_d += d;
                    mean_dx += d * xh[j];
                }
                mean_d /= static_cast<double>(n);
                mean_dx /= static_cast<double>(n);
                for (std::size_t j = 0; j < n; ++j)
                    (*gx)[r * n + j] += inv_std[r] * (go[j] * pg->values[j] - mean_d - xh[j] * mean_dx);
            }
        }
    });
}

/// Softmax along `axis` with max subtraction.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
    detail::check_finite(x.values(), "softmax input");
    auto v = detail::axis_view(x.shape(), axis, "softmax");
    std::vector<double> out(x.size());
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
            auto idx = [&](std::size_t l) { return (o * v.len + l) * v.inner + i; };
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t l = 0; l < v.len; ++l) mx = std::max(mx, x.values()[idx(l)]);
            double total = 0.0;
            for (std::size_t l = 0; l < v.len; ++l) total += out[idx(l)] = std::exp(x.values()[idx(l)] - mx);
            for (std::size_t l = 0; l < v.len; ++l) out[idx(l)] /= total;
        }
    auto px = x.node_ptr();
    return detail::make_result(x.shape(), std::move(out), "softmax", {&x}, [px, v](detail::Node& self) {
        auto* g = detail::grad_of(px);
        if (!g) return;
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t i = 0; i < v.inner; ++i) {
                auto idx = [&](std::size_t l) { return (o * v.len + l) * v.inner + i; };
                // Normalizing by the realized sum makes a uniform upstream
                // gradient of 1 cancel exactly.
                double dot = 0.0, total = 0.0;
                for (std::size_t l = 0; l < v.len; ++l) {
                    dot += self.grad[idx(l)] * self.values[idx(l)];
                    total += self.values[idx(l)];
                }
                dot /= total;
                for (std::size_t l = 0; l < v.len; ++l) (*g)[idx(l)] += self.values[idx(l)] * (self.grad[idx(l)] - dot);
            }
    });
}

/// Pools rows of x[L_in x d] to L_out rows. Row j averages input rows
/// [floor(j*L_in/L_out), ceil((j+1)*L_in/L_out)).
inline Tensor adaptive_avg_pool(const Tensor& x, std::size_t out_len) {
    detail::require_matrix(x, "adaptive_avg_pool");
    const std::size_t in_len = x.dim(0), d = x.dim(1);
    if (out_len == 0 || out_len > in_len)
        throw ShapeError("adaptive_avg_pool: target length " + std::to_string(out_len) + " outside [1, " +
                         std::to_string(in_len) + "]");
    if (out_len == in_len) return reshape(x, x.shape());
    std::vector<std::size_t> start(out_len), stop(out_len);
    for (std::size_t j = 0; j < out_len; ++j) {
        start[j] = (j * in_len) / out_len;
        stop[j] = ((j + 1) * in_len + out_len - 1) / out_len;
    }
    std::vector<double> out(out_len * d, 0.0);
    for (std::size_t j = 0; j < out_len; ++j) {
        const double inv = 1.0 / static_cast<double>(stop[j] - start[j]);
        for (std::size_t r = start[j]; r < stop[j]; ++r)
            for (std::size_t c = 0; c < d; ++c) out[j * d + c] += x.values()[r * d + c];
        for (std::size_t c = 0; c < d; ++c) out[j * d + c] *= inv;
    }
    auto px = x.node_ptr();
    return detail::make_result({out_len, d}, std::move(out), "adaptive_avg_pool", {&x},
                               [px, start, stop, d, out_len](detail::Node& self) {
        auto* g = detail::grad_of(px);
        if (!g) return;
        for (std::size_t j = 0; j < out_len; ++j) {
            const double inv = 1.0 / static_cast<double>(stop[j] - start[j]);
            for (std::size_t r = start[j]; r < stop[j]; ++r)
                for (std::size_t c = 0; c < d; ++c) (*g)[r * d + c] += self.grad[j * d + c] * inv;
        }
    });
}

/// Inverted dropout: zeroes each element with probability `rate` and scales
/// survivors by 1/(1-rate). Identity when rate == 0.
template <class Rng>
Tensor dropout(const Tensor& x, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
    if (rate == 0.0) return x;
    std::bernoulli_distribution keep(1.0 - rate);
    std::vector<double> mask(x.size());
    for (double& m : mask) m = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
    return mul(x, Tensor(x.shape(), std::move(mask)));
}

/// -log softmax(logits)[target] for a single logit vector.
inline Tensor cross_entropy(const Tensor& logits, std::size_t target) {
    const std::size_t c = logits.size();
    if (target >= c)
        throw ShapeError("cross_entropy: class " + std::to_string(target) + " outside [0, " + std::to_string(c) + ")");
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : logits.values()) mx = std::max(mx, v);
    double total = 0.0;
    for (double v : logits.values()) total += std::exp(v - mx);
    const double log_z = mx + std::log(total);
    auto pl = logits.node_ptr();
    return detail::make_result({1}, {log_z - logits.values()[target]}, "cross_entropy", {&logits},
                               [pl, target, log_z](detail::Node& self) {
        if (auto* g = detail::grad_of(pl))
            for (std::size_t i = 0; i < g->size(); ++i)
                (*g)[i] += self.grad[0] * (std::exp(pl->values[i] - log_z) - (i == target ? 1.0 : 0.0));
    });
}

/// Scaled dot-product attention split into `heads` column slices, followed by
/// the learned output projection out_w[d x d] (+ out_b).
inline Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, double scale_factor,
                                   const Tensor& out_w, const Tensor& out_b = {}) {
    detail::require_matrix(q, "multi_head_attention");
    detail::require_matrix(k, "multi_head_attention");
    detail::require_matrix(v, "multi_head_attention");
    const std::size_t d = q.dim(1);
    if (heads == 0 || d % heads != 0)
        throw ConfigError("multi_head_attention: feature width " + std::to_string(d) + " not divisible by " +
                          std::to_string(heads) + " heads");
    if (!(scale_factor > 0.0)) throw ConfigError("multi_head_attention: scale must be positive");
    if (k.dim(1) != d || v.dim(1) != d || k.dim(0) != v.dim(0))
        throw ShapeError("multi_head_attention: incompatible Q/K/V " + to_string(q.shape()) + " " + to_string(k.shape()) +
                         " " + to_string(v.shape()));
    const std::size_t width = d / heads;
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor qh = heads == 1 ? q : slice(q, 1, h * width, (h + 1) * width);
        Tensor kh = heads == 1 ? k : slice(k, 1, h * width, (h + 1) * width);
        Tensor vh = heads == 1 ? v : slice(v, 1, h * width, (h + 1) * width);
        Tensor weights = softmax(scale(matmul(qh, transpose(kh)), scale_factor), 1);
        outs.push_back(matmul(weights, vh));
    }
    Tensor joined = heads == 1 ? outs.front() : concat(outs, 1);
    return linear(joined, out_w, out_b);
}

} // namespace xfi
