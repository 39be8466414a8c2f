#pragma once

// Dense 64-bit tensor with a recorded reverse-mode graph.
//
// A Tensor is a cheap handle to a shared node. Copying a Tensor aliases the
// node (parameters are shared this way between the ParameterStore and the
// typed parameter structs of the model); use clone() for a deep copy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "xfi/errors.hpp"

namespace xfi {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad; // empty until first touched by backward/zero_grad
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return !backward_fn; }

    std::vector<double>& grad_buffer() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
        return grad;
    }
};

inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}

} // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
        for (auto d : shape)
            if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
        if (numel(shape) != values.size())
            throw ShapeError("shape " + to_string(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
        node_->shape = std::move(shape);
        node_->values = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(Shape shape, double value) {
        auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value));
    }

    /// Row-major matrix from nested rows.
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        std::vector<double> v;
        std::size_t cols = rows.size() ? rows.begin()->size() : 0;
        for (const auto& r : rows) {
            if (r.size() != cols) throw ShapeError("ragged matrix literal");
            v.insert(v.end(), r.begin(), r.end());
        }
        return Tensor({rows.size(), cols}, std::move(v));
    }

    static Tensor vector(std::vector<double> values) {
        auto n = values.size();
        return Tensor({n}, std::move(values));
    }

    static Tensor identity(std::size_t n) {
        auto t = zeros({n, n});
        for (std::size_t i = 0; i < n; ++i) t.data()[i * n + i] = 1.0;
        return t;
    }

    bool defined() const { return static_cast<bool>(node_); }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->values.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    // 2-D view: rank-1 tensors are a single row.
    std::size_t rows() const { return rank() == 1 ? 1 : node_->shape[0]; }
    std::size_t cols() const { return node_->shape.back(); }

    const std::vector<double>& values() const { return node_->values; }
    std::vector<double>& data() { return node_->values; }
    double item() const {
        if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
        return node_->values[0];
    }
    double at(std::size_t r, std::size_t c) const { return node_->values[r * cols() + c]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }

    /// Accumulated gradient; zeros if backward never reached this tensor.
    std::vector<double> grad() const {
        if (node_->grad.size() != node_->values.size()) return std::vector<double>(size(), 0.0);
        return node_->grad;
    }
    bool has_grad() const { return node_->grad.size() == node_->values.size(); }
    void zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }
    /// Back to the untouched state: has_grad() is false until backward reaches it.
    void clear_grad() { node_->grad.clear(); }

    const char* op() const { return node_->op; }

    /// Deep copy of shape and values, detached from any graph.
    Tensor clone() const { return Tensor(shape(), values(), false); }
    Tensor detach() const { return clone(); }

    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

    static Tensor from_node(std::shared_ptr<detail::Node> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v)
        if (!std::isfinite(x)) throw NonFiniteError(std::string("non-finite value produced by ") + op);
}

/// Builds an op result, recording the backward closure when any input
/// requires a gradient and recording is enabled.
inline Tensor make_result(Shape shape, std::vector<double> values, const char* op,
                          std::initializer_list<const Tensor*> inputs,
                          std::function<void(Node&)> backward) {
    check_finite(values, op);
    Tensor out(std::move(shape), std::move(values));
    bool needs = false;
    if (grad_enabled())
        for (const Tensor* in : inputs)
            if (in->defined() && in->requires_grad()) needs = true;
    Node* n = out.node();
    n->op = op;
    if (needs) {
        n->requires_grad = true;
        for (const Tensor* in : inputs)
            if (in->defined()) n->parents.push_back(in->node_ptr());
        n->backward_fn = std::move(backward);
    }
    return out;
}

/// Variant for ops with a runtime-sized input list (concat).
inline Tensor make_result(Shape shape, std::vector<double> values, const char* op,
                          const std::vector<Tensor>& inputs, std::function<void(Node&)> backward) {
    check_finite(values, op);
    Tensor out(std::move(shape), std::move(values));
    bool needs = false;
    if (grad_enabled())
        for (const Tensor& in : inputs)
            if (in.requires_grad()) needs = true;
    Node* n = out.node();
    n->op = op;
    if (needs) {
        n->requires_grad = true;
        for (const Tensor& in : inputs) n->parents.push_back(in.node_ptr());
        n->backward_fn = std::move(backward);
    }
    return out;
}

} // namespace detail

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls; interior gradients are recomputed from zero on every call.
inline void backward(const Tensor& loss) {
    if (loss.size() != 1) throw ShapeError("backward() requires a scalar loss, got shape " + to_string(loss.shape()));
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node(), 0}};
    seen.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (detail::Node* n : order)
        if (!n->is_leaf()) n->grad.assign(n->values.size(), 0.0);
    loss.node()->grad_buffer()[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
}

} // namespace xfi
