#pragma once

// Typed views over ParameterStore entries for the small building blocks
// shared by every model component.

#include <string>

#include "xfi/ops.hpp"
#include "xfi/parameter_store.hpp"

namespace xfi {

struct LinearParams {
    Tensor weight; // [in x out]
    Tensor bias;   // [out], undefined for bias-free maps

    static LinearParams create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                               bool with_bias = true) {
        LinearParams p;
        p.weight = store.uniform(name + ".weight", {in, out}, in);
        if (with_bias) p.bias = store.zeros(name + ".bias", {out});
        return p;
    }

    Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }

    void set_identity() {
        if (weight.dim(0) != weight.dim(1)) throw ShapeError("identity init needs a square weight");
        weight.data() = Tensor::identity(weight.dim(0)).values();
        if (bias.defined()) std::fill(bias.data().begin(), bias.data().end(), 0.0);
    }
};

struct NormParams {
    Tensor gamma;
    Tensor beta;
    double eps = 1e-5;

    static NormParams create(ParameterStore& store, const std::string& name, std::size_t width, double eps = 1e-5) {
        return {store.ones(name + ".gamma", {width}), store.zeros(name + ".beta", {width}), eps};
    }

    Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }
};

/// Two-layer perceptron with ReLU: out(relu(in(x))).
struct FeedForwardParams {
    LinearParams in;
    LinearParams out;

    static FeedForwardParams create(ParameterStore& store, const std::string& name, std::size_t width,
                                    std::size_t hidden, std::size_t out_width) {
        return {LinearParams::create(store, name + ".in", width, hidden),
                LinearParams::create(store, name + ".out", hidden, out_width)};
    }

    Tensor operator()(const Tensor& x) const { return out(relu(in(x))); }
};

} // namespace xfi
