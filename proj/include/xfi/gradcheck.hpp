#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "xfi/errors.hpp"
#include "xfi/parameter_store.hpp"
#include "xfi/tensor.hpp"

namespace xfi {

struct GradcheckOptions {
    double eps = 1e-6;
    // 0 checks every coordinate; otherwise at most this many randomly chosen
    // coordinates per parameter tensor.
    std::size_t max_coords_per_param = 0;
    std::uint64_t seed = 0;
    // Lower bound on the relative-error denominator. The default keeps the
    // plain relative error; a larger floor judges coordinates whose gradient
    // is below rounding resolution on absolute error instead.
    double denominator_floor = 1e-12;
};

struct GradcheckResult {
    double max_relative_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t coords_checked = 0;
};

/// Compares backward() against central differences for every (or a sampled
/// subset of) parameter coordinate. The relative error of one coordinate is
/// |a - n| / max(floor, |a| + |n|) with floor = 1e-12 unless overridden.
inline GradcheckResult finite_diff_gradcheck_detailed(const std::function<Tensor()>& f, ParameterStore& params,
                                                      const GradcheckOptions& options = {}) {
    if (!(options.eps > 0.0)) throw PreconditionError("gradcheck: eps must be positive");
    params.zero_grad();
    const double base = [&] {
        Tensor loss = f();
        backward(loss);
        return loss.item();
    }();
    {
        NoGradGuard guard;
        if (f().item() != base) throw PreconditionError("gradcheck: function is not deterministic");
    }

    GradcheckResult result;
    std::mt19937_64 rng(options.seed);
    NoGradGuard guard;
    for (auto& [name, tensor] : params) {
        const std::vector<double> analytic = tensor.grad();
        std::vector<std::size_t> coords(tensor.size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (options.max_coords_per_param && coords.size() > options.max_coords_per_param) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(options.max_coords_per_param);
            std::sort(coords.begin(), coords.end());
        }
        auto& values = tensor.data();
        for (std::size_t i : coords) {
            const double saved = values[i];
            const double hi = saved + options.eps, lo = saved - options.eps;
            values[i] = hi;
            const double plus = f().item();
            values[i] = lo;
            const double minus = f().item();
            values[i] = saved;
            // Divide by the representable step, not 2*eps.
            const double numeric = (plus - minus) / (hi - lo);
            const double err =
                std::abs(analytic[i] - numeric) /
                std::max(options.denominator_floor, std::abs(analytic[i]) + std::abs(numeric));
            ++result.coords_checked;
            if (err > result.max_relative_error) {
                result.max_relative_error = err;
                result.worst_param = name;
                result.worst_index = i;
                result.analytic = analytic[i];
                result.numeric = numeric;
            }
        }
    }
    return result;
}

inline double finite_diff_gradcheck(const std::function<Tensor()>& f, ParameterStore& params, double eps = 1e-6) {
    return finite_diff_gradcheck_detailed(f, params, {.eps = eps}).max_relative_error;
}

} // namespace xfi
