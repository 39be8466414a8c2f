#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>

#include "xfi/errors.hpp"
#include "xfi/tensor.hpp"

namespace xfi {

/// 64-bit FNV-1a; used for stable digests and per-name seeding.
inline std::uint64_t fnv1a(std::string_view text, std::uint64_t hash = 0xcbf29ce484222325ULL) {
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

/// Named trainable tensors keyed by dot-separated path. Iteration is
/// lexicographic by name.
class ParameterStore {
public:
    using Map = std::map<std::string, Tensor>;

    explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    Tensor add(const std::string& name, Tensor value) {
        if (tensors_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        value.set_requires_grad(true);
        tensors_.emplace(name, value);
        return value;
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weight, seeded from the store
    /// seed and the parameter name so values do not depend on creation order.
    Tensor uniform(const std::string& name, Shape shape, std::size_t fan_in) {
        std::mt19937_64 rng(seed_ ^ fnv1a(name));
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        std::vector<double> v(numel(shape));
        for (double& x : v) x = dist(rng);
        return add(name, Tensor(std::move(shape), std::move(v)));
    }

    Tensor zeros(const std::string& name, Shape shape) { return add(name, Tensor::zeros(std::move(shape))); }
    Tensor ones(const std::string& name, Shape shape) { return add(name, Tensor::full(std::move(shape), 1.0)); }

    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

    const Tensor& at(const std::string& name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }
    Tensor& at(const std::string& name) {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }

    void zero_grad() {
        for (auto& [_, t] : tensors_) t.zero_grad();
    }
    void clear_grads() {
        for (auto& [_, t] : tensors_) t.clear_grad();
    }

    std::size_t size() const { return tensors_.size(); }
    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : tensors_) n += t.size();
        return n;
    }

    Map::iterator begin() { return tensors_.begin(); }
    Map::iterator end() { return tensors_.end(); }
    Map::const_iterator begin() const { return tensors_.begin(); }
    Map::const_iterator end() const { return tensors_.end(); }

    /// Copies values from `other` for every name present in both stores.
    void copy_values_from(const ParameterStore& other) {
        for (auto& [name, t] : tensors_) {
            auto it = other.tensors_.find(name);
            if (it == other.tensors_.end()) continue;
            if (it->second.shape() != t.shape())
                throw ShapeError("parameter " + name + " shape " + to_string(t.shape()) + " vs " +
                                 to_string(it->second.shape()));
            t.data() = it->second.values();
        }
    }

private:
    std::uint64_t seed_;
    Map tensors_;
};

} // namespace xfi
