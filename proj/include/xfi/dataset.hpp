#pragma once

// Synthetic complementary multi-modal data. A latent z ~ N(0, I) drives both
// targets (linear keypoints and a prototype-argmax class) and every modality,
// which only observes the latent dims in its informative mask:
//   raw_m = A_m (mask_m * z) + sigma_m * noise.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "xfi/encoding.hpp"
#include "xfi/errors.hpp"
#include "xfi/parameter_store.hpp"

namespace xfi {

struct ModalitySample {
    std::vector<std::vector<double>> raw; // per canonical modality
    std::vector<double> keypoints;        // J x 3, row-major
    std::size_t label = 0;
};

struct SyntheticDataConfig {
    std::size_t latent_dim = 12;
    std::size_t n_train = 512;
    std::size_t n_eval = 256;
    std::size_t joints = 17;
    std::size_t classes = 8;
    std::vector<ModalityConfig> modalities;
    std::uint64_t seed = 0;

    void validate() const {
        if (latent_dim == 0) throw ConfigError("latent_dim must be positive");
        if (n_train == 0 || n_eval == 0) throw ConfigError("train and eval splits must be non-empty");
        if (joints < 3) throw ConfigError("at least 3 joints are required");
        if (classes < 2) throw ConfigError("at least 2 classes are required");
        validate_modalities(modalities, latent_dim);
    }
};

struct Dataset {
    std::vector<std::string> modality_ids;
    std::size_t joints = 0;
    std::size_t classes = 0;
    std::vector<ModalitySample> train;
    std::vector<ModalitySample> eval;
};

namespace detail {

inline std::vector<double> gaussian_matrix(std::uint64_t seed, std::size_t rows, std::size_t cols, double stddev) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> m(rows * cols);
    for (double& x : m) x = dist(rng);
    return m;
}

} // namespace detail

inline Dataset generate_synthetic_dataset(const SyntheticDataConfig& config) {
    config.validate();
    const std::size_t dz = config.latent_dim, nj = config.joints, nc = config.classes;
    const double unit = 1.0 / std::sqrt(static_cast<double>(dz));
    const auto keypoint_map = detail::gaussian_matrix(config.seed ^ fnv1a("data.keypoint_map"), 3 * nj, dz, unit);
    const auto prototypes = detail::gaussian_matrix(config.seed ^ fnv1a("data.prototypes"), nc, dz, 1.0);
    std::vector<std::vector<double>> mixing;
    for (const auto& m : config.modalities)
        mixing.push_back(detail::gaussian_matrix(config.seed ^ fnv1a("data.mixing." + m.id), m.raw_dim, dz, unit));

    auto draw = [&](std::size_t count, const char* split) {
        std::mt19937_64 rng(config.seed ^ fnv1a(std::string("data.samples.") + split));
        std::normal_distribution<double> normal(0.0, 1.0);
        std::vector<ModalitySample> out(count);
        std::vector<double> z(dz);
        for (auto& s : out) {
            for (double& v : z) v = normal(rng);
            s.keypoints.assign(3 * nj, 0.0);
            for (std::size_t r = 0; r < 3 * nj; ++r)
                for (std::size_t c = 0; c < dz; ++c) s.keypoints[r] += keypoint_map[r * dz + c] * z[c];
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < nc; ++k) {
                double score = 0.0;
                for (std::size_t c = 0; c < dz; ++c) score += prototypes[k * dz + c] * z[c];
                if (score > best) {
                    best = score;
                    s.label = k;
                }
            }
            for (std::size_t m = 0; m < config.modalities.size(); ++m) {
                const auto& mod = config.modalities[m];
                std::vector<double> raw(mod.raw_dim, 0.0);
                for (std::size_t r = 0; r < mod.raw_dim; ++r) {
                    for (std::size_t c = 0; c < dz; ++c)
                        if (mod.informative_mask[c]) raw[r] += mixing[m][r * dz + c] * z[c];
                    if (mod.noise_sigma > 0.0) raw[r] += mod.noise_sigma * normal(rng);
                }
                s.raw.push_back(std::move(raw));
            }
        }
        return out;
    };

    Dataset data;
    for (const auto& m : config.modalities) data.modality_ids.push_back(m.id);
    data.joints = nj;
    data.classes = nc;
    data.train = draw(config.n_train, "train");
    data.eval = draw(config.n_eval, "eval");
    return data;
}

} // namespace xfi
