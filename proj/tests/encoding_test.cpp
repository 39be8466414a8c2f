#include <gtest/gtest.h>

#include <random>

#include "xfi/encoding.hpp"
#include "xfi/training.hpp"

using namespace xfi;

namespace {

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n) {
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) x = d(rng);
    return v;
}

Tensor random_block(std::mt19937_64& rng, std::size_t r, std::size_t c) { return Tensor({r, c}, random_vector(rng, r * c)); }

std::vector<double> identity_matrix(std::size_t n) {
    std::vector<double> m(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) m[i * n + i] = 1.0;
    return m;
}

} // namespace

TEST(EncodeModality, ZeroRawGivesZeroFeatures) {
    ParameterStore store(1);
    EncoderStub stub(24, 8, 16, 7);
    auto params = ModalityEncoderParams::create(store, "encoder.I", 16, 64);
    Tensor f = encode_modality(std::vector<double>(24, 0.0), stub, params);
    EXPECT_EQ(f.shape(), (Shape{8, 64}));
    for (double v : f.values()) EXPECT_EQ(v, 0.0);
}

TEST(EncodeModality, IdentityStubAndProjectionReshapeRaw) {
    const std::size_t n_f = 3, d = 4;
    ParameterStore store(1);
    EncoderStub stub(n_f * d, n_f, d, identity_matrix(n_f * d));
    auto params = ModalityEncoderParams::create(store, "encoder.I", d, d);
    params.projection.set_identity();
    std::mt19937_64 rng(3);
    auto raw = random_vector(rng, n_f * d);
    Tensor f = encode_modality(raw, stub, params);
    EXPECT_EQ(f.shape(), (Shape{n_f, d}));
    EXPECT_EQ(f.values(), raw);
}

TEST(EncodeModality, DeskShapeAndWrongRawLength) {
    ParameterStore store(1);
    EncoderStub stub(24, 8, 16, 7);
    auto params = ModalityEncoderParams::create(store, "encoder.I", 16, 64);
    EXPECT_EQ(encode_modality(std::vector<double>(24, 0.5), stub, params).shape(), (Shape{8, 64}));
    EXPECT_THROW(encode_modality(std::vector<double>(23, 0.5), stub, params), ShapeError);
}

TEST(EncodeModality, StubIsFrozenUnderTraining) {
    ParameterStore store(1);
    EncoderStub stub(6, 2, 3, 11);
    const auto before = stub.frozen_matrix();
    auto params = ModalityEncoderParams::create(store, "encoder.I", 3, 4);
    Tensor f = encode_modality(std::vector<double>{1, 2, 3, 4, 5, 6}, stub, params);
    backward(sum(mul(f, f)));
    TrainConfig cfg;
    OptimState state;
    adamw_step(store, state, cfg, 0.1);
    EXPECT_EQ(stub.frozen_matrix(), before);
    EXPECT_EQ(store.size(), 2u); // projection weight and bias only
}

TEST(PositionalEncoding, Gating) {
    ParameterStore store(1);
    auto pe = PositionalEncodingParams::create(store, "encoder.pe", 5, 2, 3);
    std::vector<double> raw{1, 2, 3, 4, 5};
    EXPECT_FALSE(positional_encoding(std::span<const double>(raw), false, &pe).has_value());
    EXPECT_FALSE(positional_encoding(std::nullopt, true, &pe).has_value());
    EXPECT_THROW(positional_encoding(std::span<const double>(raw), true, nullptr), PreconditionError);
    auto p = positional_encoding(std::span<const double>(raw), true, &pe);
    ASSERT_TRUE(p.has_value());
    EXPECT_EQ(p->shape(), (Shape{2, 3}));
}

TEST(PositionalEncoding, ZeroRawGivesZero) {
    ParameterStore store(1);
    auto pe = PositionalEncodingParams::create(store, "encoder.pe", 5, 2, 3);
    std::vector<double> raw(5, 0.0);
    auto p = positional_encoding(std::span<const double>(raw), true, &pe);
    for (double v : p->values()) EXPECT_EQ(v, 0.0);
}

TEST(Assemble, TwoModalitiesConcatDeskShape) {
    std::mt19937_64 rng(1);
    FeatureSet f{random_block(rng, 8, 64), random_block(rng, 8, 64)};
    EXPECT_EQ(assemble_multimodal_embedding(f, std::nullopt, CombineMode::Concat).shape(), (Shape{16, 64}));
}

TEST(Assemble, SingleBlockPassesThrough) {
    std::mt19937_64 rng(2);
    Tensor b = random_block(rng, 3, 4), pe = random_block(rng, 3, 4);
    FeatureSet f{std::nullopt, b, std::nullopt};
    EXPECT_EQ(assemble_multimodal_embedding(f, std::nullopt, CombineMode::Concat).values(), b.values());
    EXPECT_EQ(assemble_multimodal_embedding(f, pe, CombineMode::Concat).values(), add(b, pe).values());
}

TEST(Assemble, AddModeOfIdenticalBlocksIsTheBlock) {
    std::mt19937_64 rng(3);
    Tensor b = random_block(rng, 3, 4);
    FeatureSet f{b, b};
    Tensor out = assemble_multimodal_embedding(f, std::nullopt, CombineMode::Add);
    EXPECT_EQ(out.shape(), (Shape{3, 4}));
    EXPECT_EQ(out.values(), b.values());
}

TEST(Assemble, EmptySetIsAnError) {
    FeatureSet f(3);
    EXPECT_THROW(assemble_multimodal_embedding(f, std::nullopt, CombineMode::Concat), PreconditionError);
}

TEST(Assemble, PositionalEncodingOnOneBlockOnly) {
    std::mt19937_64 rng(4);
    Tensor a = random_block(rng, 2, 3), b = random_block(rng, 2, 3), pe = random_block(rng, 2, 3);
    Tensor out = assemble_multimodal_embedding({a, b}, pe, CombineMode::Concat, std::size_t{1});
    Tensor expected = concat({a, add(b, pe)}, 0);
    EXPECT_EQ(out.values(), expected.values());
}

// Token count is n_f * |S| for concat and n_f for add, for every subset.
TEST(AssembleProperty, TokenCountOverAllSubsets) {
    std::mt19937_64 rng(5);
    const std::size_t n = 4, n_f = 3, d_f = 5;
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
        FeatureSet f(n);
        std::size_t k = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask & (1u << i)) f[i] = random_block(rng, n_f, d_f), ++k;
        EXPECT_EQ(assemble_multimodal_embedding(f, std::nullopt, CombineMode::Concat).shape(), (Shape{n_f * k, d_f}));
        EXPECT_EQ(assemble_multimodal_embedding(f, std::nullopt, CombineMode::Add).shape(), (Shape{n_f, d_f}));
    }
}

TEST(AssembleProperty, CanonicalOrderIgnoresInsertionOrder) {
    std::mt19937_64 rng(6);
    const std::vector<std::string> ids{"I", "L", "R", "W"};
    Tensor i = random_block(rng, 2, 3), r = random_block(rng, 2, 3), w = random_block(rng, 2, 3);
    auto a = canonical_features({{"W", w}, {"I", i}, {"R", r}}, ids);
    auto b = canonical_features({{"R", r}, {"W", w}, {"I", i}}, ids);
    auto ea = assemble_multimodal_embedding(a, std::nullopt, CombineMode::Concat);
    auto eb = assemble_multimodal_embedding(b, std::nullopt, CombineMode::Concat);
    EXPECT_EQ(ea.values(), eb.values());
    EXPECT_EQ(ea.values(), concat({i, r, w}, 0).values());
    EXPECT_THROW(canonical_features({{"X", i}}, ids), ConfigError);
    EXPECT_THROW(canonical_features({{"I", i}, {"I", i}}, ids), ConfigError);
}

TEST(ModalityConfigValidation, CoverageAndSpatialRules) {
    auto m = [](std::string id, std::vector<bool> mask, bool spatial = false) {
        return ModalityConfig{std::move(id), 4, std::move(mask), 0.0, 0.5, spatial};
    };
    EXPECT_NO_THROW(validate_modalities({m("A", {1, 1, 0}), m("B", {0, 0, 1}, true)}, 3));
    EXPECT_THROW(validate_modalities({m("A", {1, 1, 0}), m("B", {0, 1, 0})}, 3), ConfigError);
    EXPECT_THROW(validate_modalities({m("A", {1, 1, 1}, true), m("B", {0, 1, 0}, true)}, 3), ConfigError);
    EXPECT_THROW(validate_modalities({m("A", {1, 1, 1}), m("A", {0, 1, 0})}, 3), ConfigError);
    EXPECT_THROW(validate_modalities({m("A+B", {1, 1, 1})}, 3), ConfigError);
}
