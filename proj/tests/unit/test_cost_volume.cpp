// Copyright Contributors to the c3gs project
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "c3gs/c3gs.hpp"
#include "oracles.hpp"

using namespace c3gs;

namespace {

PinholeCamera small_camera(std::size_t W, std::size_t H) {
    PinholeCamera c;
    c.width = W;
    c.height = H;
    c.K << 12, 0, W / 2.0, 0, 12, H / 2.0, 0, 0, 1;
    c.depth_min = 2;
    c.depth_max = 8;
    return c;
}

CostVolume handmade_volume(const Tensor& values, std::uint8_t views) {
    const std::size_t D = values.dim(1), H = values.dim(2), W = values.dim(3);
    PinholeCamera c = small_camera(W, H);
    return {values, sample_depth_hypotheses(c, D, HypothesisSpacing::UniformDepth, H, W),
            std::vector<std::uint8_t>(D * H * W, views)};
}

}  // namespace

TEST(CostVolume, IdenticalViewsGiveZeroVariance) {
    const PinholeCamera c = small_camera(10, 8);
    auto rng = SeededRng(1).stream("t");
    const Tensor f = oracle::random_tensor(rng, {4, 8, 10});
    const auto hyp = sample_depth_hypotheses(c, 6, HypothesisSpacing::UniformDepth, 8, 10);
    const CostVolume v = build_cost_volume(c, {c, c, c}, {f, f, f}, hyp);
    EXPECT_EQ(v.values, Tensor({4, 6, 8, 10}));
    for (auto n : v.view_count) EXPECT_EQ(n, 3);
}

TEST(CostVolume, TwoViewVarianceMatchesScalarOracle) {
    const PinholeCamera c = small_camera(6, 5);
    auto rng = SeededRng(2).stream("t");
    const Tensor a = oracle::random_tensor(rng, {3, 5, 6}), b = oracle::random_tensor(rng, {3, 5, 6});
    const auto hyp = sample_depth_hypotheses(c, 4, HypothesisSpacing::UniformDepth, 5, 6);
    const CostVolume v = build_cost_volume(c, {c, c}, {a, b}, hyp);
    for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t y = 0; y < 5; ++y)
            for (std::size_t x = 0; x < 6; ++x) {
                const double m = (static_cast<double>(a.at(ch, y, x)) + b.at(ch, y, x)) / 2;
                const double ref = (std::pow(a.at(ch, y, x) - m, 2) + std::pow(b.at(ch, y, x) - m, 2)) / 2;
                EXPECT_NEAR(v.values.at(ch, 2, y, x), ref, 1e-7);
            }
}

TEST(CostVolume, RequiresTwoSources) {
    const PinholeCamera c = small_camera(4, 4);
    const auto hyp = sample_depth_hypotheses(c, 4, HypothesisSpacing::UniformDepth, 4, 4);
    EXPECT_THROW(build_cost_volume(c, {c}, {Tensor({1, 4, 4})}, hyp), Error);
}

TEST(CostVolume, PlaneSceneMinimumAtNearestHypothesis) {
    SyntheticSpec spec;
    spec.width = 80;
    spec.height = 64;
    const SceneBundle b = make_bundle(generate_synthetic_scene(spec));
    const std::size_t D = 32, H = spec.height, W = spec.width;
    const auto hyp = sample_depth_hypotheses(b.target_camera, D, HypothesisSpacing::UniformDepth, H, W);
    const CostVolume v = build_cost_volume(b.target_camera, b.source_cameras, b.source_images, hyp);
    std::size_t nearest = 0;
    double best = INFINITY;
    for (std::size_t d = 0; d < D; ++d) {
        const double e = std::abs(hyp.values.at(d, 0, 0) - spec.plane_depth);
        if (e < best) best = e, nearest = d;
    }
    std::size_t hits = 0, counted = 0;
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            if (v.views_at(nearest, y, x) < 2) continue;
            ++counted;
            std::size_t arg = 0;
            double lo = INFINITY;
            for (std::size_t d = 0; d < D; ++d) {
                if (v.views_at(d, y, x) < 2) continue;
                double s = 0;
                for (std::size_t c = 0; c < 3; ++c) s += v.values.at(c, d, y, x);
                if (s < lo) lo = s, arg = d;
            }
            hits += arg == nearest;
        }
    ASSERT_GT(counted, H * W / 2);
    EXPECT_GE(static_cast<double>(hits) / static_cast<double>(counted), 0.9);
}

TEST(Regularize, BypassUniformAndMonotone) {
    const auto zero = regularize(handmade_volume(Tensor({2, 5, 3, 4}), 2), nullptr, RegularizerMode::Bypass);
    EXPECT_EQ(zero.logits, Tensor({5, 3, 4}));

    auto rng = SeededRng(3).stream("t");
    const Tensor vals = oracle::random_tensor(rng, {1, 6, 3, 4}, 0, 1);
    const auto out = regularize(handmade_volume(vals, 2), nullptr, RegularizerMode::Bypass);
    for (std::size_t p = 0; p < 12; ++p)
        for (std::size_t d = 0; d < 6; ++d)
            for (std::size_t e = 0; e < 6; ++e)
                if (vals[d * 12 + p] < vals[e * 12 + p]) {
                    EXPECT_GT(out.logits[d * 12 + p], out.logits[e * 12 + p]);
                }
}

TEST(Regularize, BypassUnsupportedVoxelsNeverWin) {
    Tensor vals({1, 3, 1, 1});
    vals[0] = 0.5f;
    vals[1] = 0.2f;
    vals[2] = 0.0f;  // seen by one view only
    CostVolume v = handmade_volume(vals, 2);
    v.view_count[2] = 1;
    const auto out = regularize(v, nullptr, RegularizerMode::Bypass);
    EXPECT_EQ(out.logits[2], out.logits[0]);
    EXPECT_GT(out.logits[1], out.logits[2]);
}

TEST(Regularize, LearnedFiniteShapes) {
    WeightStore store;
    init_regularizer_weights(store, SeededRng(4), "reg", 4);
    auto rng = SeededRng(5).stream("t");
    const CostVolume v = handmade_volume(oracle::random_tensor(rng, {4, 8, 6, 5}, 0, 1), 3);
    const auto out = regularize(v, &store, RegularizerMode::Learned);
    EXPECT_EQ(out.logits.shape(), (Shape{8, 6, 5}));
    EXPECT_EQ(out.features.shape(), (Shape{kVoxelFeatureWidth, 8, 6, 5}));
    EXPECT_TRUE(out.logits.all_finite());
    EXPECT_THROW(regularize(v, nullptr, RegularizerMode::Learned), Error);
}

TEST(Probability, UniformAndPeaked) {
    const ProbabilityVolume u = to_probability(Tensor({4, 2, 3}));
    for (float v : u.values.data()) EXPECT_FLOAT_EQ(v, 0.25f);
    Tensor l({5, 1, 1});
    l[3] = 30;
    EXPECT_GE(to_probability(l).values[3], 1 - 1e-9);
}

TEST(Probability, RandomMatchesSoftmaxOracle) {
    auto rng = SeededRng(6).stream("t");
    const Tensor l = oracle::random_tensor(rng, {7, 3, 2}, -5, 5);
    const auto p = to_probability(l, 0.7);
    for (std::size_t q = 0; q < 6; ++q) {
        std::vector<double> row;
        for (std::size_t d = 0; d < 7; ++d) row.push_back(l[d * 6 + q]);
        const auto ref = oracle::softmax(row, 0.7);
        for (std::size_t d = 0; d < 7; ++d) EXPECT_NEAR(p.values[d * 6 + q], ref[d], 1e-7);
    }
}

TEST(RegressDepth, UniformAndOneHot) {
    DepthHypotheses h{Tensor({3, 1, 2}, std::vector<float>{2, 2, 4, 4, 6, 6}), DepthHypotheses::Stage::Coarse};
    const DepthMap m = regress_depth({Tensor({3, 1, 2}, 1.0f / 3)}, h);
    EXPECT_NEAR(m.values[0], 4.0, 1e-6);
    Tensor onehot({3, 1, 2});
    onehot[2 * 2 + 1] = 1;  // bin 2 at pixel 1
    onehot[1 * 2 + 0] = 1;  // bin 1 at pixel 0
    const DepthMap o = regress_depth({onehot}, h);
    EXPECT_EQ(o.values[0], 4.0f);
    EXPECT_EQ(o.values[1], 6.0f);
}

TEST(VoxelFeatures, LatticeAndMidpoint) {
    auto rng = SeededRng(7).stream("t");
    const Tensor vol = oracle::random_tensor(rng, {8, 4, 2, 2});
    PinholeCamera c = small_camera(2, 2);
    const auto hyp = sample_depth_hypotheses(c, 4, HypothesisSpacing::UniformDepth, 2, 2);  // 2, 4, 6, 8
    DepthMap d{Tensor({2, 2}, std::vector<float>{4, 5, 1, 9}), Mask(2, 2, true)};
    const Tensor f = sample_voxel_features(vol, hyp, d);
    for (std::size_t ch = 0; ch < 8; ++ch) {
        EXPECT_EQ(f.at(0, ch), vol.at(ch, 1, 0, 0));
        EXPECT_NEAR(f.at(1, ch), 0.5 * (vol.at(ch, 1, 0, 1) + vol.at(ch, 2, 0, 1)), 1e-7);
        EXPECT_EQ(f.at(2, ch), vol.at(ch, 0, 1, 0));  // clamped below
        EXPECT_EQ(f.at(3, ch), vol.at(ch, 3, 1, 1));  // clamped above
    }
}

TEST(VoxelFeatures, RandomDepthsMatchInterpOracle) {
    auto rng = SeededRng(8).stream("t");
    const Tensor vol = oracle::random_tensor(rng, {8, 6, 3, 3});
    PinholeCamera c = small_camera(3, 3);
    const auto hyp = sample_depth_hypotheses(c, 6, HypothesisSpacing::UniformInverseDepth, 3, 3);
    DepthMap d{oracle::random_tensor(rng, {3, 3}, 2, 8), Mask(3, 3, true)};
    const Tensor f = sample_voxel_features(vol, hyp, d);
    for (std::size_t p = 0; p < 9; ++p) {
        const double z = d.values[p];
        std::size_t k = 0;
        while (k + 2 < 6 && hyp.values[(k + 1) * 9 + p] < z) ++k;
        const double lo = hyp.values[k * 9 + p], hi = hyp.values[(k + 1) * 9 + p];
        const double t = std::clamp((z - lo) / (hi - lo), 0.0, 1.0);
        for (std::size_t ch = 0; ch < 8; ++ch) {
            const double ref = (1 - t) * vol[((ch * 6 + k) * 9) + p] + t * vol[((ch * 6 + k + 1) * 9) + p];
            EXPECT_NEAR(f.at(p, ch), ref, 1e-6);
        }
    }
}
