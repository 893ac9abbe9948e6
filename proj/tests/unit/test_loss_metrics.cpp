// Copyright Contributors to the c3gs project
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "c3gs/c3gs.hpp"
#include "oracles.hpp"

using namespace c3gs;

TEST(Psnr, IdenticalAndOffset) {
    auto rng = SeededRng(1).stream("t");
    const Tensor gt = oracle::random_tensor(rng, {3, 8, 8}, 0.2, 0.8);
    EXPECT_EQ(mse(gt, gt), 0.0);
    EXPECT_EQ(psnr(gt, gt), 99.0);
    Tensor off = gt;
    for (auto& v : off.data()) v += 0.1f;
    EXPECT_NEAR(mse(off, gt), 0.01, 1e-8);
    EXPECT_NEAR(psnr(off, gt), 20.0, 1e-5);
    EXPECT_THROW(mse(gt, Tensor({3, 8, 7})), ShapeError);
}

TEST(Psnr, RandomPairMatchesScalarOracle) {
    auto rng = SeededRng(2).stream("t");
    const Tensor a = oracle::random_tensor(rng, {3, 9, 7}, 0, 1), b = oracle::random_tensor(rng, {3, 9, 7}, 0, 1);
    long double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::pow(static_cast<long double>(a[i]) - b[i], 2);
    const double m = static_cast<double>(s / a.size());
    EXPECT_NEAR(mse(a, b), m, 1e-12);
    EXPECT_NEAR(psnr(a, b), -10 * std::log10(m), 1e-9);
}

TEST(Ssim, SelfIsOneAndAnticorrelatedIsNegative) {
    auto rng = SeededRng(3).stream("t");
    const Tensor x = oracle::random_tensor(rng, {3, 16, 16}, 0, 1);
    EXPECT_EQ(ssim(x, x), 1.0);
    Tensor bin({1, 12, 12}), inv({1, 12, 12});
    for (std::size_t i = 0; i < bin.size(); ++i) {
        bin[i] = rng.uniform() > 0.5 ? 1.0f : 0.0f;
        inv[i] = 1.0f - bin[i];
    }
    EXPECT_LT(ssim(bin, inv), 0.0);
}

TEST(Ssim, MatchesWindowedStatisticsOracle) {
    auto rng = SeededRng(4).stream("t");
    for (int i = 0; i < 5; ++i) {
        const Tensor a = oracle::random_tensor(rng, {1, 8, 8}, 0, 1), b = oracle::random_tensor(rng, {1, 8, 8}, 0, 1);
        EXPECT_NEAR(ssim(a, b), oracle::ssim(a, b), 1e-6);
    }
    const Tensor a = oracle::random_tensor(rng, {3, 20, 24}, 0, 1), b = oracle::random_tensor(rng, {3, 20, 24}, 0, 1);
    EXPECT_NEAR(ssim(a, b), oracle::ssim(a, b), 1e-6);
}

TEST(Ssim, RangeProperty) {
    auto rng = SeededRng(5).stream("t");
    for (int i = 0; i < 20; ++i) {
        const std::size_t H = oracle::random_size(rng, 3, 20), W = oracle::random_size(rng, 3, 20);
        const double v = ssim(oracle::random_tensor(rng, {3, H, W}, 0, 1), oracle::random_tensor(rng, {3, H, W}, 0, 1));
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(TotalLoss, PerfectRendersAreZero) {
    auto rng = SeededRng(6).stream("t");
    const Tensor c = oracle::random_tensor(rng, {3, 8, 8}, 0, 1), f = oracle::random_tensor(rng, {3, 16, 16}, 0, 1);
    EXPECT_EQ(total_loss({c, f}, {c, f}, LossWeights{}).total, 0.0);
}

TEST(TotalLoss, SingleStagePixelOnly) {
    auto rng = SeededRng(7).stream("t");
    const Tensor gt = oracle::random_tensor(rng, {3, 8, 8}, 0.2, 0.8);
    Tensor off = gt;
    for (auto& v : off.data()) v += 0.1f;
    const LossBreakdown l = total_loss({off}, {gt}, LossWeights{0, 0, {1.0}});
    EXPECT_NEAR(l.total, 0.01, 1e-8);
}

TEST(TotalLoss, KnownTermsWeightedSum) {
    std::vector<StageLoss> s(2);
    s[0] = {0.02, 0.3, 1.5, 0};
    s[1] = {0.01, 0.2, 0.7, 0};
    const LossBreakdown l = combine_loss_terms(s, LossWeights{});
    const double expect = 0.5 * (0.02 + 0.1 * 0.3 + 0.05 * 1.5) + 1.0 * (0.01 + 0.1 * 0.2 + 0.05 * 0.7);
    EXPECT_NEAR(l.total, expect, 1e-12);
    EXPECT_NEAR(l.stages[0].weighted, 0.5 * (0.02 + 0.03 + 0.075), 1e-12);
}

TEST(TotalLoss, StageCountMismatchThrows) {
    const Tensor x({3, 4, 4}, 0.5f);
    EXPECT_THROW(total_loss({x}, {x}, LossWeights{}), Error);
    EXPECT_THROW(total_loss({x, x}, {x}, LossWeights{}), Error);
    EXPECT_THROW(combine_loss_terms(std::vector<StageLoss>(2), LossWeights{-1, 0, {1, 1}}), Error);
}

TEST(DepthMetrics, IdentityAndOffset) {
    auto rng = SeededRng(8).stream("t");
    DepthMap gt{oracle::random_tensor(rng, {6, 7}, 400, 900), Mask(6, 7, true)};
    const DepthMetrics same = depth_metrics(gt, gt);
    EXPECT_EQ(same.abs_err, 0.0);
    EXPECT_EQ(same.acc_2, 1.0);
    EXPECT_EQ(same.acc_10, 1.0);
    EXPECT_EQ(same.within_1pct, 1.0);
    EXPECT_EQ(same.valid_pixels, 42u);
    DepthMap off = gt;
    for (auto& v : off.values.data()) v += 5;
    const DepthMetrics m = depth_metrics(off, gt);
    EXPECT_NEAR(m.abs_err, 5.0, 1e-4);
    EXPECT_EQ(m.acc_2, 0.0);
    EXPECT_EQ(m.acc_10, 1.0);
}

TEST(DepthMetrics, RandomPerturbationMatchesCountingOracle) {
    auto rng = SeededRng(9).stream("t");
    DepthMap gt{oracle::random_tensor(rng, {10, 12}, 400, 900), Mask(10, 12, true)};
    DepthMap pred{gt.values, Mask(10, 12, true)};
    for (auto& v : pred.values.data()) v += static_cast<float>(rng.uniform(-15, 15));
    pred.valid.set(0, 0, false);
    Mask extra(10, 12, true);
    extra.set(1, 1, false);
    const DepthMetrics m = depth_metrics(pred, gt, &extra);
    double sum = 0;
    std::size_t n = 0, a2 = 0, a10 = 0, rel = 0;
    for (std::size_t p = 0; p < 120; ++p) {
        if (p == 0 || p == 13) continue;
        const double e = std::abs(static_cast<double>(pred.values[p]) - gt.values[p]);
        sum += e;
        ++n;
        a2 += e < 2;
        a10 += e < 10;
        rel += e <= 0.01 * gt.values[p];
    }
    EXPECT_EQ(m.valid_pixels, n);
    EXPECT_NEAR(m.abs_err, sum / n, 1e-9);
    EXPECT_EQ(m.acc_2, static_cast<double>(a2) / n);
    EXPECT_EQ(m.acc_10, static_cast<double>(a10) / n);
    EXPECT_EQ(m.within_1pct, static_cast<double>(rel) / n);
}
