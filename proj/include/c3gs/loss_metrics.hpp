// Copyright Contributors to the c3gs project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "c3gs/camera.hpp"
#include "c3gs/tensor.hpp"

namespace c3gs {

inline constexpr double kPsnrCap = 99.0;

namespace detail {
inline void check_image_pair(const char* op, const Tensor& pred, const Tensor& gt) {
    if (pred.shape() != gt.shape()) {
        throw ShapeError(std::string(op) + ": prediction shape " + shape_to_string(pred.shape()) +
                         " does not match reference " + shape_to_string(gt.shape()));
    }
    if (pred.size() == 0) throw ShapeError(std::string(op) + ": empty image");
}
}  // namespace detail

inline double mse(const Tensor& pred, const Tensor& gt) {
    detail::check_image_pair("mse", pred, gt);
    double acc = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred[i]) - gt[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

/// 10 log10(1 / MSE) for unit-range images, capped at 99 dB.
inline double psnr(const Tensor& pred, const Tensor& gt) {
    const double e = mse(pred, gt);
    if (e <= 0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / e));
}

/// Side length of the SSIM window used for an H x W image: 11, or the largest odd size that fits.
inline std::size_t ssim_window_size(std::size_t height, std::size_t width) {
    std::size_t k = std::min<std::size_t>({11, height, width});
    if (k % 2 == 0) --k;
    return k;
}

/// Normalized 2D Gaussian window (sigma 1.5), row-major k x k.
inline std::vector<double> ssim_window(std::size_t k, double sigma = 1.5) {
    std::vector<double> g(k);
    const double c = (static_cast<double>(k) - 1) / 2;
    double sum = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const double d = static_cast<double>(i) - c;
        g[i] = std::exp(-d * d / (2 * sigma * sigma));
        sum += g[i];
    }
    for (auto& v : g) v /= sum;
    std::vector<double> w(k * k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) w[i * k + j] = g[i] * g[j];
    return w;
}

/// Single-scale SSIM on C x H x W images in [0, 1], averaged over valid window positions and channels.
inline double ssim(const Tensor& pred, const Tensor& gt) {
    detail::check_image_pair("ssim", pred, gt);
    expect_rank("ssim", "image", pred, 3);
    constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    const std::size_t C = pred.dim(0), H = pred.dim(1), W = pred.dim(2);
    const std::size_t k = ssim_window_size(H, W);
    const auto win = ssim_window(k);
    double total = 0;
    std::size_t windows = 0;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y0 = 0; y0 + k <= H; ++y0) {
            for (std::size_t x0 = 0; x0 + k <= W; ++x0) {
                double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
                for (std::size_t i = 0; i < k; ++i) {
                    for (std::size_t j = 0; j < k; ++j) {
                        const double w = win[i * k + j];
                        const double a = pred.at(c, y0 + i, x0 + j), b = gt.at(c, y0 + i, x0 + j);
                        ma += w * a;
                        mb += w * b;
                        aa += w * a * a;
                        bb += w * b * b;
                        ab += w * a * b;
                    }
                }
                const double va = aa - ma * ma, vb = bb - mb * mb, cov = ab - ma * mb;
                total += ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
                ++windows;
            }
        }
    }
    return total / static_cast<double>(windows);
}

// ---------------------------------------------------------------------------
// Training objective
// ---------------------------------------------------------------------------

struct LossWeights {
    double beta_s = 0.1;
    double beta_p = 0.05;
    std::vector<double> gamma = {0.5, 1.0};  // coarse, fine
};

/// Perceptual term plug-in: (render, reference) -> nonnegative scalar.
using PerceptualLoss = std::function<double(const Tensor&, const Tensor&)>;

struct StageLoss {
    double pixel = 0;      // MSE
    double structure = 0;  // 1 - SSIM
    double feature = 0;    // perceptual plug-in, 0 without one
    double weighted = 0;   // gamma * (pixel + beta_s structure + beta_p feature)
};

struct LossBreakdown {
    double total = 0;
    std::vector<StageLoss> stages;
};

/// Weighted sum over stages of pixel + beta_s * structure + beta_p * feature, given per-term values.
inline LossBreakdown combine_loss_terms(std::vector<StageLoss> stages, const LossWeights& weights) {
    if (stages.size() != weights.gamma.size()) {
        throw Error("total_loss: " + std::to_string(stages.size()) + " stages but " +
                    std::to_string(weights.gamma.size()) + " stage weights");
    }
    if (weights.beta_s < 0 || weights.beta_p < 0) throw Error("total_loss: loss weights must be nonnegative");
    LossBreakdown out;
    for (std::size_t l = 0; l < stages.size(); ++l) {
        if (weights.gamma[l] < 0) throw Error("total_loss: stage weights must be nonnegative");
        auto& s = stages[l];
        s.weighted = weights.gamma[l] * (s.pixel + weights.beta_s * s.structure + weights.beta_p * s.feature);
        out.total += s.weighted;
    }
    out.stages = std::move(stages);
    return out;
}

/// Per-stage renders against per-stage references (each stage at its own resolution).
inline LossBreakdown total_loss(const std::vector<Tensor>& renders, const std::vector<Tensor>& references,
                                const LossWeights& weights, const PerceptualLoss& perceptual = {}) {
    if (renders.size() != references.size()) {
        throw Error("total_loss: " + std::to_string(renders.size()) + " renders but " +
                    std::to_string(references.size()) + " references");
    }
    std::vector<StageLoss> stages(renders.size());
    for (std::size_t l = 0; l < renders.size(); ++l) {
        stages[l].pixel = mse(renders[l], references[l]);
        stages[l].structure = 1.0 - ssim(renders[l], references[l]);
        stages[l].feature = perceptual ? perceptual(renders[l], references[l]) : 0.0;
    }
    return combine_loss_terms(std::move(stages), weights);
}

// ---------------------------------------------------------------------------
// Depth metrics
// ---------------------------------------------------------------------------

struct DepthMetrics {
    double abs_err = 0;
    double acc_2 = 0;   // fraction with |err| < near threshold
    double acc_10 = 0;  // fraction with |err| < far threshold
    double within_1pct = 0;  // fraction with |err| <= 1% of the reference depth
    std::size_t valid_pixels = 0;
};

/// Metrics over pixels valid in pred, gt and the optional extra mask. Thresholds are in scene units.
inline DepthMetrics depth_metrics(const DepthMap& pred, const DepthMap& gt, const Mask* mask = nullptr,
                                  double near_threshold = 2.0, double far_threshold = 10.0) {
    if (pred.values.shape() != gt.values.shape()) {
        throw ShapeError("depth_metrics: prediction shape " + shape_to_string(pred.values.shape()) +
                         " does not match reference " + shape_to_string(gt.values.shape()));
    }
    if (mask && (mask->height != gt.height() || mask->width != gt.width())) {
        throw ShapeError("depth_metrics: mask extent does not match depth maps");
    }
    DepthMetrics m;
    double err_sum = 0;
    std::size_t near = 0, far = 0, relative = 0;
    for (std::size_t y = 0; y < gt.height(); ++y) {
        for (std::size_t x = 0; x < gt.width(); ++x) {
            if (!pred.valid(y, x) || !gt.valid(y, x) || (mask && !(*mask)(y, x))) continue;
            const double e = std::abs(static_cast<double>(pred.values.at(y, x)) - gt.values.at(y, x));
            err_sum += e;
            near += e < near_threshold;
            far += e < far_threshold;
            relative += e <= 0.01 * gt.values.at(y, x);
            ++m.valid_pixels;
        }
    }
    if (m.valid_pixels == 0) return m;
    const double n = static_cast<double>(m.valid_pixels);
    m.abs_err = err_sum / n;
    m.acc_2 = static_cast<double>(near) / n;
    m.acc_10 = static_cast<double>(far) / n;
    m.within_1pct = static_cast<double>(relative) / n;
    return m;
}

}  // namespace c3gs
