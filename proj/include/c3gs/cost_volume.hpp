// Copyright Contributors to the c3gs project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "c3gs/camera.hpp"
#include "c3gs/kernels.hpp"
#include "c3gs/tensor.hpp"
#include "c3gs/weights.hpp"

namespace c3gs {

/// Plane-sweep matching cost: per-channel variance of the warped source features.
struct CostVolume {
    Tensor values;               // G x D x H x W
    DepthHypotheses hypotheses;  // D x H x W
    std::vector<std::uint8_t> view_count;  // D x H x W, number of in-bounds views per voxel

    std::size_t channels() const { return values.dim(0); }
    std::size_t depth_count() const { return values.dim(1); }
    std::size_t height() const { return values.dim(2); }
    std::size_t width() const { return values.dim(3); }
    std::uint8_t views_at(std::size_t d, std::size_t y, std::size_t x) const {
        return view_count[(d * height() + y) * width() + x];
    }
};

/// Softmax-normalized matching evidence along D.
struct ProbabilityVolume {
    Tensor values;  // D x H x W
};

enum class RegularizerMode { Learned, Bypass };

struct RegularizerOutput {
    Tensor logits;    // D x H x W
    Tensor features;  // 8 x D x H x W penultimate volume (learned mode only)
};

inline constexpr std::size_t kVoxelFeatureWidth = 8;

/// Warps every source feature into the target frustum at each hypothesis depth and reduces
/// across views by per-channel variance over the views whose sample is in bounds.
/// Cameras must already be expressed at the feature resolution.
inline CostVolume build_cost_volume(const PinholeCamera& target, const std::vector<PinholeCamera>& sources,
                                    const std::vector<Tensor>& features, const DepthHypotheses& hypotheses) {
    if (sources.size() < 2) throw Error("build_cost_volume: at least 2 source views are required");
    expect_extent("build_cost_volume", "feature count", features.size(), sources.size());
    expect_rank("build_cost_volume", "hypotheses", hypotheses.values, 3);
    for (const auto& f : features) {
        expect_rank("build_cost_volume", "source feature", f, 3);
        expect_extent("build_cost_volume", "source feature channels (axis 0)", f.dim(0), features[0].dim(0));
        expect_extent("build_cost_volume", "source feature height (axis 1)", f.dim(1), features[0].dim(1));
        expect_extent("build_cost_volume", "source feature width (axis 2)", f.dim(2), features[0].dim(2));
    }
    const std::size_t N = sources.size(), C = features[0].dim(0);
    const std::size_t D = hypotheses.values.dim(0), H = hypotheses.values.dim(1), W = hypotheses.values.dim(2);

    // Per view, H(z) = A + B / z with A = K_s R_rel K_t^-1 and B = K_s t_rel n^T K_t^-1.
    std::vector<Eigen::Matrix3d> A(N), B(N);
    const Eigen::Matrix3d Kt_inv = target.K.inverse();
    for (std::size_t i = 0; i < N; ++i) {
        Eigen::Matrix3d R_rel;
        Eigen::Vector3d t_rel;
        relative_pose(sources[i], target, R_rel, t_rel);
        A[i] = sources[i].K * R_rel * Kt_inv;
        B[i] = sources[i].K * t_rel * Eigen::Vector3d(0, 0, 1).transpose() * Kt_inv;
    }

    CostVolume vol{Tensor({C, D, H, W}), hypotheses, std::vector<std::uint8_t>(D * H * W)};
    parallel_for(D * H, [&](std::size_t row) {
        const std::size_t d = row / H, y = row % H;
        std::vector<float> samples(N * C);
        std::vector<std::uint8_t> ok(N);
        for (std::size_t x = 0; x < W; ++x) {
            const double z = hypotheses.values.at(d, y, x);
            std::size_t n = 0;
            for (std::size_t i = 0; i < N; ++i) {
                const Eigen::Matrix3d Hz = A[i] + B[i] / z;
                double sx, sy;
                std::span<float> dst(samples.data() + i * C, C);
                ok[i] = warp_coordinate(Hz, x, y, sx, sy) && bilinear_sample_point(features[i], sx, sy, dst);
                n += ok[i];
            }
            vol.view_count[(d * H + y) * W + x] = static_cast<std::uint8_t>(std::min<std::size_t>(n, 255));
            for (std::size_t c = 0; c < C; ++c) {
                double var = 0;
                if (n > 0) {
                    double mean = 0;
                    for (std::size_t i = 0; i < N; ++i)
                        if (ok[i]) mean += samples[i * C + c];
                    mean /= static_cast<double>(n);
                    for (std::size_t i = 0; i < N; ++i)
                        if (ok[i]) {
                            const double e = samples[i * C + c] - mean;
                            var += e * e;
                        }
                    var /= static_cast<double>(n);
                }
                vol.values.at(c, d, y, x) = static_cast<float>(var);
            }
        }
    });
    return vol;
}

/// Adds the "reg." parameters of the learned 3D regularizer.
inline void init_regularizer_weights(WeightStore& store, const SeededRng& rng, const std::string& prefix,
                                     std::size_t in_channels) {
    init_conv(store, rng, prefix + ".conv0", 8, in_channels, 3, 3);
    init_conv(store, rng, prefix + ".down", 16, 8, 3, 3);
    init_conv(store, rng, prefix + ".up", 8, 16, 3, 3);
    init_conv(store, rng, prefix + ".head", 1, 8, 3, 3);
}

/// Learned mode: two-scale 3D encoder-decoder (8 and 16 channels, trilinear upsampling and a
/// skip connection) collapsing G channels to one logit per voxel. Bypass mode: logits are the
/// negated mean cost; voxels seen by fewer than two views inherit the worst supported logit
/// of their pixel.
inline RegularizerOutput regularize(const CostVolume& volume, const WeightStore* store, RegularizerMode mode,
                                    const std::string& prefix = "reg") {
    const std::size_t G = volume.channels(), D = volume.depth_count(), H = volume.height(), W = volume.width();
    if (mode == RegularizerMode::Bypass) {
        RegularizerOutput out{Tensor({D, H, W}), Tensor()};
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                double worst = INFINITY;
                bool any = false;
                for (std::size_t d = 0; d < D; ++d) {
                    double s = 0;
                    for (std::size_t g = 0; g < G; ++g) s += volume.values.at(g, d, y, x);
                    const double logit = -s / static_cast<double>(G);
                    out.logits.at(d, y, x) = static_cast<float>(logit);
                    if (volume.views_at(d, y, x) >= 2) {
                        worst = std::min(worst, logit);
                        any = true;
                    }
                }
                for (std::size_t d = 0; d < D; ++d) {
                    if (volume.views_at(d, y, x) >= 2) continue;
                    out.logits.at(d, y, x) = any ? static_cast<float>(worst) : 0.0f;
                }
            }
        }
        return out;
    }
    if (!store) throw Error("regularize: learned mode requires weights");
    auto c0 = load_conv(*store, prefix + ".conv0", 8, G, 3, 3);
    auto down = load_conv(*store, prefix + ".down", 16, 8, 3, 3);
    auto up = load_conv(*store, prefix + ".up", 8, 16, 3, 3);
    auto head = load_conv(*store, prefix + ".head", 1, 8, 3, 3);
    Tensor e0 = relu_inplace(conv3d(volume.values, c0.weight, c0.bias));
    Tensor e1 = relu_inplace(conv3d(e0, down.weight, down.bias, 2));
    Tensor u = resize_trilinear(e1, D, H, W);
    Tensor d0 = conv3d(u, up.weight, up.bias);
    for (std::size_t i = 0; i < d0.size(); ++i) d0[i] = std::max(0.0f, d0[i] + e0[i]);
    Tensor logits = conv3d(d0, head.weight, head.bias).reshaped({D, H, W});
    return {std::move(logits), std::move(d0)};
}

inline ProbabilityVolume to_probability(const Tensor& logits, double temperature = 1.0) {
    expect_rank("to_probability", "logits", logits, 3);
    return {softmax_axis(logits, 0, temperature)};
}

/// Soft-argmax depth: sum_d P(d) * depth_d. When `volume` is given, a pixel is valid only if the
/// hypothesis nearest its regressed depth is seen by at least two views.
inline DepthMap regress_depth(const ProbabilityVolume& prob, const DepthHypotheses& hypotheses,
                              const CostVolume* volume = nullptr) {
    const Tensor& P = prob.values;
    expect_rank("regress_depth", "probability", P, 3);
    if (P.shape() != hypotheses.values.shape()) {
        throw ShapeError("regress_depth: probability shape " + shape_to_string(P.shape()) +
                         " does not match hypotheses " + shape_to_string(hypotheses.values.shape()));
    }
    const std::size_t D = P.dim(0), H = P.dim(1), W = P.dim(2);
    DepthMap out{Tensor({H, W}), Mask(H, W, true)};
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            double z = 0;
            for (std::size_t d = 0; d < D; ++d) z += static_cast<double>(P.at(d, y, x)) * hypotheses.values.at(d, y, x);
            z = std::clamp(z, static_cast<double>(hypotheses.values.at(0, y, x)),
                           static_cast<double>(hypotheses.values.at(D - 1, y, x)));
            out.values.at(y, x) = static_cast<float>(z);
            if (volume) {
                std::size_t best = 0;
                double best_dist = INFINITY;
                for (std::size_t d = 0; d < D; ++d) {
                    const double dist = std::abs(hypotheses.values.at(d, y, x) - z);
                    if (dist < best_dist) {
                        best_dist = dist;
                        best = d;
                    }
                }
                out.valid.set(y, x, volume->views_at(best, y, x) >= 2);
            }
        }
    }
    return out;
}

/// Continuous hypothesis index of depth z at pixel (y, x), clamped to [0, D - 1].
inline double hypothesis_index(const DepthHypotheses& hyp, std::size_t y, std::size_t x, double z) {
    const std::size_t D = hyp.count();
    if (z <= hyp.values.at(0, y, x)) return 0.0;
    if (z >= hyp.values.at(D - 1, y, x)) return static_cast<double>(D - 1);
    for (std::size_t k = 0; k + 1 < D; ++k) {
        const double lo = hyp.values.at(k, y, x), hi = hyp.values.at(k + 1, y, x);
        if (z <= hi) return static_cast<double>(k) + (z - lo) / (hi - lo);
    }
    return static_cast<double>(D - 1);
}

namespace detail {
inline double interp_depth_axis(const Tensor& vol, std::size_t c, double idx, std::size_t y, std::size_t x) {
    const std::size_t D = vol.dim(1);
    idx = std::clamp(idx, 0.0, static_cast<double>(D - 1));
    const std::size_t k0 = static_cast<std::size_t>(std::floor(idx));
    const std::size_t k1 = std::min(k0 + 1, D - 1);
    const double f = idx - static_cast<double>(k0);
    return (1 - f) * vol.at(c, k0, y, x) + f * vol.at(c, k1, y, x);
}
}  // namespace detail

/// Per-pixel voxel features (HW x 8, pixel-major): the 8-channel volume sampled along D at
/// each pixel's regressed depth. Depths outside the hypothesis range clamp to the end bins.
inline Tensor sample_voxel_features(const Tensor& volume8, const DepthHypotheses& hyp, const DepthMap& depth) {
    expect_rank("sample_voxel_features", "volume", volume8, 4);
    expect_extent("sample_voxel_features", "volume channel axis (0)", volume8.dim(0), kVoxelFeatureWidth);
    const std::size_t H = depth.height(), W = depth.width();
    expect_extent("sample_voxel_features", "volume depth axis (1)", volume8.dim(1), hyp.count());
    expect_extent("sample_voxel_features", "volume height axis (2)", volume8.dim(2), H);
    expect_extent("sample_voxel_features", "volume width axis (3)", volume8.dim(3), W);
    Tensor out({H * W, kVoxelFeatureWidth});
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const double idx = hypothesis_index(hyp, y, x, depth.values.at(y, x));
            for (std::size_t c = 0; c < kVoxelFeatureWidth; ++c)
                out.at(y * W + x, c) = static_cast<float>(detail::interp_depth_axis(volume8, c, idx, y, x));
        }
    return out;
}

/// Bypass-mode voxel features: the negated mean cost sampled at the 8 offsets
/// idx - 3.5, ..., idx + 3.5 around each pixel's continuous hypothesis index.
inline Tensor bypass_voxel_features(const Tensor& logits, const DepthHypotheses& hyp, const DepthMap& depth) {
    expect_rank("bypass_voxel_features", "logits", logits, 3);
    const std::size_t D = logits.dim(0), H = depth.height(), W = depth.width();
    Tensor vol = logits.reshaped({1, D, logits.dim(1), logits.dim(2)});
    Tensor out({H * W, kVoxelFeatureWidth});
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const double idx = hypothesis_index(hyp, y, x, depth.values.at(y, x));
            for (std::size_t j = 0; j < kVoxelFeatureWidth; ++j) {
                const double at = idx + static_cast<double>(j) - 3.5;
                out.at(y * W + x, j) = static_cast<float>(detail::interp_depth_axis(vol, 0, at, y, x));
            }
        }
    return out;
}

}  // namespace c3gs
