// Copyright Contributors to the c3gs project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "c3gs/camera.hpp"
#include "c3gs/cost_volume.hpp"
#include "c3gs/kernels.hpp"
#include "c3gs/tensor.hpp"
#include "c3gs/weights.hpp"

namespace c3gs {

/// Widths used by the cross-dimensional attention block.
struct CdaConfig {
    std::size_t feature_channels = 8;  // C of the per-view image features
    std::size_t view_hidden = 32;
    std::size_t aggregated = 16;       // width of F_u
    std::size_t attention_dim = 16;
    std::size_t gaussian_dim = 24;     // width of F_g
    std::string prefix = "cda";        // weight-name prefix

    std::size_t token_width() const { return feature_channels + 7; }
    std::size_t combined_width() const { return aggregated + kVoxelFeatureWidth; }
};

/// Per pixel and per source view: [C features | 3 RGB | 4 ray channels].
struct PerViewPixelFeatures {
    Tensor values;                    // HW x N x (C + 7)
    std::vector<std::uint8_t> valid;  // HW x N, sample landed inside the source image
    PointGrid points;                 // back-projected target pixels

    std::size_t pixels() const { return values.dim(0); }
    std::size_t views() const { return values.dim(1); }
    std::size_t width() const { return values.dim(2); }
};

/// Back-projects each target pixel at its depth, projects into every source view, and samples
/// that view's features and RGB; appends the target/source ray-difference channels.
/// Cameras must be expressed at the feature resolution.
inline PerViewPixelFeatures assemble_view_features(const PinholeCamera& target,
                                                   const std::vector<PinholeCamera>& sources,
                                                   const std::vector<Tensor>& features,
                                                   const std::vector<Tensor>& images, const DepthMap& depth) {
    const std::size_t N = sources.size();
    if (N == 0) throw Error("assemble_view_features: no source views");
    expect_extent("assemble_view_features", "feature count", features.size(), N);
    expect_extent("assemble_view_features", "image count", images.size(), N);
    const std::size_t C = features[0].dim(0);
    for (std::size_t i = 0; i < N; ++i) {
        expect_extent("assemble_view_features", "feature channels (axis 0)", features[i].dim(0), C);
        expect_extent("assemble_view_features", "image channels (axis 0)", images[i].dim(0), 3);
    }
    const std::size_t H = depth.height(), W = depth.width(), HW = H * W, T = C + 7;
    PerViewPixelFeatures out{Tensor({HW, N, T}), std::vector<std::uint8_t>(HW * N), backproject_depth(depth, target)};
    for (std::size_t i = 0; i < N; ++i) {
        const Tensor rays = ray_direction_features(target, sources[i], out.points);
        parallel_for(H, [&](std::size_t y) {
            std::vector<float> buf(C);
            std::vector<float> rgb(3);
            for (std::size_t x = 0; x < W; ++x) {
                const std::size_t p = y * W + x;
                const Eigen::Vector3d uvz = sources[i].project(out.points.points[p]);
                bool ok = uvz.z() > 0;
                if (ok) {
                    ok = bilinear_sample_point(features[i], uvz.x() - 0.5, uvz.y() - 0.5, buf);
                    bilinear_sample_point(images[i], uvz.x() - 0.5, uvz.y() - 0.5, rgb);
                } else {
                    std::fill(buf.begin(), buf.end(), 0.0f);
                    std::fill(rgb.begin(), rgb.end(), 0.0f);
                }
                out.valid[p * N + i] = ok;
                float* row = &out.values.at(p, i, 0);
                for (std::size_t c = 0; c < C; ++c) row[c] = buf[c];
                for (std::size_t c = 0; c < 3; ++c) row[C + c] = rgb[c];
                for (std::size_t c = 0; c < 4; ++c) row[C + 3 + c] = rays.at(c, y, x);
            }
        });
    }
    return out;
}

namespace detail {
// y = W x (+ b), double accumulation.
inline void linear(const Tensor& W, const Tensor* b, std::span<const double> x, std::span<double> y) {
    const std::size_t rows = W.dim(0), cols = W.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = b ? (*b)[r] : 0.0;
        const float* wr = W.data().data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
        y[r] = acc;
    }
}

inline std::vector<double> masked_weights(std::span<const std::uint8_t> valid) {
    std::vector<double> w(valid.size(), 0.0);
    std::size_t n = 0;
    for (auto v : valid) n += v != 0;
    for (std::size_t i = 0; i < valid.size(); ++i) w[i] = n == 0 ? 1.0 : (valid[i] ? 1.0 : 0.0);
    return w;
}
}  // namespace detail

/// Adds the attention and view-aggregation parameters under `cfg.prefix`.
inline void init_cda_weights(WeightStore& store, const SeededRng& rng, const CdaConfig& cfg) {
    auto lin = [&](const std::string& name, std::size_t out, std::size_t in, bool bias) {
        store.insert(name + ".weight", init_uniform(rng, name + ".weight", {out, in}, in));
        if (bias) store.insert(name + ".bias", init_uniform(rng, name + ".bias", {out}, in));
    };
    const std::size_t T = cfg.token_width(), Hd = cfg.view_hidden, A = cfg.aggregated;
    lin(cfg.prefix + ".unet.enc0", A, T, true);
    lin(cfg.prefix + ".unet.enc1", Hd, A, true);
    lin(cfg.prefix + ".unet.dec0", A, Hd, true);
    lin(cfg.prefix + ".unet.proj", A, A, true);
    const std::size_t Q = cfg.combined_width(), Dk = cfg.attention_dim, G = cfg.gaussian_dim;
    lin(cfg.prefix + ".attn.q", Dk, Q, false);
    lin(cfg.prefix + ".attn.k", Dk, T, false);
    lin(cfg.prefix + ".attn.v", Dk, T, false);
    lin(cfg.prefix + ".attn.o", G, Dk, false);
    if (G != Q) lin(cfg.prefix + ".attn.residual", G, Q, false);
}

/// Per-pixel view aggregation: a kernel-size-1 encoder/decoder along the view axis with a skip
/// connection, a mean over (in-bounds) views, and a linear projection to `aggregated` channels.
/// Every per-view step is shared, so the result does not depend on view order.
inline Tensor view_unet_aggregate(const PerViewPixelFeatures& feats, const WeightStore& store, const CdaConfig& cfg) {
    const std::size_t N = feats.views(), T = feats.width(), Hd = cfg.view_hidden, A = cfg.aggregated;
    if (N < 2) throw Error("view_unet_aggregate: at least 2 source views are required");
    expect_extent("view_unet_aggregate", "token width (axis 2)", T, cfg.token_width());
    const Tensor& We0 = store.get(cfg.prefix + ".unet.enc0.weight", {A, T});
    const Tensor& be0 = store.get(cfg.prefix + ".unet.enc0.bias", {A});
    const Tensor& We1 = store.get(cfg.prefix + ".unet.enc1.weight", {Hd, A});
    const Tensor& be1 = store.get(cfg.prefix + ".unet.enc1.bias", {Hd});
    const Tensor& Wd0 = store.get(cfg.prefix + ".unet.dec0.weight", {A, Hd});
    const Tensor& bd0 = store.get(cfg.prefix + ".unet.dec0.bias", {A});
    const Tensor& Wp = store.get(cfg.prefix + ".unet.proj.weight", {A, A});
    const Tensor& bp = store.get(cfg.prefix + ".unet.proj.bias", {A});
    const std::size_t HW = feats.pixels();
    Tensor out({HW, A});
    parallel_for(HW, [&](std::size_t p) {
        std::vector<double> x(T), e0(A), e1(Hd), d0(A), pooled(A, 0.0), y(A);
        const auto w = detail::masked_weights(std::span(feats.valid).subspan(p * N, N));
        double wsum = 0;
        for (std::size_t i = 0; i < N; ++i) {
            const float* row = feats.values.data().data() + (p * N + i) * T;
            for (std::size_t c = 0; c < T; ++c) x[c] = row[c];
            detail::linear(We0, &be0, x, e0);
            for (auto& v : e0) v = relu(v);
            detail::linear(We1, &be1, e0, e1);
            for (auto& v : e1) v = relu(v);
            detail::linear(Wd0, &bd0, e1, d0);
            for (std::size_t c = 0; c < A; ++c) d0[c] = relu(d0[c]) + e0[c];
            for (std::size_t c = 0; c < A; ++c) pooled[c] += w[i] * d0[c];
            wsum += w[i];
        }
        for (auto& v : pooled) v /= wsum;
        detail::linear(Wp, &bp, pooled, y);
        for (std::size_t c = 0; c < A; ++c) out.at(p, c) = static_cast<float>(y[c]);
    }, 64);
    return out;
}

/// F_c = [F_u | C_v], F_u first.
inline Tensor fuse_combined(const Tensor& aggregated, const Tensor& voxel) {
    expect_rank("fuse_combined", "F_u", aggregated, 2);
    expect_rank("fuse_combined", "C_v", voxel, 2);
    expect_extent("fuse_combined", "C_v rows (axis 0)", voxel.dim(0), aggregated.dim(0));
    const std::size_t HW = aggregated.dim(0), A = aggregated.dim(1), V = voxel.dim(1);
    Tensor out({HW, A + V});
    for (std::size_t p = 0; p < HW; ++p) {
        for (std::size_t c = 0; c < A; ++c) out.at(p, c) = aggregated.at(p, c);
        for (std::size_t c = 0; c < V; ++c) out.at(p, A + c) = voxel.at(p, c);
    }
    return out;
}

struct AttentionResult {
    Tensor features;  // HW x Dg
    Tensor weights;   // HW x N, rows sum to 1
};

/// Single-head scaled dot-product attention per pixel: one query from F_c against the N view
/// tokens; out = W_o sum_i a_i v_i + residual(F_c). Tokens whose `valid` flag is clear are
/// excluded unless no token is valid.
inline AttentionResult cross_dimensional_attention(const Tensor& combined, const Tensor& tokens,
                                                   const std::vector<std::uint8_t>& valid,
                                                   const WeightStore& store, const CdaConfig& cfg) {
    expect_rank("cross_dimensional_attention", "F_c", combined, 2);
    expect_rank("cross_dimensional_attention", "tokens", tokens, 3);
    const std::size_t HW = combined.dim(0), Q = combined.dim(1), N = tokens.dim(1), T = tokens.dim(2);
    if (N == 0) throw Error("cross_dimensional_attention: no view tokens");
    expect_extent("cross_dimensional_attention", "token rows (axis 0)", tokens.dim(0), HW);
    if (!valid.empty()) expect_extent("cross_dimensional_attention", "mask length", valid.size(), HW * N);
    const std::size_t Dk = cfg.attention_dim, G = cfg.gaussian_dim;
    const Tensor& Wq = store.get(cfg.prefix + ".attn.q.weight", {Dk, Q});
    const Tensor& Wk = store.get(cfg.prefix + ".attn.k.weight", {Dk, T});
    const Tensor& Wv = store.get(cfg.prefix + ".attn.v.weight", {Dk, T});
    const Tensor& Wo = store.get(cfg.prefix + ".attn.o.weight", {G, Dk});
    const Tensor* Wr = G == Q ? nullptr : &store.get(cfg.prefix + ".attn.residual.weight", {G, Q});
    const double scale = 1.0 / std::sqrt(static_cast<double>(Dk));

    AttentionResult res{Tensor({HW, G}), Tensor({HW, N})};
    parallel_for(HW, [&](std::size_t p) {
        std::vector<double> fc(Q), q(Dk), x(T), k(Dk), v(Dk), ctx(Dk, 0.0), o(G), r(G);
        std::vector<double> scores(N), values(N * Dk);
        for (std::size_t c = 0; c < Q; ++c) fc[c] = combined.at(p, c);
        detail::linear(Wq, nullptr, fc, q);
        std::vector<double> w = valid.empty() ? std::vector<double>(N, 1.0)
                                              : detail::masked_weights(std::span(valid).subspan(p * N, N));
        double mx = -INFINITY;
        for (std::size_t i = 0; i < N; ++i) {
            const float* row = tokens.data().data() + (p * N + i) * T;
            for (std::size_t c = 0; c < T; ++c) x[c] = row[c];
            detail::linear(Wk, nullptr, x, k);
            detail::linear(Wv, nullptr, x, std::span(values).subspan(i * Dk, Dk));
            double s = 0;
            for (std::size_t c = 0; c < Dk; ++c) s += q[c] * k[c];
            scores[i] = s * scale;
            if (w[i] > 0) mx = std::max(mx, scores[i]);
        }
        double sum = 0;
        for (std::size_t i = 0; i < N; ++i) {
            scores[i] = w[i] > 0 ? std::exp(scores[i] - mx) : 0.0;
            sum += scores[i];
        }
        for (std::size_t i = 0; i < N; ++i) {
            const double a = scores[i] / sum;
            res.weights.at(p, i) = static_cast<float>(a);
            for (std::size_t c = 0; c < Dk; ++c) ctx[c] += a * values[i * Dk + c];
        }
        detail::linear(Wo, nullptr, ctx, o);
        if (Wr) {
            detail::linear(*Wr, nullptr, fc, r);
        } else {
            r = fc;
        }
        for (std::size_t c = 0; c < G; ++c) res.features.at(p, c) = static_cast<float>(o[c] + r[c]);
    }, 64);
    return res;
}

}  // namespace c3gs
