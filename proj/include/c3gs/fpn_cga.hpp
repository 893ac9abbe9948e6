// Copyright Contributors to the c3gs project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "c3gs/kernels.hpp"
#include "c3gs/rng.hpp"
#include "c3gs/tensor.hpp"
#include "c3gs/weights.hpp"

namespace c3gs {

/// Channel widths of the two pyramid levels.
struct FpnConfig {
    std::size_t coarse_width = 16;  // level at H/4
    std::size_t fine_width = 8;     // level at H/2
    std::size_t attention_kernel = 3;
};

/// levels[0] is the coarse level; levels[1] has twice its height and width.
struct FeaturePyramid {
    std::vector<Tensor> levels;

    const Tensor& coarse() const { return levels.at(0); }
    const Tensor& fine() const { return levels.at(1); }
};

/// Axis attention maps: A_h is C x H x 1, A_w is C x 1 x W; all values in (0, 1).
struct CgaAttentionMaps {
    Tensor along_height;
    Tensor along_width;
};

/// Directional average pooling: T_h(x, h) = mean_w F(x, h, w); T_w(x, w) = mean_h F(x, h, w).
inline std::pair<Tensor, Tensor> cga_pool(const Tensor& feature) {
    expect_rank("cga_pool", "feature", feature, 3);
    const std::size_t C = feature.dim(0), H = feature.dim(1), W = feature.dim(2);
    Tensor th({C, H, 1}), tw({C, 1, W});
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t h = 0; h < H; ++h) {
            double s = 0;
            for (std::size_t w = 0; w < W; ++w) s += feature.at(c, h, w);
            th.at(c, h, 0) = static_cast<float>(s / static_cast<double>(W));
        }
        for (std::size_t w = 0; w < W; ++w) {
            double s = 0;
            for (std::size_t h = 0; h < H; ++h) s += feature.at(c, h, w);
            tw.at(c, 0, w) = static_cast<float>(s / static_cast<double>(H));
        }
    }
    return {std::move(th), std::move(tw)};
}

/// Concatenates the pooled descriptors along the spatial axis (C x (H + W)), applies one
/// same-padded Conv1D and a sigmoid, then splits back into the two axis maps.
inline CgaAttentionMaps cga_attention(const Tensor& pooled_h, const Tensor& pooled_w, const Tensor& weight,
                                      const Tensor& bias) {
    expect_rank("cga_attention", "T_h", pooled_h, 3);
    expect_rank("cga_attention", "T_w", pooled_w, 3);
    const std::size_t C = pooled_h.dim(0), H = pooled_h.dim(1), W = pooled_w.dim(2);
    expect_extent("cga_attention", "T_w channel axis (0)", pooled_w.dim(0), C);
    expect_extent("cga_attention", "conv output channels (axis 0)", weight.dim(0), C);
    Tensor cat({C, H + W});
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t h = 0; h < H; ++h) cat.at(c, h) = pooled_h.at(c, h, 0);
        for (std::size_t w = 0; w < W; ++w) cat.at(c, H + w) = pooled_w.at(c, 0, w);
    }
    Tensor logits = conv1d(cat, weight, bias);
    CgaAttentionMaps maps{Tensor({C, H, 1}), Tensor({C, 1, W})};
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t h = 0; h < H; ++h) maps.along_height.at(c, h, 0) = static_cast<float>(sigmoid(logits.at(c, h)));
        for (std::size_t w = 0; w < W; ++w)
            maps.along_width.at(c, 0, w) = static_cast<float>(sigmoid(logits.at(c, H + w)));
    }
    return maps;
}

/// out(x, h, w) = A_h(x, h) * A_w(x, w) * F(x, h, w).
inline Tensor cga_modulate(const Tensor& feature, const CgaAttentionMaps& maps) {
    expect_rank("cga_modulate", "feature", feature, 3);
    const std::size_t C = feature.dim(0), H = feature.dim(1), W = feature.dim(2);
    expect_extent("cga_modulate", "A_h height (axis 1)", maps.along_height.dim(1), H);
    expect_extent("cga_modulate", "A_w width (axis 2)", maps.along_width.dim(2), W);
    expect_extent("cga_modulate", "A_h channels (axis 0)", maps.along_height.dim(0), C);
    expect_extent("cga_modulate", "A_w channels (axis 0)", maps.along_width.dim(0), C);
    Tensor out({C, H, W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t h = 0; h < H; ++h) {
            const float ah = maps.along_height.at(c, h, 0);
            for (std::size_t w = 0; w < W; ++w) out.at(c, h, w) = ah * maps.along_width.at(c, 0, w) * feature.at(c, h, w);
        }
    return out;
}

/// upsample_x2(coarse) + modulated fine level.
inline Tensor cga_fuse_levels(const Tensor& coarse, const Tensor& fine_modulated) {
    expect_rank("cga_fuse_levels", "coarse level", coarse, 3);
    expect_rank("cga_fuse_levels", "fine level", fine_modulated, 3);
    expect_extent("cga_fuse_levels", "fine channel axis (0)", fine_modulated.dim(0), coarse.dim(0));
    expect_extent("cga_fuse_levels", "fine height axis (1)", fine_modulated.dim(1), 2 * coarse.dim(1));
    expect_extent("cga_fuse_levels", "fine width axis (2)", fine_modulated.dim(2), 2 * coarse.dim(2));
    Tensor out = bilinear_upsample_x2(coarse);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += fine_modulated[i];
    return out;
}

/// Full CGA block for one level pair: attention from the fine level's own pooled
/// descriptors, modulation, then fusion with the upsampled coarse level.
inline Tensor cga_block(const Tensor& coarse, const Tensor& fine, const Tensor& weight, const Tensor& bias) {
    auto [th, tw] = cga_pool(fine);
    auto maps = cga_attention(th, tw, weight, bias);
    return cga_fuse_levels(coarse, cga_modulate(fine, maps));
}

/// Adds every "fpn." and "cga." parameter to the store.
inline void init_fpn_weights(WeightStore& store, const SeededRng& rng, const FpnConfig& cfg) {
    const std::size_t cf = cfg.fine_width, cc = cfg.coarse_width;
    init_conv(store, rng, "fpn.enc1.conv0", cf, 3, 3, 2);
    init_conv(store, rng, "fpn.enc1.conv1", cf, cf, 3, 2);
    init_conv(store, rng, "fpn.enc2.conv0", cc, cf, 3, 2);
    init_conv(store, rng, "fpn.enc2.conv1", cc, cc, 3, 2);
    init_conv(store, rng, "fpn.lateral_coarse", cc, cc, 1, 2);
    init_conv(store, rng, "fpn.lateral_fine", cc, cf, 1, 2);
    init_conv(store, rng, "fpn.out_fine", cf, cc, 3, 2);
    init_conv(store, rng, "cga.conv", cc, cc, cfg.attention_kernel, 1);
}

/// Two-level feature pyramid: a strided encoder yields H/2 and H/4 maps, 1x1 lateral convs
/// bring both to the coarse width, CGA fuses them, and a 3x3 conv produces the fine output.
inline FeaturePyramid extract_pyramid(const Tensor& image, const WeightStore& store, const FpnConfig& cfg) {
    expect_rank("extract_pyramid", "image", image, 3);
    expect_extent("extract_pyramid", "image channel axis (0)", image.dim(0), 3);
    if (image.dim(1) % 4 || image.dim(2) % 4) {
        throw ShapeError("extract_pyramid: image height and width must be divisible by 4, got " +
                         shape_to_string(image.shape()));
    }
    const std::size_t cf = cfg.fine_width, cc = cfg.coarse_width;
    auto conv = [&](const Tensor& x, const char* name, std::size_t out, std::size_t in, std::size_t k,
                    std::size_t stride) {
        auto p = load_conv(store, name, out, in, k, 2);
        return conv2d(x, p.weight, p.bias, stride);
    };
    Tensor half = relu_inplace(conv(image, "fpn.enc1.conv0", cf, 3, 3, 2));
    half = relu_inplace(conv(half, "fpn.enc1.conv1", cf, cf, 3, 1));
    Tensor quarter = relu_inplace(conv(half, "fpn.enc2.conv0", cc, cf, 3, 2));
    quarter = relu_inplace(conv(quarter, "fpn.enc2.conv1", cc, cc, 3, 1));

    Tensor coarse = conv(quarter, "fpn.lateral_coarse", cc, cc, 1, 1);
    Tensor fine_lateral = conv(half, "fpn.lateral_fine", cc, cf, 1, 1);
    auto attn = load_conv(store, "cga.conv", cc, cc, cfg.attention_kernel, 1);
    Tensor fused = cga_block(coarse, fine_lateral, attn.weight, attn.bias);
    Tensor fine = conv(fused, "fpn.out_fine", cf, cc, 3, 1);
    return FeaturePyramid{{std::move(coarse), std::move(fine)}};
}

}  // namespace c3gs
