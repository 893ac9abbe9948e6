// Copyright Contributors to the c3gs project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "c3gs/binary_io.hpp"
#include "c3gs/camera.hpp"
#include "c3gs/kernels.hpp"
#include "c3gs/tensor.hpp"
#include "c3gs/weights.hpp"

namespace c3gs {

inline constexpr float kOpacityMin = 1e-6f;
inline constexpr float kOpacityMax = 1.0f - 1e-6f;
inline constexpr float kScaleMin = 1e-5f;

using Vec3f = std::array<float, 3>;
using Quat4f = std::array<float, 4>;  // (w, x, y, z)

/// Pixel-aligned 3D Gaussians, structure-of-arrays.
struct GaussianCloud {
    std::vector<Vec3f> means;
    std::vector<Vec3f> scales;
    std::vector<Quat4f> rotations;
    std::vector<float> opacities;
    std::vector<Vec3f> colors;

    std::size_t size() const noexcept { return means.size(); }

    void resize(std::size_t n) {
        means.resize(n);
        scales.resize(n);
        rotations.resize(n);
        opacities.resize(n);
        colors.resize(n);
    }

    bool all_finite() const {
        auto fin = [](const auto& arr) {
            for (const auto& v : arr)
                for (float x : v)
                    if (!std::isfinite(x)) return false;
            return true;
        };
        for (float a : opacities)
            if (!std::isfinite(a)) return false;
        return fin(means) && fin(scales) && fin(rotations) && fin(colors);
    }

    /// Empty string when every range invariant holds, else a description of the first violation.
    std::string invariant_violation() const {
        const std::size_t n = size();
        if (scales.size() != n || rotations.size() != n || opacities.size() != n || colors.size() != n) {
            return "attribute arrays differ in length";
        }
        for (std::size_t i = 0; i < n; ++i) {
            double qn = 0;
            for (float q : rotations[i]) qn += static_cast<double>(q) * q;
            if (std::abs(std::sqrt(qn) - 1.0) >= 1e-5) return "rotation " + std::to_string(i) + " is not unit";
            for (float s : scales[i])
                if (!(s > 0) || !std::isfinite(s)) return "scale " + std::to_string(i) + " not positive";
            if (!(opacities[i] > 0 && opacities[i] < 1)) return "opacity " + std::to_string(i) + " outside (0,1)";
            for (float c : colors[i])
                if (!(c >= 0 && c <= 1)) return "color " + std::to_string(i) + " outside [0,1]";
            for (float m : means[i])
                if (!std::isfinite(m)) return "center " + std::to_string(i) + " not finite";
        }
        return {};
    }

    friend bool operator==(const GaussianCloud&, const GaussianCloud&) = default;
};

/// Flips the quaternion so its first nonzero component is positive.
inline void canonicalize_quaternion(Quat4f& q) {
    for (float v : q) {
        if (v == 0) continue;
        if (v < 0)
            for (auto& c : q) c = -c;
        return;
    }
}

struct DecoderConfig {
    std::size_t gaussian_dim = 24;
    std::size_t hidden = 32;
    double scale_max = 1e4;  // scene diagonal
};

inline MlpSpec decoder_head_spec(const DecoderConfig& cfg, std::size_t out, OutputActivation act) {
    return MlpSpec{{cfg.gaussian_dim, cfg.hidden, out}, act};
}

inline MlpSpec csf_spec(const DecoderConfig& cfg) {
    return MlpSpec{{2 * cfg.gaussian_dim, cfg.hidden, 1}, OutputActivation::ScaledSigmoid};
}

/// Adds the "dec." heads and the "csf." modulation MLP. The last CSF layer starts at zero so
/// the modulation is the identity until trained.
inline void init_decoder_weights(WeightStore& store, const SeededRng& rng, const DecoderConfig& cfg,
                                 bool zero_csf_output = true) {
    init_mlp(store, rng, "dec.scale", decoder_head_spec(cfg, 3, OutputActivation::Softplus));
    init_mlp(store, rng, "dec.rotation", decoder_head_spec(cfg, 4, OutputActivation::L2Norm));
    init_mlp(store, rng, "dec.opacity", decoder_head_spec(cfg, 1, OutputActivation::Sigmoid));
    init_mlp(store, rng, "dec.color", decoder_head_spec(cfg, 3, OutputActivation::Sigmoid));
    init_mlp(store, rng, "csf.mlp", csf_spec(cfg), zero_csf_output);
}

/// Decodes scale (softplus), rotation (normalized), opacity and color (sigmoid) per row of F_g;
/// centers come from the back-projected depth.
inline GaussianCloud decode_params(const Tensor& gaussian_features, const PointGrid& centers,
                                   const WeightStore& store, const DecoderConfig& cfg) {
    expect_rank("decode_params", "F_g", gaussian_features, 2);
    const std::size_t M = gaussian_features.dim(0);
    expect_extent("decode_params", "F_g rows vs. center count", M, centers.points.size());
    expect_extent("decode_params", "F_g width (axis 1)", gaussian_features.dim(1), cfg.gaussian_dim);
    const auto s_spec = decoder_head_spec(cfg, 3, OutputActivation::Softplus);
    const auto r_spec = decoder_head_spec(cfg, 4, OutputActivation::L2Norm);
    const auto a_spec = decoder_head_spec(cfg, 1, OutputActivation::Sigmoid);
    const auto c_spec = decoder_head_spec(cfg, 3, OutputActivation::Sigmoid);
    const auto s_w = load_mlp(store, "dec.scale", s_spec);
    const auto r_w = load_mlp(store, "dec.rotation", r_spec);
    const auto a_w = load_mlp(store, "dec.opacity", a_spec);
    const auto c_w = load_mlp(store, "dec.color", c_spec);

    GaussianCloud cloud;
    cloud.resize(M);
    const float smax = static_cast<float>(cfg.scale_max);
    parallel_for(M, [&](std::size_t i) {
        auto row = gaussian_features.data().subspan(i * cfg.gaussian_dim, cfg.gaussian_dim);
        float alpha;
        mlp_forward_row(s_spec, s_w, row, cloud.scales[i]);
        try {
            mlp_forward_row(r_spec, r_w, row, cloud.rotations[i]);
        } catch (const Error&) {
            throw Error("decode_params: rotation head produced a zero vector for Gaussian " + std::to_string(i));
        }
        mlp_forward_row(a_spec, a_w, row, std::span<float>(&alpha, 1));
        mlp_forward_row(c_spec, c_w, row, cloud.colors[i]);
        for (auto& s : cloud.scales[i]) s = std::clamp(s, kScaleMin, smax);
        canonicalize_quaternion(cloud.rotations[i]);
        cloud.opacities[i] = std::clamp(alpha, kOpacityMin, kOpacityMax);
        const auto& c = centers.points[i];
        cloud.means[i] = {static_cast<float>(c.x()), static_cast<float>(c.y()), static_cast<float>(c.z())};
    }, 256);
    return cloud;
}

/// CSF modulation weights w (HW_fine x 1) in (0, 2): the coarse Gaussian features are
/// reshaped to a grid, upsampled x2, concatenated with the fine features, and passed through
/// the modulation MLP.
inline Tensor csf_fuse(const Tensor& coarse_features, std::size_t coarse_h, std::size_t coarse_w,
                       const Tensor& fine_features, std::size_t fine_h, std::size_t fine_w, const WeightStore& store,
                       const DecoderConfig& cfg) {
    expect_rank("csf_fuse", "coarse F_g", coarse_features, 2);
    expect_rank("csf_fuse", "fine F_g", fine_features, 2);
    if (fine_h != 2 * coarse_h || fine_w != 2 * coarse_w) {
        throw ShapeError("csf_fuse: fine grid " + std::to_string(fine_h) + "x" + std::to_string(fine_w) +
                         " is not double the coarse grid " + std::to_string(coarse_h) + "x" + std::to_string(coarse_w));
    }
    const std::size_t G = cfg.gaussian_dim;
    expect_extent("csf_fuse", "coarse F_g rows", coarse_features.dim(0), coarse_h * coarse_w);
    expect_extent("csf_fuse", "fine F_g rows", fine_features.dim(0), fine_h * fine_w);
    expect_extent("csf_fuse", "coarse F_g width", coarse_features.dim(1), G);
    expect_extent("csf_fuse", "fine F_g width", fine_features.dim(1), G);

    Tensor grid({G, coarse_h, coarse_w});
    for (std::size_t p = 0; p < coarse_h * coarse_w; ++p)
        for (std::size_t c = 0; c < G; ++c) grid[c * coarse_h * coarse_w + p] = coarse_features.at(p, c);
    const Tensor up = bilinear_upsample_x2(grid);
    const std::size_t HW = fine_h * fine_w;
    Tensor cat({HW, 2 * G});
    for (std::size_t p = 0; p < HW; ++p) {
        for (std::size_t c = 0; c < G; ++c) cat.at(p, c) = up[c * HW + p];
        for (std::size_t c = 0; c < G; ++c) cat.at(p, G + c) = fine_features.at(p, c);
    }
    const auto spec = csf_spec(cfg);
    return mlp_forward(spec, load_mlp(store, "csf.mlp", spec), cat);
}

/// alpha' = clamp(alpha * w); every other attribute is copied unchanged.
inline GaussianCloud apply_modulation(const GaussianCloud& cloud, const Tensor& w) {
    expect_extent("apply_modulation", "weight count", w.size(), cloud.size());
    GaussianCloud out = cloud;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        out.opacities[i] = std::clamp(cloud.opacities[i] * w[i], kOpacityMin, kOpacityMax);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline constexpr char kGcMagic[4] = {'G', 'C', '0', '1'};

/// "GC01", u32 count, then per Gaussian 14 f32: mean 3, scale 3, rotation 4, opacity, color 3.
inline std::vector<std::uint8_t> encode_gc01(const GaussianCloud& cloud) {
    ByteWriter w;
    w.raw(kGcMagic, 4);
    w.u32(static_cast<std::uint32_t>(cloud.size()));
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (float v : cloud.means[i]) w.f32(v);
        for (float v : cloud.scales[i]) w.f32(v);
        for (float v : cloud.rotations[i]) w.f32(v);
        w.f32(cloud.opacities[i]);
        for (float v : cloud.colors[i]) w.f32(v);
    }
    return std::move(w.bytes());
}

inline GaussianCloud decode_gc01(const std::vector<std::uint8_t>& bytes, const std::string& path = "<memory>") {
    ByteReader r(bytes, path);
    if (r.text(4, "magic") != std::string(kGcMagic, 4)) throw IoError(path, "bad magic, expected GC01");
    const std::uint32_t n = r.u32("count");
    if (static_cast<std::uint64_t>(n) * 14 * 4 != r.remaining()) {
        throw IoError(path, "payload size does not match count " + std::to_string(n));
    }
    GaussianCloud cloud;
    cloud.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& v : cloud.means[i]) v = r.f32("mean");
        for (auto& v : cloud.scales[i]) v = r.f32("scale");
        for (auto& v : cloud.rotations[i]) v = r.f32("rotation");
        cloud.opacities[i] = r.f32("opacity");
        for (auto& v : cloud.colors[i]) v = r.f32("color");
    }
    return cloud;
}

inline void write_gc01(const std::string& path, const GaussianCloud& cloud) { write_file_bytes(path, encode_gc01(cloud)); }
inline GaussianCloud read_gc01(const std::string& path) { return decode_gc01(read_file_bytes(path), path); }

/// ASCII PLY with one vertex per Gaussian, for viewers and eyeballing.
inline std::string format_ply(const GaussianCloud& cloud) {
    std::ostringstream out;
    out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << "\n";
    for (const char* p : {"x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
                          "opacity", "red", "green", "blue"}) {
        out << "property float " << p << "\n";
    }
    out << "end_header\n" << std::setprecision(9);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& m = cloud.means[i];
        const auto& s = cloud.scales[i];
        const auto& q = cloud.rotations[i];
        const auto& c = cloud.colors[i];
        out << m[0] << ' ' << m[1] << ' ' << m[2] << ' ' << s[0] << ' ' << s[1] << ' ' << s[2] << ' ' << q[0] << ' '
            << q[1] << ' ' << q[2] << ' ' << q[3] << ' ' << cloud.opacities[i] << ' ' << c[0] << ' ' << c[1] << ' '
            << c[2] << '\n';
    }
    return out.str();
}

}  // namespace c3gs
