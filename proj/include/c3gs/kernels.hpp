// Copyright Contributors to the c3gs project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "c3gs/parallel.hpp"
#include "c3gs/tensor.hpp"

namespace c3gs {

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

namespace detail {

struct ConvAxes {
    std::array<std::size_t, 3> in;      // D, H, W
    std::array<std::size_t, 3> kernel;  // kD, kH, kW
    std::array<std::size_t, 3> stride;
    std::array<std::size_t, 3> pad;
};

inline std::size_t conv_out_extent(const char* op, const char* axis, std::size_t in, std::size_t k,
                                   std::size_t stride, std::size_t pad) {
    if (stride == 0) throw ShapeError(std::string(op) + ": stride must be positive");
    if (in + 2 * pad < k) {
        throw ShapeError(std::string(op) + ": " + axis + " extent " + std::to_string(in) +
                         " too small for kernel " + std::to_string(k));
    }
    return (in + 2 * pad - k) / stride + 1;
}

// Upper kernel bound so that origin + k stays inside [0, extent).
inline std::size_t clamp_hi(std::size_t k, std::size_t extent, long origin) {
    long hi = std::min<long>(static_cast<long>(k), static_cast<long>(extent) - origin);
    return hi < 0 ? 0 : static_cast<std::size_t>(hi);
}

// Direct convolution over up to three spatial axes. Every output element is reduced in a
// fixed (ci, kz, ky, kx) order with a double accumulator, so results do not depend on
// how rows are distributed across workers.
inline std::vector<float> conv_nd(const char* op, std::span<const float> input, std::size_t cin,
                                  std::span<const float> weight, std::size_t cout,
                                  std::span<const float> bias, const ConvAxes& ax,
                                  std::array<std::size_t, 3>& out_extent) {
    static constexpr const char* names[3] = {"depth axis", "height axis", "width axis"};
    for (int a = 0; a < 3; ++a) {
        out_extent[a] = conv_out_extent(op, names[a], ax.in[a], ax.kernel[a], ax.stride[a], ax.pad[a]);
    }
    const auto [D, H, W] = ax.in;
    const auto [kD, kH, kW] = ax.kernel;
    const auto [oD, oH, oW] = out_extent;
    std::vector<float> out(cout * oD * oH * oW);
    const std::size_t rows = cout * oD * oH;
    parallel_for(rows, [&](std::size_t row) {
        const std::size_t co = row / (oD * oH);
        const std::size_t oz = (row / oH) % oD;
        const std::size_t oy = row % oH;
        const long z0 = static_cast<long>(oz * ax.stride[0]) - static_cast<long>(ax.pad[0]);
        const long y0 = static_cast<long>(oy * ax.stride[1]) - static_cast<long>(ax.pad[1]);
        const std::size_t kz_lo = z0 < 0 ? static_cast<std::size_t>(-z0) : 0;
        const std::size_t kz_hi = clamp_hi(kD, D, z0);
        const std::size_t ky_lo = y0 < 0 ? static_cast<std::size_t>(-y0) : 0;
        const std::size_t ky_hi = clamp_hi(kH, H, y0);
        float* dst = out.data() + row * oW;
        const float* wco = weight.data() + co * cin * kD * kH * kW;
        for (std::size_t ox = 0; ox < oW; ++ox) {
            const long x0 = static_cast<long>(ox * ax.stride[2]) - static_cast<long>(ax.pad[2]);
            const std::size_t kx_lo = x0 < 0 ? static_cast<std::size_t>(-x0) : 0;
            const std::size_t kx_hi = clamp_hi(kW, W, x0);
            double acc = bias.empty() ? 0.0 : bias[co];
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const float* in_c = input.data() + ci * D * H * W;
                const float* w_c = wco + ci * kD * kH * kW;
                for (std::size_t kz = kz_lo; kz < kz_hi; ++kz) {
                    const std::size_t iz = static_cast<std::size_t>(z0 + static_cast<long>(kz));
                    for (std::size_t ky = ky_lo; ky < ky_hi; ++ky) {
                        const std::size_t iy = static_cast<std::size_t>(y0 + static_cast<long>(ky));
                        const float* in_row = in_c + (iz * H + iy) * W;
                        const float* w_row = w_c + (kz * kH + ky) * kW;
                        for (std::size_t kx = kx_lo; kx < kx_hi; ++kx) {
                            acc += static_cast<double>(w_row[kx]) *
                                   in_row[static_cast<std::size_t>(x0 + static_cast<long>(kx))];
                        }
                    }
                }
            }
            dst[ox] = static_cast<float>(acc);
        }
    }, 4);
    return out;
}

inline void check_conv_weights(const char* op, const Tensor& input, const Tensor& weight,
                               const Tensor* bias, std::size_t spatial_rank) {
    expect_rank(op, "input", input, spatial_rank + 1);
    expect_rank(op, "weights", weight, spatial_rank + 2);
    expect_extent(op, "weight input-channel axis (1)", weight.dim(1), input.dim(0));
    for (std::size_t a = 0; a < spatial_rank; ++a) {
        if (weight.dim(2 + a) % 2 == 0) {
            throw ShapeError(std::string(op) + ": kernel extent on axis " + std::to_string(2 + a) +
                             " must be odd, got " + std::to_string(weight.dim(2 + a)));
        }
    }
    if (bias && !bias->empty()) {
        expect_rank(op, "bias", *bias, 1);
        expect_extent(op, "bias length (axis 0)", bias->dim(0), weight.dim(0));
    }
}

}  // namespace detail

/// Padding value meaning "k / 2" on every axis.
inline constexpr std::size_t kSamePadding = static_cast<std::size_t>(-1);

/// 1D convolution. input C x L, weights C' x C x k, bias C' (may be default-constructed).
inline Tensor conv1d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     std::size_t stride = 1, std::size_t padding = kSamePadding) {
    detail::check_conv_weights("conv1d", input, weight, &bias, 1);
    const std::size_t k = weight.dim(2);
    const std::size_t pad = padding == kSamePadding ? k / 2 : padding;
    detail::ConvAxes ax{{1, 1, input.dim(1)}, {1, 1, k}, {1, 1, stride}, {0, 0, pad}};
    std::array<std::size_t, 3> ext{};
    auto out = detail::conv_nd("conv1d", input.data(), input.dim(0), weight.data(), weight.dim(0),
                               bias.data(), ax, ext);
    return Tensor({weight.dim(0), ext[2]}, std::move(out));
}

/// 2D convolution. input C x H x W, weights C' x C x k x k.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     std::size_t stride = 1, std::size_t padding = kSamePadding) {
    detail::check_conv_weights("conv2d", input, weight, &bias, 2);
    const std::size_t kh = weight.dim(2), kw = weight.dim(3);
    const std::size_t ph = padding == kSamePadding ? kh / 2 : padding;
    const std::size_t pw = padding == kSamePadding ? kw / 2 : padding;
    detail::ConvAxes ax{{1, input.dim(1), input.dim(2)}, {1, kh, kw}, {1, stride, stride}, {0, ph, pw}};
    std::array<std::size_t, 3> ext{};
    auto out = detail::conv_nd("conv2d", input.data(), input.dim(0), weight.data(), weight.dim(0),
                               bias.data(), ax, ext);
    return Tensor({weight.dim(0), ext[1], ext[2]}, std::move(out));
}

/// 3D convolution. input C x D x H x W, weights C' x C x k x k x k.
inline Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     std::size_t stride = 1, std::size_t padding = kSamePadding) {
    detail::check_conv_weights("conv3d", input, weight, &bias, 3);
    std::array<std::size_t, 3> k{weight.dim(2), weight.dim(3), weight.dim(4)};
    std::array<std::size_t, 3> pad{};
    for (int a = 0; a < 3; ++a) pad[a] = padding == kSamePadding ? k[a] / 2 : padding;
    detail::ConvAxes ax{{input.dim(1), input.dim(2), input.dim(3)}, k, {stride, stride, stride}, pad};
    std::array<std::size_t, 3> ext{};
    auto out = detail::conv_nd("conv3d", input.data(), input.dim(0), weight.data(), weight.dim(0),
                               bias.data(), ax, ext);
    return Tensor({weight.dim(0), ext[0], ext[1], ext[2]}, std::move(out));
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Result of a sampling operation: values plus an in-bounds mask.
struct Sampled {
    Tensor values;
    Mask valid;
};

namespace detail {
// Coordinates within this distance outside the lattice are snapped onto it.
inline constexpr double kLatticeSlack = 1e-3;

inline bool bilinear_weights(double x, double y, std::size_t H, std::size_t W, std::size_t& x0,
                             std::size_t& y0, std::size_t& x1, std::size_t& y1, double& fx,
                             double& fy) {
    if (!std::isfinite(x) || !std::isfinite(y)) return false;
    const double xmax = static_cast<double>(W - 1), ymax = static_cast<double>(H - 1);
    if (x < -kLatticeSlack || y < -kLatticeSlack || x > xmax + kLatticeSlack || y > ymax + kLatticeSlack) {
        return false;
    }
    x = std::clamp(x, 0.0, xmax);
    y = std::clamp(y, 0.0, ymax);
    double flx = std::floor(x), fly = std::floor(y);
    x0 = static_cast<std::size_t>(flx);
    y0 = static_cast<std::size_t>(fly);
    x1 = std::min(x0 + 1, W - 1);
    y1 = std::min(y0 + 1, H - 1);
    fx = x - flx;
    fy = y - fly;
    return true;
}
}  // namespace detail

/// Bilinear sample of `input` (C x H x W) at one continuous array coordinate, where
/// integer (x, y) addresses input(:, y, x). Writes C values; returns false (values zero)
/// when the point lies outside the lattice.
inline bool bilinear_sample_point(const Tensor& input, double x, double y, std::span<float> out) {
    const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
    std::size_t x0, y0, x1, y1;
    double fx, fy;
    if (!detail::bilinear_weights(x, y, H, W, x0, y0, x1, y1, fx, fy)) {
        std::fill(out.begin(), out.end(), 0.0f);
        return false;
    }
    const double w00 = (1 - fx) * (1 - fy), w01 = fx * (1 - fy), w10 = (1 - fx) * fy, w11 = fx * fy;
    const float* base = input.data().data();
    for (std::size_t c = 0; c < C; ++c) {
        const float* p = base + c * H * W;
        out[c] = static_cast<float>(w00 * p[y0 * W + x0] + w01 * p[y0 * W + x1] + w10 * p[y1 * W + x0] +
                                    w11 * p[y1 * W + x1]);
    }
    return true;
}

/// Grid sampling. coords is 2 x H' x W' with channel 0 = x (column) and channel 1 = y (row)
/// in array units. Out-of-bounds samples are zero and cleared in the mask.
inline Sampled bilinear_sample(const Tensor& input, const Tensor& coords) {
    expect_rank("bilinear_sample", "input", input, 3);
    expect_rank("bilinear_sample", "coords", coords, 3);
    expect_extent("bilinear_sample", "coords axis 0", coords.dim(0), 2);
    const std::size_t C = input.dim(0), Ho = coords.dim(1), Wo = coords.dim(2);
    Sampled result{Tensor({C, Ho, Wo}), Mask(Ho, Wo)};
    parallel_for(Ho, [&](std::size_t y) {
        std::vector<float> buf(C);
        for (std::size_t x = 0; x < Wo; ++x) {
            bool ok = bilinear_sample_point(input, coords.at(0, y, x), coords.at(1, y, x), buf);
            result.valid.set(y, x, ok);
            for (std::size_t c = 0; c < C; ++c) result.values.at(c, y, x) = buf[c];
        }
    });
    return result;
}

namespace detail {
// Align-corners-false source coordinate, clamped at the low end like common frameworks.
inline void resize_source(std::size_t dst, std::size_t in_extent, std::size_t out_extent, std::size_t& i0,
                          std::size_t& i1, double& frac) {
    double scale = static_cast<double>(in_extent) / static_cast<double>(out_extent);
    double src = (static_cast<double>(dst) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    double fl = std::floor(src);
    i0 = std::min(static_cast<std::size_t>(fl), in_extent - 1);
    i1 = std::min(i0 + 1, in_extent - 1);
    frac = src - static_cast<double>(i0);
    if (i0 == in_extent - 1) frac = 0;
}
}  // namespace detail

/// Bilinear resize of C x H x W to C x H' x W' (align_corners = false).
inline Tensor resize_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w) {
    expect_rank("resize_bilinear", "input", input, 3);
    const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
    Tensor out({C, out_h, out_w});
    parallel_for(C * out_h, [&](std::size_t row) {
        const std::size_t c = row / out_h, y = row % out_h;
        std::size_t y0, y1;
        double fy;
        detail::resize_source(y, H, out_h, y0, y1, fy);
        for (std::size_t x = 0; x < out_w; ++x) {
            std::size_t x0, x1;
            double fx;
            detail::resize_source(x, W, out_w, x0, x1, fx);
            double top = (1 - fx) * input.at(c, y0, x0) + fx * input.at(c, y0, x1);
            double bot = (1 - fx) * input.at(c, y1, x0) + fx * input.at(c, y1, x1);
            out.at(c, y, x) = static_cast<float>((1 - fy) * top + fy * bot);
        }
    });
    return out;
}

/// x2 bilinear upsampling, align_corners = false.
inline Tensor bilinear_upsample_x2(const Tensor& input) {
    expect_rank("bilinear_upsample_x2", "input", input, 3);
    return resize_bilinear(input, input.dim(1) * 2, input.dim(2) * 2);
}

/// Trilinear resize of C x D x H x W (align_corners = false).
inline Tensor resize_trilinear(const Tensor& input, std::size_t out_d, std::size_t out_h, std::size_t out_w) {
    expect_rank("resize_trilinear", "input", input, 4);
    const std::size_t C = input.dim(0), D = input.dim(1), H = input.dim(2), W = input.dim(3);
    Tensor out({C, out_d, out_h, out_w});
    parallel_for(C * out_d * out_h, [&](std::size_t row) {
        const std::size_t c = row / (out_d * out_h), z = (row / out_h) % out_d, y = row % out_h;
        std::size_t z0, z1, y0, y1;
        double fz, fy;
        detail::resize_source(z, D, out_d, z0, z1, fz);
        detail::resize_source(y, H, out_h, y0, y1, fy);
        for (std::size_t x = 0; x < out_w; ++x) {
            std::size_t x0, x1;
            double fx;
            detail::resize_source(x, W, out_w, x0, x1, fx);
            auto plane = [&](std::size_t zz) {
                double top = (1 - fx) * input.at(c, zz, y0, x0) + fx * input.at(c, zz, y0, x1);
                double bot = (1 - fx) * input.at(c, zz, y1, x0) + fx * input.at(c, zz, y1, x1);
                return (1 - fy) * top + fy * bot;
            };
            out.at(c, z, y, x) = static_cast<float>((1 - fz) * plane(z0) + fz * plane(z1));
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Softmax and activations
// ---------------------------------------------------------------------------

/// Softmax along `axis`, computed as exp(x - max) / sum in double precision.
inline Tensor softmax_axis(const Tensor& input, std::size_t axis, double temperature = 1.0) {
    if (axis >= input.rank()) {
        throw ShapeError("softmax_axis: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(input.shape()));
    }
    if (!(temperature > 0)) throw Error("softmax_axis: temperature must be positive");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= input.dim(i);
    for (std::size_t i = axis + 1; i < input.rank(); ++i) inner *= input.dim(i);
    const std::size_t n = input.dim(axis);
    Tensor out(input.shape());
    parallel_for(outer * inner, [&](std::size_t slice) {
        const std::size_t o = slice / inner, i = slice % inner;
        const std::size_t base = o * n * inner + i;
        double mx = -INFINITY;
        for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, static_cast<double>(input[base + k * inner]));
        double sum = 0;
        std::vector<double> e(n);
        for (std::size_t k = 0; k < n; ++k) {
            e[k] = std::exp((input[base + k * inner] - mx) / temperature);
            sum += e[k];
        }
        for (std::size_t k = 0; k < n; ++k) out[base + k * inner] = static_cast<float>(e[k] / sum);
    }, 64);
    return out;
}

inline double sigmoid(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

/// 2 * sigmoid(x): range (0, 2), equal to 1 at x = 0.
inline double scaled_sigmoid_2(double x) { return 2.0 * sigmoid(x); }

inline double relu(double x) { return x > 0 ? x : 0.0; }

/// Elementwise ReLU on a tensor taken by value.
inline Tensor relu_inplace(Tensor t) {
    for (auto& v : t.data()) v = v > 0 ? v : 0.0f;
    return t;
}

/// Normalizes `v` in place to unit Euclidean norm; throws on a zero vector.
template <typename T>
void l2_normalize(std::span<T> v) {
    double sq = 0;
    for (T x : v) sq += static_cast<double>(x) * x;
    if (!(sq > 0)) throw Error("l2_normalize: zero-norm vector cannot be normalized");
    double inv = 1.0 / std::sqrt(sq);
    for (T& x : v) x = static_cast<T>(x * inv);
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

enum class OutputActivation { None, Sigmoid, Softplus, L2Norm, ScaledSigmoid };

/// Layer widths {in, hidden..., out}; hidden layers use ReLU.
struct MlpSpec {
    std::vector<std::size_t> widths;
    OutputActivation output = OutputActivation::None;

    std::size_t layers() const { return widths.empty() ? 0 : widths.size() - 1; }
    std::size_t in_dim() const { return widths.front(); }
    std::size_t out_dim() const { return widths.back(); }
};

/// Per-layer weights (out x in) and biases (out).
struct MlpWeights {
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;
};

inline void check_mlp(const MlpSpec& spec, const MlpWeights& w) {
    if (spec.layers() < 1) throw Error("mlp: spec needs at least one layer");
    expect_extent("mlp", "weight count", w.weights.size(), spec.layers());
    expect_extent("mlp", "bias count", w.biases.size(), spec.layers());
    for (std::size_t l = 0; l < spec.layers(); ++l) {
        expect_rank("mlp", "layer weight", w.weights[l], 2);
        expect_extent("mlp", "layer weight rows (axis 0)", w.weights[l].dim(0), spec.widths[l + 1]);
        expect_extent("mlp", "layer weight columns (axis 1)", w.weights[l].dim(1), spec.widths[l]);
        expect_extent("mlp", "layer bias length", w.biases[l].size(), spec.widths[l + 1]);
    }
}

/// Applies the MLP to one row; `out` must have spec.out_dim() entries.
inline void mlp_forward_row(const MlpSpec& spec, const MlpWeights& w, std::span<const float> in,
                            std::span<float> out) {
    std::vector<double> cur(in.begin(), in.end()), next;
    for (std::size_t l = 0; l < spec.layers(); ++l) {
        const Tensor& W = w.weights[l];
        const std::size_t rows = W.dim(0), cols = W.dim(1);
        next.assign(rows, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
            double acc = w.biases[l][r];
            const float* wr = W.data().data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * cur[c];
            next[r] = l + 1 < spec.layers() ? relu(acc) : acc;
        }
        cur.swap(next);
    }
    switch (spec.output) {
        case OutputActivation::None: break;
        case OutputActivation::Sigmoid:
            for (auto& v : cur) v = sigmoid(v);
            break;
        case OutputActivation::Softplus:
            for (auto& v : cur) v = softplus(v);
            break;
        case OutputActivation::ScaledSigmoid:
            for (auto& v : cur) v = scaled_sigmoid_2(v);
            break;
        case OutputActivation::L2Norm: l2_normalize(std::span<double>(cur)); break;
    }
    for (std::size_t i = 0; i < cur.size(); ++i) out[i] = static_cast<float>(cur[i]);
}

/// Applies the MLP to every row of a (... x Din) tensor.
inline Tensor mlp_forward(const MlpSpec& spec, const MlpWeights& w, const Tensor& input) {
    check_mlp(spec, w);
    if (input.rank() == 0) throw ShapeError("mlp: input must have rank >= 1");
    expect_extent("mlp", "input last axis", input.dim(input.rank() - 1), spec.in_dim());
    Shape out_shape = input.shape();
    out_shape.back() = spec.out_dim();
    Tensor out(out_shape);
    const std::size_t rows = input.size() / spec.in_dim();
    parallel_for(rows, [&](std::size_t r) {
        mlp_forward_row(spec, w, input.data().subspan(r * spec.in_dim(), spec.in_dim()),
                        out.data().subspan(r * spec.out_dim(), spec.out_dim()));
    }, 256);
    return out;
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Central-difference gradient of a scalar function: (f(x + eps e_i) - f(x - eps e_i)) / 2 eps.
inline Tensor finite_difference_probe(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                      double eps) {
    Tensor grad(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const float orig = x[i];
        probe[i] = static_cast<float>(orig + eps);
        const double fp = f(probe);
        const double hp = static_cast<double>(probe[i]) - orig;
        probe[i] = static_cast<float>(orig - eps);
        const double fm = f(probe);
        const double hm = orig - static_cast<double>(probe[i]);
        probe[i] = orig;
        // Use the step actually representable in float.
        grad[i] = static_cast<float>((fp - fm) / (hp + hm));
    }
    return grad;
}

}  // namespace c3gs
