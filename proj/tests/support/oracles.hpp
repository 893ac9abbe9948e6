// Copyright Contributors to the c3gs project
// SPDX-License-Identifier: Apache-2.0

// Brute-force scalar reference implementations. Each one is written directly from the
// defining formula and shares no code with the library routine it checks.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

#include "c3gs/c3gs.hpp"

namespace c3gs::oracle {

/// Random tensor with entries uniform in [lo, hi).
inline Tensor random_tensor(RngStream& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

inline std::size_t random_size(RngStream& rng, std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng.uniform() * static_cast<double>(hi - lo + 1)) % (hi - lo + 1);
}

inline double relative_error(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Largest relative error between two equally sized tensors.
inline double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-6) {
    if (a.shape() != b.shape()) return INFINITY;
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i], floor));
    return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return INFINITY;
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]));
    return worst;
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, long stride, long pad) {
    const long C = static_cast<long>(x.dim(0)), L = static_cast<long>(x.dim(1));
    const long O = static_cast<long>(w.dim(0)), K = static_cast<long>(w.dim(2));
    const long Lo = (L + 2 * pad - K) / stride + 1;
    Tensor out({static_cast<std::size_t>(O), static_cast<std::size_t>(Lo)});
    for (long o = 0; o < O; ++o)
        for (long i = 0; i < Lo; ++i) {
            long double acc = b.empty() ? 0.0L : b[o];
            for (long c = 0; c < C; ++c)
                for (long k = 0; k < K; ++k) {
                    const long src = i * stride - pad + k;
                    if (src < 0 || src >= L) continue;
                    acc += static_cast<long double>(w.at(o, c, k)) * x.at(c, src);
                }
            out.at(o, i) = static_cast<float>(acc);
        }
    return out;
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, long stride, long pad) {
    const long C = static_cast<long>(x.dim(0)), H = static_cast<long>(x.dim(1)), W = static_cast<long>(x.dim(2));
    const long O = static_cast<long>(w.dim(0)), K = static_cast<long>(w.dim(2));
    const long Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
    Tensor out({static_cast<std::size_t>(O), static_cast<std::size_t>(Ho), static_cast<std::size_t>(Wo)});
    for (long o = 0; o < O; ++o)
        for (long i = 0; i < Ho; ++i)
            for (long j = 0; j < Wo; ++j) {
                long double acc = b.empty() ? 0.0L : b[o];
                for (long c = 0; c < C; ++c)
                    for (long ki = 0; ki < K; ++ki)
                        for (long kj = 0; kj < K; ++kj) {
                            const long y = i * stride - pad + ki, xx = j * stride - pad + kj;
                            if (y < 0 || y >= H || xx < 0 || xx >= W) continue;
                            acc += static_cast<long double>(w.at(o, c, ki, kj)) * x.at(c, y, xx);
                        }
                out.at(o, i, j) = static_cast<float>(acc);
            }
    return out;
}

inline Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, long stride, long pad) {
    const long C = static_cast<long>(x.dim(0)), D = static_cast<long>(x.dim(1));
    const long H = static_cast<long>(x.dim(2)), W = static_cast<long>(x.dim(3));
    const long O = static_cast<long>(w.dim(0)), K = static_cast<long>(w.dim(2));
    const long Do = (D + 2 * pad - K) / stride + 1, Ho = (H + 2 * pad - K) / stride + 1;
    const long Wo = (W + 2 * pad - K) / stride + 1;
    Tensor out({static_cast<std::size_t>(O), static_cast<std::size_t>(Do), static_cast<std::size_t>(Ho),
                static_cast<std::size_t>(Wo)});
    for (long o = 0; o < O; ++o)
        for (long d = 0; d < Do; ++d)
            for (long i = 0; i < Ho; ++i)
                for (long j = 0; j < Wo; ++j) {
                    long double acc = b.empty() ? 0.0L : b[o];
                    for (long c = 0; c < C; ++c)
                        for (long kd = 0; kd < K; ++kd)
                            for (long ki = 0; ki < K; ++ki)
                                for (long kj = 0; kj < K; ++kj) {
                                    const long z = d * stride - pad + kd, y = i * stride - pad + ki;
                                    const long xx = j * stride - pad + kj;
                                    if (z < 0 || z >= D || y < 0 || y >= H || xx < 0 || xx >= W) continue;
                                    acc += static_cast<long double>(w.at(o, c, kd, ki, kj)) * x.at(c, z, y, xx);
                                }
                    out.at(o, d, i, j) = static_cast<float>(acc);
                }
    return out;
}

/// Bilinear sample at array coordinate (x, y); returns false outside [0, W-1] x [0, H-1].
inline bool bilinear(const Tensor& img, std::size_t c, double x, double y, double& value) {
    const double H = static_cast<double>(img.dim(1)), W = static_cast<double>(img.dim(2));
    if (x < 0 || y < 0 || x > W - 1 || y > H - 1) return false;
    auto px = [&](long yy, long xx) {
        yy = std::min<long>(yy, static_cast<long>(H) - 1);
        xx = std::min<long>(xx, static_cast<long>(W) - 1);
        return static_cast<double>(img.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)));
    };
    const long x0 = static_cast<long>(x), y0 = static_cast<long>(y);
    const double ax = x - static_cast<double>(x0), ay = y - static_cast<double>(y0);
    value = (1 - ay) * ((1 - ax) * px(y0, x0) + ax * px(y0, x0 + 1)) + ay * ((1 - ax) * px(y0 + 1, x0) + ax * px(y0 + 1, x0 + 1));
    return true;
}

/// Half-pixel-centered (align-corners-false) resize, written per output pixel.
inline Tensor resize(const Tensor& img, std::size_t Ho, std::size_t Wo) {
    const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    Tensor out({C, Ho, Wo});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < Ho; ++i)
            for (std::size_t j = 0; j < Wo; ++j) {
                const double sy = std::max(0.0, (i + 0.5) * static_cast<double>(H) / static_cast<double>(Ho) - 0.5);
                const double sx = std::max(0.0, (j + 0.5) * static_cast<double>(W) / static_cast<double>(Wo) - 0.5);
                double v = 0;
                bilinear(img, c, std::min(sx, static_cast<double>(W - 1)), std::min(sy, static_cast<double>(H - 1)), v);
                out.at(c, i, j) = static_cast<float>(v);
            }
    return out;
}

inline std::vector<double> softmax(const std::vector<double>& x, double temperature = 1.0) {
    std::vector<double> out(x.size());
    long double sum = 0;
    for (double v : x) sum += std::exp(static_cast<long double>(v) / temperature);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<double>(std::exp(static_cast<long double>(x[i]) / temperature) / sum);
    return out;
}

inline double sigmoid(double x) { return static_cast<double>(1.0L / (1.0L + std::exp(-static_cast<long double>(x)))); }
inline double softplus(double x) { return static_cast<double>(std::log1p(std::exp(static_cast<long double>(x)))); }

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

inline PinholeCamera random_camera(RngStream& rng, std::size_t W = 64, std::size_t H = 48) {
    PinholeCamera cam;
    cam.width = W;
    cam.height = H;
    const double f = rng.uniform(0.8, 1.6) * static_cast<double>(W);
    cam.K << f, rng.uniform(-0.5, 0.5), static_cast<double>(W) * rng.uniform(0.4, 0.6),  //
        0, f * rng.uniform(0.95, 1.05), static_cast<double>(H) * rng.uniform(0.4, 0.6),  //
        0, 0, 1;
    const Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    cam.R = Eigen::AngleAxisd(rng.uniform(0, 0.3), axis.normalized()).toRotationMatrix();
    cam.t = Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    cam.depth_min = 2;
    cam.depth_max = 10;
    return cam;
}

/// Source pixel (continuous, pixel-center convention) of target pixel center (x, y) at target
/// depth z: unproject through the target, then project through the source.
inline Eigen::Vector2d transfer_pixel(const PinholeCamera& src, const PinholeCamera& tgt, double u, double v, double z) {
    const Eigen::Vector3d ray(u - tgt.K(0, 2) - tgt.K(0, 1) * ((v - tgt.K(1, 2)) / tgt.K(1, 1)),
                              v - tgt.K(1, 2), 0);
    const Eigen::Vector3d cam_pt(ray.x() / tgt.K(0, 0) * z, ray.y() / tgt.K(1, 1) * z, z);
    const Eigen::Vector3d world = tgt.R.transpose() * (cam_pt - tgt.t);
    const Eigen::Vector3d s = src.R * world + src.t;
    const Eigen::Vector3d p = src.K * s;
    return {p.x() / p.z(), p.y() / p.z()};
}

// ---------------------------------------------------------------------------
// Rasterizer
// ---------------------------------------------------------------------------

/// Projected 2D covariance using a numerically differentiated projection Jacobian.
inline Eigen::Matrix2d projected_covariance(const PinholeCamera& cam, const Eigen::Vector3d& mean,
                                            const Eigen::Matrix3d& cov) {
    auto proj = [&](const Eigen::Vector3d& p) {
        const Eigen::Vector3d q = cam.K * (cam.R * p + cam.t);
        return Eigen::Vector2d(q.x() / q.z(), q.y() / q.z());
    };
    Eigen::Matrix<double, 2, 3> J;
    const double h = 1e-4 * std::max(1.0, mean.norm());
    for (int a = 0; a < 3; ++a) {
        Eigen::Vector3d e = Eigen::Vector3d::Zero();
        e[a] = h;
        J.col(a) = (proj(mean + e) - proj(mean - e)) / (2 * h);
    }
    return J * cov * J.transpose() + 0.3 * Eigen::Matrix2d::Identity();
}

/// Brute-force per-pixel compositing: every Gaussian is tested at every pixel, sorted by depth then index.
inline Tensor composite(const GaussianCloud& cloud, const PinholeCamera& cam) {
    const std::size_t H = cam.height, W = cam.width, M = cloud.size();
    struct Item {
        double depth;
        std::size_t index;
        Eigen::Vector2d mean;
        Eigen::Matrix2d inv;
    };
    std::vector<Item> items;
    for (std::size_t i = 0; i < M; ++i) {
        const Eigen::Vector3d m(cloud.means[i][0], cloud.means[i][1], cloud.means[i][2]);
        const Eigen::Vector3d c = cam.R * m + cam.t;
        if (c.z() <= 1e-3) continue;
        const Eigen::Quaterniond q(cloud.rotations[i][0], cloud.rotations[i][1], cloud.rotations[i][2], cloud.rotations[i][3]);
        const Eigen::Matrix3d R = q.normalized().toRotationMatrix();
        Eigen::Matrix3d S = Eigen::Matrix3d::Zero();
        for (int a = 0; a < 3; ++a) S(a, a) = static_cast<double>(cloud.scales[i][a]) * cloud.scales[i][a];
        const Eigen::Matrix2d cov2 = projected_covariance(cam, m, R * S * R.transpose());
        const Eigen::Vector3d p = cam.K * c;
        items.push_back({c.z(), i, Eigen::Vector2d(p.x() / p.z(), p.y() / p.z()), cov2.inverse()});
    }
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
        return a.depth != b.depth ? a.depth < b.depth : a.index < b.index;
    });
    Tensor out({3, H, W});
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const Eigen::Vector2d px(x + 0.5, y + 0.5);
            double T = 1, rgb[3] = {0, 0, 0};
            for (const auto& it : items) {
                const Eigen::Vector2d d = px - it.mean;
                const double m2 = d.dot(it.inv * d);
                if (m2 > 9.0) continue;
                const double g = cloud.opacities[it.index] * std::exp(-0.5 * m2);
                for (int c = 0; c < 3; ++c) rgb[c] += T * g * cloud.colors[it.index][c];
                T *= 1 - g;
                if (T < 1e-4) break;
            }
            for (int c = 0; c < 3; ++c) out.at(c, y, x) = static_cast<float>(rgb[c]);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// SSIM from explicit windowed statistics: means first, then centered second moments.
inline double ssim(const Tensor& a, const Tensor& b) {
    const std::size_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
    std::size_t k = std::min<std::size_t>({11, H, W});
    if (k % 2 == 0) --k;
    std::vector<long double> g(k);
    long double gs = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const long double d = static_cast<long double>(i) - (static_cast<long double>(k) - 1) / 2;
        g[i] = std::exp(-d * d / (2 * 1.5L * 1.5L));
        gs += g[i];
    }
    long double total = 0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y0 = 0; y0 + k <= H; ++y0)
            for (std::size_t x0 = 0; x0 + k <= W; ++x0) {
                long double ma = 0, mb = 0;
                for (std::size_t i = 0; i < k; ++i)
                    for (std::size_t j = 0; j < k; ++j) {
                        const long double w = g[i] * g[j] / (gs * gs);
                        ma += w * a.at(c, y0 + i, x0 + j);
                        mb += w * b.at(c, y0 + i, x0 + j);
                    }
                long double va = 0, vb = 0, cov = 0;
                for (std::size_t i = 0; i < k; ++i)
                    for (std::size_t j = 0; j < k; ++j) {
                        const long double w = g[i] * g[j] / (gs * gs);
                        const long double da = a.at(c, y0 + i, x0 + j) - ma, db = b.at(c, y0 + i, x0 + j) - mb;
                        va += w * da * da;
                        vb += w * db * db;
                        cov += w * da * db;
                    }
                const long double C1 = 1e-4L, C2 = 9e-4L;
                total += (2 * ma * mb + C1) * (2 * cov + C2) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
                ++n;
            }
    return static_cast<double>(total / static_cast<long double>(n));
}

/// Nearest-k by repeated minimum search (O(n k)), lowest index on ties.
inline std::vector<std::size_t> nearest_views(const Eigen::Vector3d& c, const std::vector<Eigen::Vector3d>& centers,
                                              std::size_t k) {
    std::vector<bool> used(centers.size(), false);
    std::vector<std::size_t> out;
    for (std::size_t r = 0; r < k; ++r) {
        std::size_t best = centers.size();
        for (std::size_t i = 0; i < centers.size(); ++i) {
            if (used[i]) continue;
            if (best == centers.size() || (centers[i] - c).norm() < (centers[best] - c).norm()) best = i;
        }
        used[best] = true;
        out.push_back(best);
    }
    return out;
}

}  // namespace c3gs::oracle
