// Copyright Contributors to the c3gs project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "c3gs/camera.hpp"
#include "c3gs/gaussians.hpp"
#include "c3gs/parallel.hpp"
#include "c3gs/tensor.hpp"

namespace c3gs {

/// Low-pass floor added to every projected covariance (pixels^2).
inline constexpr double kLowPassFloor = 0.3;
/// Compositing stops once transmittance drops below this.
inline constexpr double kMinTransmittance = 1e-4;
/// Footprints are cut at this squared Mahalanobis radius (3 sigma).
inline constexpr double kCutoffMahalanobis2 = 9.0;

struct RasterConfig {
    std::size_t tile_size = 16;
    double near_plane = 1e-3;
};

/// A Gaussian after perspective projection into a specific camera.
struct ProjectedGaussian {
    Eigen::Vector2d mean2d;
    Eigen::Matrix2d cov2d;
    Eigen::Matrix2d conic;  // cov2d inverse
    double depth = 0;
    Eigen::Vector3d color;
    double alpha = 0;
    double radius = 0;  // 3 sigma of the major axis, pixels
};

struct RenderedImage {
    Tensor color;  // 3 x H x W
    Tensor alpha;  // H x W accumulated opacity
};

/// R(q) diag(s)^2 R(q)^T for a unit quaternion (w, x, y, z).
inline Eigen::Matrix3d covariance3d(const Vec3f& scale, const Quat4f& rotation) {
    const Eigen::Quaterniond q(rotation[0], rotation[1], rotation[2], rotation[3]);
    const Eigen::Matrix3d R = q.normalized().toRotationMatrix();
    const Eigen::Vector3d s2(static_cast<double>(scale[0]) * scale[0], static_cast<double>(scale[1]) * scale[1],
                             static_cast<double>(scale[2]) * scale[2]);
    return R * s2.asDiagonal() * R.transpose();
}

/// EWA projection: cov2d = J W Sigma W^T J^T + floor * I, with J the perspective Jacobian at the
/// camera-space mean. Returns nothing when the mean is at or behind the near plane.
inline std::optional<ProjectedGaussian> project_gaussian(const Vec3f& mean, const Eigen::Matrix3d& cov3d,
                                                         const PinholeCamera& cam, double near_plane = 1e-3) {
    const Eigen::Vector3d mc = cam.R * Eigen::Vector3d(mean[0], mean[1], mean[2]) + cam.t;
    if (!(mc.z() > near_plane)) return std::nullopt;
    const double fx = cam.K(0, 0), fy = cam.K(1, 1), skew = cam.K(0, 1);
    const double z = mc.z(), z2 = z * z;
    Eigen::Matrix<double, 2, 3> J;
    J << fx / z, skew / z, -(fx * mc.x() + skew * mc.y()) / z2,  //
        0, fy / z, -fy * mc.y() / z2;
    ProjectedGaussian g;
    g.cov2d = J * cam.R * cov3d * cam.R.transpose() * J.transpose();
    g.cov2d = 0.5 * (g.cov2d + g.cov2d.transpose());
    g.cov2d += kLowPassFloor * Eigen::Matrix2d::Identity();
    g.conic = g.cov2d.inverse();
    const Eigen::Vector3d p = cam.K * mc;
    g.mean2d = Eigen::Vector2d(p.x() / p.z(), p.y() / p.z());
    g.depth = z;
    const double tr = g.cov2d.trace(), det = g.cov2d.determinant();
    const double lambda_max = 0.5 * tr + std::sqrt(std::max(0.25 * tr * tr - det, 0.0));
    g.radius = 3.0 * std::sqrt(lambda_max);
    return g;
}

namespace detail {

struct RasterPlan {
    std::vector<std::optional<ProjectedGaussian>> projected;
    std::vector<std::vector<std::uint32_t>> tile_lists;  // depth-sorted Gaussian indices per tile
    std::size_t tiles_x = 0, tiles_y = 0, tile = 16;
};

inline void check_cloud(const GaussianCloud& cloud) {
    if (!cloud.all_finite()) throw Error("rasterize: cloud contains non-finite values");
    const std::size_t n = cloud.size();
    if (cloud.scales.size() != n || cloud.rotations.size() != n || cloud.opacities.size() != n ||
        cloud.colors.size() != n) {
        throw Error("rasterize: cloud attribute arrays differ in length");
    }
}

inline RasterPlan plan(const GaussianCloud& cloud, const PinholeCamera& cam, const RasterConfig& cfg) {
    check_cloud(cloud);
    if (cfg.tile_size == 0) throw Error("rasterize: tile size must be positive");
    RasterPlan pl;
    pl.tile = cfg.tile_size;
    pl.tiles_x = (cam.width + pl.tile - 1) / pl.tile;
    pl.tiles_y = (cam.height + pl.tile - 1) / pl.tile;
    const std::size_t n = cloud.size();
    pl.projected.resize(n);
    parallel_for(n, [&](std::size_t i) {
        auto g = project_gaussian(cloud.means[i], covariance3d(cloud.scales[i], cloud.rotations[i]), cam, cfg.near_plane);
        if (g) {
            g->color = Eigen::Vector3d(cloud.colors[i][0], cloud.colors[i][1], cloud.colors[i][2]);
            g->alpha = cloud.opacities[i];
        }
        pl.projected[i] = std::move(g);
    }, 256);
    pl.tile_lists.assign(pl.tiles_x * pl.tiles_y, {});
    const double W = static_cast<double>(cam.width), H = static_cast<double>(cam.height);
    const double T = static_cast<double>(pl.tile);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& g = pl.projected[i];
        if (!g) continue;
        // Pixel centers sit at integer + 0.5; bound the centers inside the 3 sigma box.
        const double x0 = g->mean2d.x() - g->radius, x1 = g->mean2d.x() + g->radius;
        const double y0 = g->mean2d.y() - g->radius, y1 = g->mean2d.y() + g->radius;
        if (x1 < 0 || y1 < 0 || x0 > W || y0 > H) continue;
        const auto tx0 = static_cast<std::size_t>(std::max(0.0, std::floor((x0 - 0.5) / T)));
        const auto ty0 = static_cast<std::size_t>(std::max(0.0, std::floor((y0 - 0.5) / T)));
        const auto tx1 = std::min(pl.tiles_x - 1, static_cast<std::size_t>(std::max(0.0, std::floor((x1 - 0.5) / T))));
        const auto ty1 = std::min(pl.tiles_y - 1, static_cast<std::size_t>(std::max(0.0, std::floor((y1 - 0.5) / T))));
        for (std::size_t ty = ty0; ty <= ty1; ++ty)
            for (std::size_t tx = tx0; tx <= tx1; ++tx) pl.tile_lists[ty * pl.tiles_x + tx].push_back(static_cast<std::uint32_t>(i));
    }
    parallel_for(pl.tile_lists.size(), [&](std::size_t t) {
        auto& list = pl.tile_lists[t];
        std::sort(list.begin(), list.end(), [&](std::uint32_t a, std::uint32_t b) {
            const double da = pl.projected[a]->depth, db = pl.projected[b]->depth;
            return da != db ? da < db : a < b;
        });
    });
    return pl;
}

// Footprint weight exp(-1/2 d^T conic d), or 0 beyond the 3 sigma ellipse.
inline double footprint(const ProjectedGaussian& g, double px, double py) {
    const double dx = px - g.mean2d.x(), dy = py - g.mean2d.y();
    const double m2 = dx * (g.conic(0, 0) * dx + g.conic(0, 1) * dy) + dy * (g.conic(1, 0) * dx + g.conic(1, 1) * dy);
    if (m2 > kCutoffMahalanobis2) return 0.0;
    return std::exp(-0.5 * m2);
}

}  // namespace detail

/// Per-pixel compositing state kept for the backward pass.
struct RasterState {
    std::vector<double> color;           // 3 x H x W, double precision
    std::vector<double> transmittance;   // H x W final T
    std::vector<std::uint32_t> last;     // number of tile-list entries processed per pixel
};

/// Front-to-back alpha compositing over depth-sorted 16x16 tiles. Per pixel,
/// C = sum_i c_i g_i T_i with g_i = alpha_i exp(-1/2 d^T cov2d^-1 d), T_{i+1} = T_i (1 - g_i),
/// stopping once T < 1e-4. Background is black.
inline RenderedImage rasterize(const GaussianCloud& cloud, const PinholeCamera& cam, const RasterConfig& cfg = {},
                               RasterState* state = nullptr) {
    const auto pl = detail::plan(cloud, cam, cfg);
    const std::size_t H = cam.height, W = cam.width;
    RenderedImage img{Tensor({3, H, W}), Tensor({H, W})};
    RasterState local;
    RasterState& st = state ? *state : local;
    st.color.assign(3 * H * W, 0.0);
    st.transmittance.assign(H * W, 1.0);
    st.last.assign(H * W, 0);
    parallel_for(pl.tile_lists.size(), [&](std::size_t t) {
        const std::size_t tx = t % pl.tiles_x, ty = t / pl.tiles_x;
        const auto& list = pl.tile_lists[t];
        for (std::size_t y = ty * pl.tile; y < std::min(H, (ty + 1) * pl.tile); ++y) {
            for (std::size_t x = tx * pl.tile; x < std::min(W, (tx + 1) * pl.tile); ++x) {
                const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
                double T = 1.0, c[3] = {0, 0, 0};
                std::uint32_t processed = 0;
                for (std::uint32_t idx : list) {
                    ++processed;
                    const auto& g = *pl.projected[idx];
                    const double gi = g.alpha * detail::footprint(g, px, py);
                    if (gi <= 0) continue;
                    for (int k = 0; k < 3; ++k) c[k] += g.color[k] * gi * T;
                    T *= 1.0 - gi;
                    if (T < kMinTransmittance) break;
                }
                const std::size_t p = y * W + x;
                for (int k = 0; k < 3; ++k) {
                    st.color[k * H * W + p] = c[k];
                    img.color[k * H * W + p] = static_cast<float>(c[k]);
                }
                st.transmittance[p] = T;
                st.last[p] = processed;
                img.alpha[p] = static_cast<float>(1.0 - T);
            }
        }
    });
    return img;
}

struct ColorOpacityGradients {
    std::vector<Vec3f> colors;  // dL/dc, M x 3
    std::vector<float> opacities;  // dL/dalpha, M
};

/// Analytic dL/dc and dL/dalpha given dL/dimage (3 x H x W). Each pixel's list is re-traversed
/// back to front starting from the stored final transmittance. Culled Gaussians get zero.
inline ColorOpacityGradients rasterize_backward_color_opacity(const GaussianCloud& cloud, const PinholeCamera& cam,
                                                              const Tensor& upstream, const RasterConfig& cfg = {}) {
    const std::size_t H = cam.height, W = cam.width;
    if (upstream.shape() != Shape{3, H, W}) {
        throw ShapeError("rasterize_backward_color_opacity: upstream shape " + shape_to_string(upstream.shape()) +
                         " does not match image 3x" + std::to_string(H) + "x" + std::to_string(W));
    }
    const auto pl = detail::plan(cloud, cam, cfg);
    RasterState st;
    rasterize(cloud, cam, cfg, &st);
    const std::size_t M = cloud.size();
    // Tiles accumulate into private buffers that are summed in tile order afterwards.
    std::vector<std::vector<double>> tile_dc(pl.tile_lists.size()), tile_da(pl.tile_lists.size());
    parallel_for(pl.tile_lists.size(), [&](std::size_t t) {
        const auto& list = pl.tile_lists[t];
        if (list.empty()) return;
        auto& dc = tile_dc[t];
        auto& da = tile_da[t];
        dc.assign(list.size() * 3, 0.0);
        da.assign(list.size(), 0.0);
        const std::size_t tx = t % pl.tiles_x, ty = t / pl.tiles_x;
        for (std::size_t y = ty * pl.tile; y < std::min(H, (ty + 1) * pl.tile); ++y) {
            for (std::size_t x = tx * pl.tile; x < std::min(W, (tx + 1) * pl.tile); ++x) {
                const std::size_t p = y * W + x;
                const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
                const double up[3] = {upstream[p], upstream[H * W + p], upstream[2 * H * W + p]};
                double T = st.transmittance[p];
                double behind[3] = {0, 0, 0};  // sum over later Gaussians of c_j g_j T_j
                for (std::size_t k = st.last[p]; k-- > 0;) {
                    const auto& g = *pl.projected[list[k]];
                    const double G = detail::footprint(g, px, py);
                    const double gi = g.alpha * G;
                    if (gi <= 0) continue;
                    T /= 1.0 - gi;  // now T_i
                    double dgi = 0;
                    for (int ch = 0; ch < 3; ++ch) {
                        dc[k * 3 + ch] += up[ch] * gi * T;
                        dgi += up[ch] * (g.color[ch] * T - behind[ch] / (1.0 - gi));
                    }
                    da[k] += dgi * G;
                    for (int ch = 0; ch < 3; ++ch) behind[ch] += g.color[ch] * gi * T;
                }
            }
        }
    });
    std::vector<double> dc(M * 3, 0.0), da(M, 0.0);
    for (std::size_t t = 0; t < pl.tile_lists.size(); ++t) {
        const auto& list = pl.tile_lists[t];
        for (std::size_t k = 0; k < tile_da[t].size(); ++k) {
            const std::size_t i = list[k];
            da[i] += tile_da[t][k];
            for (int ch = 0; ch < 3; ++ch) dc[i * 3 + ch] += tile_dc[t][k * 3 + ch];
        }
    }
    ColorOpacityGradients out{std::vector<Vec3f>(M), std::vector<float>(M)};
    for (std::size_t i = 0; i < M; ++i) {
        for (int ch = 0; ch < 3; ++ch) out.colors[i][ch] = static_cast<float>(dc[i * 3 + ch]);
        out.opacities[i] = static_cast<float>(da[i]);
    }
    return out;
}

}  // namespace c3gs
