// Copyright Contributors to the c3gs project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "c3gs/binary_io.hpp"
#include "c3gs/kernels.hpp"
#include "c3gs/tensor.hpp"

namespace c3gs {

/// Pinhole camera. R, t map world to camera coordinates (x_cam = R x_world + t).
/// Pixel (i, j) covers [i, i+1) x [j, j+1); its center sits at (i + 0.5, j + 0.5).
struct PinholeCamera {
    Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    Eigen::Vector3d t = Eigen::Vector3d::Zero();
    std::size_t width = 0;
    std::size_t height = 0;
    double depth_min = 0.1;
    double depth_max = 1.0;

    Eigen::Vector3d center() const { return -R.transpose() * t; }

    /// Throws if any invariant (orthonormal R, upper-triangular K, valid depth range) fails.
    void validate() const {
        const double orth = (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
        if (!(orth <= 1e-5)) throw Error("camera: rotation is not orthonormal (error " + std::to_string(orth) + ")");
        if (std::abs(R.determinant() - 1.0) > 1e-5) throw Error("camera: rotation determinant is not 1");
        if (K(1, 0) != 0 || K(2, 0) != 0 || K(2, 1) != 0 || K(2, 2) != 1.0) {
            throw Error("camera: intrinsics must be upper triangular with K(2,2) = 1");
        }
        if (!(K(0, 0) > 0 && K(1, 1) > 0)) throw Error("camera: focal lengths must be positive");
        if (!(depth_min > 0 && depth_min < depth_max)) throw Error("camera: need 0 < depth_min < depth_max");
        if (!t.allFinite() || !K.allFinite()) throw Error("camera: non-finite parameters");
    }

    /// Camera for the same view at `factor` times the resolution (0.5 halves it).
    PinholeCamera scaled(double factor) const {
        PinholeCamera c = *this;
        c.K.row(0) *= factor;
        c.K.row(1) *= factor;
        c.width = static_cast<std::size_t>(std::lround(static_cast<double>(width) * factor));
        c.height = static_cast<std::size_t>(std::lround(static_cast<double>(height) * factor));
        return c;
    }

    /// Projects a world point; returns (u, v, depth) with (u, v) in continuous pixel units.
    Eigen::Vector3d project(const Eigen::Vector3d& world) const {
        const Eigen::Vector3d cam = R * world + t;
        const Eigen::Vector3d p = K * cam;
        return {p.x() / p.z(), p.y() / p.z(), cam.z()};
    }

    /// Lifts continuous pixel (u, v) at camera depth z to world coordinates.
    Eigen::Vector3d unproject(double u, double v, double depth) const {
        const Eigen::Vector3d ray = K.inverse() * Eigen::Vector3d(u, v, 1.0);
        return R.transpose() * (depth * ray - t);
    }
};

// ---------------------------------------------------------------------------
// Camera text files
// ---------------------------------------------------------------------------

inline std::string format_camera_text(const PinholeCamera& cam) {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "extrinsic\n";
    for (int r = 0; r < 3; ++r) {
        out << cam.R(r, 0) << ' ' << cam.R(r, 1) << ' ' << cam.R(r, 2) << ' ' << cam.t(r) << '\n';
    }
    out << "0 0 0 1\n\nintrinsic\n";
    for (int r = 0; r < 3; ++r) out << cam.K(r, 0) << ' ' << cam.K(r, 1) << ' ' << cam.K(r, 2) << '\n';
    out << '\n' << cam.depth_min << ' ' << cam.depth_max << '\n';
    return out.str();
}

/// Parses the "extrinsic / intrinsic / depth range" text layout. Image extents are not part
/// of the file and are supplied by the caller.
inline PinholeCamera parse_camera_text(const std::string& text, std::size_t width, std::size_t height,
                                       const std::string& path = "<memory>") {
    std::istringstream in(text);
    std::string token;
    auto expect_word = [&](const char* word) {
        if (!(in >> token) || token != word) {
            throw IoError(path, std::string("expected '") + word + "', found '" + token + "'");
        }
    };
    auto number = [&](const char* field) {
        if (!(in >> token)) throw IoError(path, std::string("missing value for ") + field);
        try {
            std::size_t used = 0;
            double v = std::stod(token, &used);
            if (used != token.size()) throw std::invalid_argument(token);
            return v;
        } catch (const std::exception&) {
            throw IoError(path, std::string("malformed number '") + token + "' in " + field);
        }
    };
    PinholeCamera cam;
    expect_word("extrinsic");
    Eigen::Matrix4d E;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) E(r, c) = number("extrinsic");
    expect_word("intrinsic");
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) cam.K(r, c) = number("intrinsic");
    cam.depth_min = number("depth_min");
    cam.depth_max = number("depth_max");
    if (in >> token) throw IoError(path, "unexpected trailing token '" + token + "'");
    cam.R = E.block<3, 3>(0, 0);
    cam.t = E.block<3, 1>(0, 3);
    cam.width = width;
    cam.height = height;
    try {
        cam.validate();
    } catch (const Error& e) {
        throw IoError(path, e.what());
    }
    return cam;
}

inline PinholeCamera read_camera_text(const std::string& path, std::size_t width, std::size_t height) {
    std::ifstream in(path);
    if (!in) throw IoError(path, "cannot open for reading");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_camera_text(ss.str(), width, height, path);
}

inline void write_camera_text(const std::string& path, const PinholeCamera& cam) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(path, "cannot open for writing");
    out << format_camera_text(cam);
}

// ---------------------------------------------------------------------------
// Depth hypotheses
// ---------------------------------------------------------------------------

enum class HypothesisSpacing { UniformDepth, UniformInverseDepth };

/// Depth map at some stage resolution with a per-pixel validity mask.
struct DepthMap {
    Tensor values;  // H x W, scene units
    Mask valid;

    std::size_t height() const { return values.dim(0); }
    std::size_t width() const { return values.dim(1); }
};

/// Per-pixel hypothesis tensor, D x H x W, strictly increasing along D.
struct DepthHypotheses {
    enum class Stage { Coarse, Fine };
    Tensor values;
    Stage stage = Stage::Coarse;

    std::size_t count() const { return values.dim(0); }
};

/// Strictly increasing `count` depths spanning [lo, hi].
inline std::vector<double> depth_ladder(double lo, double hi, std::size_t count, HypothesisSpacing spacing) {
    if (count < 2) throw Error("sample_depth_hypotheses: count must be >= 2");
    std::vector<double> out(count);
    for (std::size_t k = 0; k < count; ++k) {
        const double f = static_cast<double>(k) / static_cast<double>(count - 1);
        if (spacing == HypothesisSpacing::UniformDepth) {
            out[k] = lo + (hi - lo) * f;
        } else {
            const double inv = 1.0 / lo + (1.0 / hi - 1.0 / lo) * f;
            out[k] = 1.0 / inv;
        }
    }
    out.front() = lo;
    out.back() = hi;
    return out;
}

/// Coarse stage: one global ladder over the camera's depth range, broadcast to H x W.
inline DepthHypotheses sample_depth_hypotheses(const PinholeCamera& cam, std::size_t count,
                                               HypothesisSpacing spacing, std::size_t height, std::size_t width) {
    const auto ladder = depth_ladder(cam.depth_min, cam.depth_max, count, spacing);
    DepthHypotheses h{Tensor({count, height, width}), DepthHypotheses::Stage::Coarse};
    for (std::size_t k = 0; k < count; ++k) {
        std::fill_n(h.values.data().begin() + static_cast<std::ptrdiff_t>(k * height * width), height * width,
                    static_cast<float>(ladder[k]));
    }
    return h;
}

/// Fine stage: per pixel, `count` depths over [center - radius, center + radius] clamped
/// to the camera range. `radius` is H x W.
inline DepthHypotheses sample_depth_hypotheses(const PinholeCamera& cam, std::size_t count,
                                               HypothesisSpacing spacing, const std::optional<DepthMap>& center,
                                               const Tensor& radius) {
    if (count < 2) throw Error("sample_depth_hypotheses: count must be >= 2");
    if (!center) throw Error("sample_depth_hypotheses: fine stage requires a coarse depth map as center");
    const std::size_t H = center->height(), W = center->width();
    expect_rank("sample_depth_hypotheses", "radius", radius, 2);
    expect_extent("sample_depth_hypotheses", "radius height (axis 0)", radius.dim(0), H);
    expect_extent("sample_depth_hypotheses", "radius width (axis 1)", radius.dim(1), W);
    DepthHypotheses h{Tensor({count, H, W}), DepthHypotheses::Stage::Fine};
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            const double r = std::max(static_cast<double>(radius.at(y, x)), 1e-9);
            const double c = std::clamp(static_cast<double>(center->values.at(y, x)), cam.depth_min, cam.depth_max);
            double lo = std::max(c - r, cam.depth_min);
            double hi = std::min(c + r, cam.depth_max);
            if (!(hi > lo)) hi = std::nextafter(lo, cam.depth_max + 1);
            const auto ladder = depth_ladder(lo, hi, count, spacing);
            for (std::size_t k = 0; k < count; ++k) h.values.at(k, y, x) = static_cast<float>(ladder[k]);
        }
    }
    return h;
}

// ---------------------------------------------------------------------------
// Homographies and warping
// ---------------------------------------------------------------------------

/// Relative pose taking target-camera coordinates to source-camera coordinates.
inline void relative_pose(const PinholeCamera& src, const PinholeCamera& tgt, Eigen::Matrix3d& R_rel,
                          Eigen::Vector3d& t_rel) {
    R_rel = src.R * tgt.R.transpose();
    t_rel = src.t - R_rel * tgt.t;
}

/// Homography mapping target pixels to source pixels through the fronto-parallel plane
/// z_tgt = depth of the target camera.
inline Eigen::Matrix3d homography_for_plane(const PinholeCamera& src, const PinholeCamera& tgt, double depth) {
    if (!(depth > 0)) throw Error("homography_for_plane: depth must be positive");
    if (std::abs(tgt.K.determinant()) < 1e-12 || std::abs(src.K.determinant()) < 1e-12) {
        throw Error("homography_for_plane: singular intrinsics");
    }
    Eigen::Matrix3d R_rel;
    Eigen::Vector3d t_rel;
    relative_pose(src, tgt, R_rel, t_rel);
    const Eigen::Vector3d n(0, 0, 1);
    // Points on the plane satisfy n^T X / depth = 1, so X_src = (R_rel + t_rel n^T / depth) X_tgt.
    return src.K * (R_rel + t_rel * n.transpose() / depth) * tgt.K.inverse();
}

/// Source-image array coordinate hit by target pixel (x, y) under homography H.
/// Returns false when the point maps behind the source camera.
inline bool warp_coordinate(const Eigen::Matrix3d& H, std::size_t x, std::size_t y, double& sx, double& sy) {
    const Eigen::Vector3d q = H * Eigen::Vector3d(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, 1.0);
    if (!(q.z() > 1e-12)) return false;
    sx = q.x() / q.z() - 0.5;
    sy = q.y() / q.z() - 0.5;
    return true;
}

/// Warps a C x H x W source feature into an out_h x out_w target grid through H.
inline Sampled warp_feature(const Tensor& feature, const Eigen::Matrix3d& H, std::size_t out_h, std::size_t out_w) {
    expect_rank("warp_feature", "feature", feature, 3);
    const std::size_t C = feature.dim(0);
    Sampled result{Tensor({C, out_h, out_w}), Mask(out_h, out_w)};
    parallel_for(out_h, [&](std::size_t y) {
        std::vector<float> buf(C);
        for (std::size_t x = 0; x < out_w; ++x) {
            double sx, sy;
            bool ok = warp_coordinate(H, x, y, sx, sy) && bilinear_sample_point(feature, sx, sy, buf);
            if (!ok) std::fill(buf.begin(), buf.end(), 0.0f);
            result.valid.set(y, x, ok);
            for (std::size_t c = 0; c < C; ++c) result.values.at(c, y, x) = buf[c];
        }
    });
    return result;
}

// ---------------------------------------------------------------------------
// Back-projection and ray features
// ---------------------------------------------------------------------------

/// H x W grid of world points, row-major.
struct PointGrid {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<Eigen::Vector3d> points;

    const Eigen::Vector3d& operator()(std::size_t y, std::size_t x) const { return points[y * width + x]; }
};

/// World point for every pixel center at its depth: R^T (depth K^-1 [u, v, 1] - t).
inline PointGrid backproject_depth(const DepthMap& depth, const PinholeCamera& cam) {
    const std::size_t H = depth.height(), W = depth.width();
    PointGrid grid{H, W, std::vector<Eigen::Vector3d>(H * W)};
    const Eigen::Matrix3d Kinv = cam.K.inverse();
    const Eigen::Matrix3d Rt = cam.R.transpose();
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            const Eigen::Vector3d ray = Kinv * Eigen::Vector3d(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, 1.0);
            grid.points[y * W + x] = Rt * (static_cast<double>(depth.values.at(y, x)) * ray - cam.t);
        }
    }
    return grid;
}

/// 4 x H x W ray features for a target/source pair: channels 0-2 hold the unit ray from the
/// target center to each point minus the unit ray from the source center to the same point
/// (world frame); channel 3 holds their dot product.
inline Tensor ray_direction_features(const PinholeCamera& tgt, const PinholeCamera& src, const PointGrid& points) {
    const std::size_t H = points.height, W = points.width;
    Tensor out({4, H, W});
    const Eigen::Vector3d ct = tgt.center(), cs = src.center();
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            const Eigen::Vector3d& p = points(y, x);
            Eigen::Vector3d rt = p - ct;
            Eigen::Vector3d rs = p - cs;
            rt = rt.norm() > 0 ? Eigen::Vector3d(rt.normalized()) : Eigen::Vector3d(0, 0, 1);
            rs = rs.norm() > 0 ? Eigen::Vector3d(rs.normalized()) : rt;
            const Eigen::Vector3d d = rt - rs;
            out.at(0, y, x) = static_cast<float>(d.x());
            out.at(1, y, x) = static_cast<float>(d.y());
            out.at(2, y, x) = static_cast<float>(d.z());
            out.at(3, y, x) = static_cast<float>(rt.dot(rs));
        }
    }
    return out;
}

/// Look-at pose: camera at `eye` looking toward `target` with image y pointing along -up.
inline void look_at(PinholeCamera& cam, const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                    const Eigen::Vector3d& up = Eigen::Vector3d(0, -1, 0)) {
    const Eigen::Vector3d z = (target - eye).normalized();
    const Eigen::Vector3d x = z.cross(up).normalized();
    const Eigen::Vector3d y = z.cross(x);
    cam.R.row(0) = x.transpose();
    cam.R.row(1) = y.transpose();
    cam.R.row(2) = z.transpose();
    cam.t = -cam.R * eye;
}

}  // namespace c3gs
