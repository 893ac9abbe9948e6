// Copyright Contributors to the c3gs project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "c3gs/camera.hpp"
#include "c3gs/image_io.hpp"
#include "c3gs/parallel.hpp"
#include "c3gs/tensor.hpp"

namespace c3gs {

/// Posed multi-view input: N source views plus the target camera, with optional ground truth.
struct SceneBundle {
    std::vector<Tensor> source_images;  // 3 x H x W in [0, 1]
    std::vector<PinholeCamera> source_cameras;
    PinholeCamera target_camera;
    std::optional<Tensor> target_image;
    std::optional<DepthMap> target_depth;
    std::vector<std::size_t> source_ids;  // view ids the sources were loaded from

    /// Throws unless N >= 2 and every image/camera agrees on resolution.
    void validate() const {
        if (source_images.size() < 2) throw Error("scene: at least 2 source views are required");
        if (source_images.size() != source_cameras.size()) throw Error("scene: image and camera counts differ");
        target_camera.validate();
        const std::size_t H = target_camera.height, W = target_camera.width;
        for (std::size_t i = 0; i < source_images.size(); ++i) {
            source_cameras[i].validate();
            if (source_images[i].shape() != Shape{3, H, W} || source_cameras[i].height != H ||
                source_cameras[i].width != W) {
                throw Error("scene: source view " + std::to_string(i) + " resolution differs from the target");
            }
        }
        if (target_image && target_image->shape() != Shape{3, H, W}) throw Error("scene: target image resolution");
        if (target_depth && (target_depth->height() != H || target_depth->width() != W)) {
            throw Error("scene: target depth resolution");
        }
    }
};

/// Nearest `count` candidates by camera-center distance to the target; ties go to the lower index.
inline std::vector<std::size_t> select_source_views(const PinholeCamera& target,
                                                    const std::vector<PinholeCamera>& candidates, std::size_t count) {
    if (count > candidates.size()) {
        throw Error("select_source_views: asked for " + std::to_string(count) + " views but only " +
                    std::to_string(candidates.size()) + " candidates exist");
    }
    const Eigen::Vector3d c = target.center();
    std::vector<double> dist(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) dist[i] = (candidates[i].center() - c).norm();
    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    order.resize(count);
    return order;
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

enum class SyntheticKind { Plane, TwoPlane, TexturedSphere };

inline SyntheticKind parse_synthetic_kind(const std::string& name) {
    if (name == "plane") return SyntheticKind::Plane;
    if (name == "two-plane") return SyntheticKind::TwoPlane;
    if (name == "textured-sphere") return SyntheticKind::TexturedSphere;
    throw Error("unknown synthetic scene '" + name + "' (expected plane, two-plane or textured-sphere)");
}

struct SyntheticSpec {
    SyntheticKind kind = SyntheticKind::Plane;
    std::size_t source_views = 3;
    std::size_t width = 160;
    std::size_t height = 128;
    std::uint64_t seed = 0;
    double baseline = 250.0;      // radius of the source-camera circle
    double plane_depth = 700.0;
    double near_depth = 620.0;    // two-plane: front half-plane
    double far_depth = 780.0;     // two-plane: back plane
    double sphere_radius = 150.0;
    double texture_cell = 24.0;   // value-noise lattice spacing, scene units
    double depth_min = 425.0;
    double depth_max = 935.0;
    double focal_factor = 1.2;    // focal length in units of image width
};

/// All views of a generated scene; view 0 is the target, views 1..N are sources.
struct SyntheticScene {
    std::vector<PinholeCamera> cameras;
    std::vector<Tensor> images;
    std::vector<DepthMap> depths;
};

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline double lattice_value(std::int64_t x, std::int64_t y, std::int64_t z, std::uint64_t key) {
    std::uint64_t h = key;
    h = mix64(h ^ static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ull);
    h = mix64(h ^ static_cast<std::uint64_t>(y) * 0xC2B2AE3D27D4EB4Full);
    h = mix64(h ^ static_cast<std::uint64_t>(z) * 0x165667B19E3779F9ull);
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline double smootherstep(double t) { return t * t * t * (t * (t * 6 - 15) + 10); }

// Trilinear value noise with quintic fade, in [0, 1].
inline double value_noise(const Eigen::Vector3d& p, std::uint64_t key) {
    const double fx = std::floor(p.x()), fy = std::floor(p.y()), fz = std::floor(p.z());
    const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy), iz = static_cast<std::int64_t>(fz);
    const double u = smootherstep(p.x() - fx), v = smootherstep(p.y() - fy), w = smootherstep(p.z() - fz);
    double acc = 0;
    for (int c = 0; c < 8; ++c) {
        const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
        const double wgt = (dx ? u : 1 - u) * (dy ? v : 1 - v) * (dz ? w : 1 - w);
        acc += wgt * lattice_value(ix + dx, iy + dy, iz + dz, key);
    }
    return acc;
}

struct SurfaceHit {
    double t = INFINITY;
    Eigen::Vector3d normal = Eigen::Vector3d::Zero();
};

inline void intersect_plane_z(const Eigen::Vector3d& o, const Eigen::Vector3d& d, double z, SurfaceHit& hit,
                              bool (*keep)(const Eigen::Vector3d&) = nullptr) {
    if (std::abs(d.z()) < 1e-12) return;
    const double t = (z - o.z()) / d.z();
    if (!(t > 0) || t >= hit.t) return;
    if (keep && !keep(o + t * d)) return;
    hit.t = t;
    hit.normal = Eigen::Vector3d(0, 0, -1);
}

inline void intersect_sphere(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Eigen::Vector3d& c, double r,
                             SurfaceHit& hit) {
    const Eigen::Vector3d oc = o - c;
    const double a = d.squaredNorm(), b = oc.dot(d), cc = oc.squaredNorm() - r * r;
    const double disc = b * b - a * cc;
    if (disc < 0) return;
    const double t = (-b - std::sqrt(disc)) / a;
    if (!(t > 0) || t >= hit.t) return;
    hit.t = t;
    hit.normal = (o + t * d - c).normalized();
}

}  // namespace detail

/// Renders an analytic Lambertian scene with value-noise albedo from every view, with exact depth.
/// Deterministic in `spec.seed`.
inline SyntheticScene generate_synthetic_scene(const SyntheticSpec& spec) {
    if (spec.source_views < 2) throw Error("generate_synthetic_scene: need at least 2 source views");
    if (spec.width == 0 || spec.height == 0) throw Error("generate_synthetic_scene: empty resolution");
    const std::size_t H = spec.height, W = spec.width, V = spec.source_views + 1;
    PinholeCamera base;
    base.width = W;
    base.height = H;
    base.K << spec.focal_factor * static_cast<double>(W), 0, 0.5 * static_cast<double>(W),  //
        0, spec.focal_factor * static_cast<double>(W), 0.5 * static_cast<double>(H),          //
        0, 0, 1;
    base.depth_min = spec.depth_min;
    base.depth_max = spec.depth_max;

    const double focus = spec.kind == SyntheticKind::TwoPlane ? 0.5 * (spec.near_depth + spec.far_depth)
                                                              : spec.plane_depth;
    SyntheticScene scene;
    scene.cameras.push_back(base);
    for (std::size_t k = 0; k < spec.source_views; ++k) {
        const double a = 0.5 * M_PI + 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(spec.source_views);
        PinholeCamera cam = base;
        look_at(cam, Eigen::Vector3d(spec.baseline * std::cos(a), spec.baseline * std::sin(a), 0),
                Eigen::Vector3d(0, 0, focus));
        scene.cameras.push_back(cam);
    }

    const std::uint64_t key = detail::mix64(spec.seed + 0x51ED270B27ull);
    const Eigen::Vector3d light = Eigen::Vector3d(0.3, -0.5, -1.0).normalized();
    const Eigen::Vector3d sphere_center(0, 0, spec.plane_depth);
    auto shade = [&](const Eigen::Vector3d& o, const Eigen::Vector3d& d, float* rgb, double& depth_t) {
        detail::SurfaceHit hit;
        switch (spec.kind) {
            case SyntheticKind::Plane:
                detail::intersect_plane_z(o, d, spec.plane_depth, hit);
                break;
            case SyntheticKind::TwoPlane:
                detail::intersect_plane_z(o, d, spec.far_depth, hit);
                detail::intersect_plane_z(o, d, spec.near_depth, hit, [](const Eigen::Vector3d& p) { return p.x() < 0; });
                break;
            case SyntheticKind::TexturedSphere:
                detail::intersect_plane_z(o, d, spec.plane_depth + 1.5 * spec.sphere_radius, hit);
                detail::intersect_sphere(o, d, sphere_center, spec.sphere_radius, hit);
                break;
        }
        depth_t = hit.t;
        if (!std::isfinite(hit.t)) {
            rgb[0] = rgb[1] = rgb[2] = 0;
            return;
        }
        const Eigen::Vector3d p = (o + hit.t * d) / spec.texture_cell;
        const double lambert = 0.35 + 0.65 * std::max(0.0, hit.normal.dot(light));
        for (int c = 0; c < 3; ++c) {
            const std::uint64_t ck = key + 0x1000ull * static_cast<std::uint64_t>(c + 1);
            const double n = 0.7 * detail::value_noise(p, ck) + 0.3 * detail::value_noise(2.0 * p, ck ^ 0xABCDull);
            rgb[c] = static_cast<float>(lambert * (0.1 + 0.85 * n));
        }
    };

    for (std::size_t v = 0; v < V; ++v) {
        const PinholeCamera& cam = scene.cameras[v];
        Tensor img({3, H, W});
        DepthMap depth{Tensor({H, W}), Mask(H, W)};
        const Eigen::Matrix3d Kinv = cam.K.inverse();
        const Eigen::Vector3d o = cam.center();
        parallel_for(H, [&](std::size_t y) {
            for (std::size_t x = 0; x < W; ++x) {
                const Eigen::Vector3d ray_cam = Kinv * Eigen::Vector3d(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, 1);
                const Eigen::Vector3d d = cam.R.transpose() * ray_cam;  // unit camera-space z
                float rgb[3];
                double t;
                shade(o, d, rgb, t);
                for (int c = 0; c < 3; ++c) img.at(c, y, x) = rgb[c];
                const bool ok = std::isfinite(t);
                depth.values.at(y, x) = ok ? static_cast<float>(t) : 0.0f;
                depth.valid.set(y, x, ok);
            }
        });
        scene.images.push_back(std::move(img));
        scene.depths.push_back(std::move(depth));
    }
    return scene;
}

// ---------------------------------------------------------------------------
// Scene directories: images/NNNN.ppm, cams/NNNN.txt, gt/depth_NNNN.pfm
// ---------------------------------------------------------------------------

inline std::string view_stem(std::size_t id) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%04zu", id);
    return buf;
}

inline void write_synthetic_scene(const std::string& dir, const SyntheticScene& scene) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "cams");
    fs::create_directories(fs::path(dir) / "gt");
    for (std::size_t v = 0; v < scene.cameras.size(); ++v) {
        const std::string stem = view_stem(v);
        write_ppm((fs::path(dir) / "images" / (stem + ".ppm")).string(), scene.images[v]);
        write_camera_text((fs::path(dir) / "cams" / (stem + ".txt")).string(), scene.cameras[v]);
        write_depth_pfm((fs::path(dir) / "gt" / ("depth_" + stem + ".pfm")).string(), scene.depths[v]);
    }
}

/// Bundle from in-memory views; `target` is the novel view, sources are the nearest `count`
/// remaining views (0 = all of them).
inline SceneBundle make_bundle(const std::vector<PinholeCamera>& cameras, const std::vector<Tensor>& images,
                               const std::vector<std::optional<DepthMap>>& depths, std::size_t target,
                               std::size_t count) {
    if (target >= cameras.size()) throw Error("scene: target view " + std::to_string(target) + " does not exist");
    std::vector<std::size_t> ids;
    std::vector<PinholeCamera> candidates;
    for (std::size_t v = 0; v < cameras.size(); ++v) {
        if (v == target) continue;
        ids.push_back(v);
        candidates.push_back(cameras[v]);
    }
    const auto chosen = select_source_views(cameras[target], candidates, count == 0 ? candidates.size() : count);
    SceneBundle b;
    b.target_camera = cameras[target];
    for (std::size_t k : chosen) {
        b.source_ids.push_back(ids[k]);
        b.source_cameras.push_back(cameras[ids[k]]);
        b.source_images.push_back(images[ids[k]]);
    }
    if (target < images.size() && images[target].size() > 0) b.target_image = images[target];
    if (target < depths.size()) b.target_depth = depths[target];
    b.validate();
    return b;
}

inline SceneBundle make_bundle(const SyntheticScene& scene, std::size_t target = 0, std::size_t count = 0) {
    std::vector<std::optional<DepthMap>> depths(scene.depths.begin(), scene.depths.end());
    return make_bundle(scene.cameras, scene.images, depths, target, count);
}

/// Loads every view under `dir`. The target image and depth are optional ground truth.
inline SceneBundle load_scene(const std::string& dir, std::size_t target = 0, std::size_t count = 0) {
    namespace fs = std::filesystem;
    const fs::path cams_dir = fs::path(dir) / "cams";
    if (!fs::is_directory(cams_dir)) throw IoError(cams_dir.string(), "scene camera directory not found");
    std::vector<std::size_t> ids;
    for (const auto& e : fs::directory_iterator(cams_dir)) {
        const auto stem = e.path().stem().string();
        if (e.path().extension() != ".txt" || stem.size() != 4 ||
            !std::all_of(stem.begin(), stem.end(), [](char c) { return c >= '0' && c <= '9'; })) {
            continue;
        }
        ids.push_back(std::stoul(stem));
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw IoError(cams_dir.string(), "no NNNN.txt camera files");
    const std::size_t V = ids.back() + 1;
    for (std::size_t k = 0; k < ids.size(); ++k)
        if (ids[k] != k) throw IoError(cams_dir.string(), "view ids must be contiguous from 0000, missing " + view_stem(k));

    std::vector<Tensor> images(V);
    std::size_t H = 0, W = 0;
    for (std::size_t v = 0; v < V; ++v) {
        const fs::path p = fs::path(dir) / "images" / (view_stem(v) + ".ppm");
        if (fs::exists(p)) {
            images[v] = read_ppm(p.string());
            H = images[v].dim(1);
            W = images[v].dim(2);
        } else if (v != target) {
            throw IoError(p.string(), "source image not found");
        }
    }
    std::vector<PinholeCamera> cams(V);
    std::vector<std::optional<DepthMap>> depths(V);
    for (std::size_t v = 0; v < V; ++v) {
        cams[v] = read_camera_text((cams_dir / (view_stem(v) + ".txt")).string(), W, H);
        const fs::path dp = fs::path(dir) / "gt" / ("depth_" + view_stem(v) + ".pfm");
        if (v == target && fs::exists(dp)) depths[v] = read_depth_pfm(dp.string());
    }
    return make_bundle(cams, images, depths, target, count);
}

}  // namespace c3gs
