// Copyright Contributors to the c3gs project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "c3gs/camera.hpp"
#include "c3gs/cda.hpp"
#include "c3gs/config.hpp"
#include "c3gs/cost_volume.hpp"
#include "c3gs/fpn_cga.hpp"
#include "c3gs/gaussians.hpp"
#include "c3gs/image_io.hpp"
#include "c3gs/loss_metrics.hpp"
#include "c3gs/rasterizer.hpp"
#include "c3gs/scene.hpp"
#include "c3gs/weights.hpp"

namespace c3gs {

/// Every learned parameter of the two-stage network, seeded.
inline WeightStore init_pipeline_weights(const PipelineConfig& cfg) {
    cfg.validate();
    const SeededRng rng(cfg.seed);
    WeightStore store;
    init_fpn_weights(store, rng, cfg.fpn);
    init_regularizer_weights(store, rng, "reg.coarse", cfg.fpn.coarse_width);
    init_regularizer_weights(store, rng, "reg.fine", cfg.fpn.fine_width);
    init_cda_weights(store, rng, cfg.cda(cfg.fpn.coarse_width, "cda.coarse"));
    init_cda_weights(store, rng, cfg.cda(cfg.fpn.fine_width, "cda.fine"));
    init_decoder_weights(store, rng, cfg.decoder(1.0));
    return store;
}

struct StageResult {
    PinholeCamera camera;
    DepthHypotheses hypotheses;
    DepthMap depth;
    Tensor gaussian_features;  // HW x Dg (learned mode only)
    GaussianCloud cloud;
    RenderedImage render;
};

struct PipelineMetrics {
    double mse = 0;
    double psnr = 0;
    double ssim = 0;
    LossBreakdown loss;
    std::optional<DepthMetrics> depth;
};

/// Flat (key, value) view of the metrics, in report order.
inline std::vector<std::pair<std::string, double>> metrics_entries(const PipelineMetrics& m) {
    std::vector<std::pair<std::string, double>> out = {
        {"mse", m.mse}, {"psnr", m.psnr}, {"ssim", m.ssim}, {"loss_total", m.loss.total}};
    const char* names[2] = {"coarse", "fine"};
    for (std::size_t l = 0; l < m.loss.stages.size() && l < 2; ++l) {
        const auto& st = m.loss.stages[l];
        const std::string k = std::string("loss_") + names[l];
        out.emplace_back(k + "_pixel", st.pixel);
        out.emplace_back(k + "_structure", st.structure);
        out.emplace_back(k + "_feature", st.feature);
        out.emplace_back(k + "_weighted", st.weighted);
    }
    if (m.depth) {
        out.emplace_back("depth_abs_err", m.depth->abs_err);
        out.emplace_back("depth_acc_2", m.depth->acc_2);
        out.emplace_back("depth_acc_10", m.depth->acc_10);
        out.emplace_back("depth_valid_pixels", static_cast<double>(m.depth->valid_pixels));
        out.emplace_back("depth_within_1pct", m.depth->within_1pct);
    }
    return out;
}

struct PipelineResult {
    std::vector<StageResult> stages;  // coarse, fine
    std::optional<PipelineMetrics> metrics;

    const StageResult& coarse() const { return stages.at(0); }
    const StageResult& fine() const { return stages.at(1); }
    const RenderedImage& image() const { return fine().render; }
};

namespace detail {

template <typename Fn>
auto in_context(const char* stage, const char* module, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const ShapeError& e) {
        throw ShapeError(std::string(stage) + " stage, " + module + ": " + e.what());
    } catch (const Error& e) {
        throw Error(std::string(stage) + " stage, " + module + ": " + e.what());
    }
}

// Mean of each cost over the supported (>= 2 view) voxels of a square window at the same depth.
inline void aggregate_cost_window(CostVolume& vol, std::size_t window) {
    if (window <= 1) return;
    const std::size_t G = vol.channels(), D = vol.depth_count(), H = vol.height(), W = vol.width();
    const long r = static_cast<long>(window / 2);
    Tensor out(vol.values.shape());
    parallel_for(D, [&](std::size_t d) {
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                if (vol.views_at(d, y, x) < 2) {
                    for (std::size_t g = 0; g < G; ++g) out.at(g, d, y, x) = vol.values.at(g, d, y, x);
                    continue;
                }
                std::vector<double> acc(G, 0.0);
                std::size_t n = 0;
                for (long dy = -r; dy <= r; ++dy) {
                    const long yy = static_cast<long>(y) + dy;
                    if (yy < 0 || yy >= static_cast<long>(H)) continue;
                    for (long dx = -r; dx <= r; ++dx) {
                        const long xx = static_cast<long>(x) + dx;
                        if (xx < 0 || xx >= static_cast<long>(W)) continue;
                        if (vol.views_at(d, yy, xx) < 2) continue;
                        for (std::size_t g = 0; g < G; ++g) acc[g] += vol.values.at(g, d, yy, xx);
                        ++n;
                    }
                }
                for (std::size_t g = 0; g < G; ++g) out.at(g, d, y, x) = static_cast<float>(acc[g] / static_cast<double>(n));
            }
        }
    });
    vol.values = std::move(out);
}

// Clears validity where the view-averaged matching cost at the regressed depth exceeds `max_cost`.
inline void filter_by_cost(DepthMap& depth, const CostVolume& vol, double max_cost) {
    const std::size_t G = vol.channels(), H = vol.height(), W = vol.width();
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            if (!depth.valid(y, x)) continue;
            const double idx = hypothesis_index(vol.hypotheses, y, x, depth.values.at(y, x));
            double cost = 0;
            for (std::size_t g = 0; g < G; ++g) cost += interp_depth_axis(vol.values, g, idx, y, x);
            if (cost / static_cast<double>(G) > max_cost) depth.valid.set(y, x, false);
        }
}

// Fine hypothesis centers and half-ranges: the coarse depth and the local coarse spacing times
// `factor`, both upsampled x2.
inline std::pair<DepthMap, Tensor> fine_hypothesis_seed(const DepthMap& coarse, const DepthHypotheses& hyp,
                                                        double factor) {
    const std::size_t h = coarse.height(), w = coarse.width(), D = hyp.count();
    Tensor radius({1, h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double idx = hypothesis_index(hyp, y, x, coarse.values.at(y, x));
            const std::size_t k = std::min(static_cast<std::size_t>(idx), D - 2);
            radius.at(0, y, x) = static_cast<float>(factor * (hyp.values.at(k + 1, y, x) - hyp.values.at(k, y, x)));
        }
    Tensor center = bilinear_upsample_x2(coarse.values.reshaped({1, h, w}));
    Tensor r2 = bilinear_upsample_x2(radius);
    DepthMap c{center.reshaped({2 * h, 2 * w}), Mask(2 * h, 2 * w, true)};
    return {std::move(c), r2.reshaped({2 * h, 2 * w})};
}

}  // namespace detail

/// Isotropic Gaussians at `points` with per-pixel `colors` (HW x 3): sigma is `scale` pixel
/// footprints at each depth, identity rotation, constant opacity.
inline GaussianCloud photometric_cloud(const PointGrid& points, const Tensor& colors, const DepthMap& depth,
                                       const PinholeCamera& cam, double scale, double opacity) {
    const std::size_t M = points.points.size();
    expect_extent("photometric_cloud", "color rows", colors.dim(0), M);
    GaussianCloud cloud;
    cloud.resize(M);
    const double focal = std::sqrt(cam.K(0, 0) * cam.K(1, 1));
    for (std::size_t i = 0; i < M; ++i) {
        const auto& p = points.points[i];
        cloud.means[i] = {static_cast<float>(p.x()), static_cast<float>(p.y()), static_cast<float>(p.z())};
        const float s = std::max(kScaleMin, static_cast<float>(scale * depth.values[i] / focal));
        cloud.scales[i] = {s, s, s};
        cloud.rotations[i] = {1, 0, 0, 0};
        cloud.opacities[i] = std::clamp(static_cast<float>(opacity), kOpacityMin, kOpacityMax);
        for (std::size_t c = 0; c < 3; ++c) cloud.colors[i][c] = std::clamp(colors.at(i, c), 0.0f, 1.0f);
    }
    return cloud;
}

/// Runs both stages. `weights` is required in learned mode and ignored in photometric mode.
inline PipelineResult run_pipeline(const SceneBundle& bundle, const PipelineConfig& cfg, const WeightStore* weights) {
    cfg.validate();
    bundle.validate();
    const bool learned = cfg.mode == FeatureMode::Learned;
    if (learned && !weights) throw Error("run_pipeline: learned mode requires weights");
    const PinholeCamera& target = bundle.target_camera;
    const std::size_t H = target.height, W = target.width, N = bundle.source_images.size();
    if (H % 4 || W % 4) {
        throw ShapeError("run_pipeline: image extents must be divisible by 4, got " + std::to_string(H) + "x" +
                         std::to_string(W));
    }

    std::vector<FeaturePyramid> pyramids(N);
    if (learned) {
        detail::in_context("coarse", "fpn-cga", [&] {
            for (std::size_t i = 0; i < N; ++i) pyramids[i] = extract_pyramid(bundle.source_images[i], *weights, cfg.fpn);
        });
    }

    const double scale_max = target.depth_max;
    PipelineResult result;
    result.stages.resize(2);
    const char* names[2] = {"coarse", "fine"};
    for (std::size_t s = 0; s < 2; ++s) {
        const char* stage = names[s];
        StageResult& out = result.stages[s];
        const bool coarse = s == 0;
        out.camera = coarse ? target.scaled(0.5) : target;
        std::vector<PinholeCamera> cams(N);
        std::vector<Tensor> images(N), features(N);
        for (std::size_t i = 0; i < N; ++i) {
            cams[i] = coarse ? bundle.source_cameras[i].scaled(0.5) : bundle.source_cameras[i];
            images[i] = coarse ? downsample_x2(bundle.source_images[i]) : bundle.source_images[i];
            if (learned) {
                features[i] = bilinear_upsample_x2(coarse ? pyramids[i].coarse() : pyramids[i].fine());
            } else {
                features[i] = images[i];
            }
        }
        const std::size_t h = out.camera.height, w = out.camera.width;

        out.hypotheses = detail::in_context(stage, "camera-geometry", [&] {
            if (coarse) return sample_depth_hypotheses(out.camera, cfg.coarse_hypotheses, cfg.spacing, h, w);
            auto [center, radius] = detail::fine_hypothesis_seed(result.stages[0].depth, result.stages[0].hypotheses,
                                                                 cfg.fine_radius_factor);
            return sample_depth_hypotheses(out.camera, cfg.fine_hypotheses, cfg.spacing, center, radius);
        });

        CostVolume volume = detail::in_context(stage, "cost-volume", [&] {
            return build_cost_volume(out.camera, cams, features, out.hypotheses);
        });
        if (!learned) detail::aggregate_cost_window(volume, cfg.photometric_window);
        const std::string reg_prefix = std::string("reg.") + stage;
        RegularizerOutput reg = detail::in_context(stage, "cost-volume", [&] {
            return regularize(volume, weights, learned ? RegularizerMode::Learned : RegularizerMode::Bypass, reg_prefix);
        });
        out.depth = detail::in_context(stage, "cost-volume", [&] {
            const auto prob = to_probability(reg.logits, learned ? cfg.temperature : cfg.photometric_temperature);
            return regress_depth(prob, out.hypotheses, &volume);
        });
        if (!learned && cfg.photometric_max_cost > 0) detail::filter_by_cost(out.depth, volume, cfg.photometric_max_cost);

        PerViewPixelFeatures pv = detail::in_context(stage, "cda", [&] {
            return assemble_view_features(out.camera, cams, features, images, out.depth);
        });

        if (learned) {
            const CdaConfig cda = cfg.cda(features[0].dim(0), std::string("cda.") + stage);
            out.gaussian_features = detail::in_context(stage, "cda", [&] {
                const Tensor voxel = sample_voxel_features(reg.features, out.hypotheses, out.depth);
                const Tensor fu = view_unet_aggregate(pv, *weights, cda);
                return cross_dimensional_attention(fuse_combined(fu, voxel), pv.values, pv.valid, *weights, cda).features;
            });
            out.cloud = detail::in_context(stage, "gaussian-decode", [&] {
                return decode_params(out.gaussian_features, pv.points, *weights, cfg.decoder(scale_max));
            });
            if (!coarse) {
                const StageResult& prev = result.stages[0];
                out.cloud = detail::in_context(stage, "csf", [&] {
                    const Tensor wts = csf_fuse(prev.gaussian_features, prev.camera.height, prev.camera.width,
                                                out.gaussian_features, h, w, *weights, cfg.decoder(scale_max));
                    return apply_modulation(out.cloud, wts);
                });
            }
        } else {
            const std::size_t C = pv.width() - 7, HW = h * w;
            Tensor colors({HW, 3});
            for (std::size_t p = 0; p < HW; ++p) {
                std::size_t n = 0;
                double acc[3] = {0, 0, 0};
                for (std::size_t i = 0; i < N; ++i) {
                    if (!pv.valid[p * N + i]) continue;
                    ++n;
                    for (std::size_t c = 0; c < 3; ++c) acc[c] += pv.values.at(p, i, C + c);
                }
                for (std::size_t c = 0; c < 3; ++c) colors.at(p, c) = n ? static_cast<float>(acc[c] / static_cast<double>(n)) : 0.0f;
            }
            out.cloud = photometric_cloud(pv.points, colors, out.depth, out.camera, cfg.photometric_scale,
                                          cfg.photometric_opacity);
        }
        out.render = detail::in_context(stage, "rasterizer", [&] {
            return rasterize(out.cloud, out.camera, RasterConfig{cfg.tile_size});
        });
    }

    if (bundle.target_image) {
        const Tensor& gt = *bundle.target_image;
        PipelineMetrics m;
        const Tensor& pred = result.image().color;
        m.mse = mse(pred, gt);
        m.psnr = psnr(pred, gt);
        m.ssim = ssim(pred, gt);
        m.loss = total_loss({result.coarse().render.color, pred}, {downsample_x2(gt), gt}, cfg.loss);
        if (bundle.target_depth) {
            m.depth = depth_metrics(result.fine().depth, *bundle.target_depth, nullptr, cfg.depth_threshold_near,
                                    cfg.depth_threshold_far);
        }
        result.metrics = m;
    }
    return result;
}

}  // namespace c3gs
