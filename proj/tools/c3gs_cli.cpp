// Copyright Contributors to the c3gs project
// SPDX-License-Identifier: Apache-2.0

// c3gs command line: render, depth-eval, gradcheck, selftest, synth, init-weights.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "c3gs/c3gs.hpp"
#include "criteria.hpp"

namespace fs = std::filesystem;

namespace {

struct RenderArgs {
    std::string scene, config, weights, out;
};

struct DepthEvalArgs {
    std::string pred, gt, mask;
    double near = 2.0, far = 10.0;
};

struct SynthArgs {
    std::string kind = "plane", out;
    std::size_t views = 3, width = 160, height = 128;
    std::uint64_t seed = 0;
    std::optional<double> baseline;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw c3gs::IoError(path.string(), "cannot open for writing");
    f << text;
    if (!f) throw c3gs::IoError(path.string(), "write failed");
}

void print_metrics(const std::vector<std::pair<std::string, double>>& entries) {
    for (const auto& [k, v] : entries) std::printf("%s %.9g\n", k.c_str(), v);
}

int cmd_render(const RenderArgs& a) {
    const c3gs::PipelineConfig cfg = a.config.empty() ? c3gs::PipelineConfig{} : c3gs::read_config(a.config);
    const c3gs::SceneBundle bundle = c3gs::load_scene(a.scene, cfg.target_view, cfg.source_views);
    std::optional<c3gs::WeightStore> weights;
    if (!a.weights.empty()) {
        weights = c3gs::read_ntw1(a.weights);
    } else if (cfg.mode == c3gs::FeatureMode::Learned) {
        weights = c3gs::init_pipeline_weights(cfg);
    }
    const c3gs::PipelineResult r = c3gs::run_pipeline(bundle, cfg, weights ? &*weights : nullptr);

    const fs::path out(a.out);
    fs::create_directories(out);
    c3gs::write_ppm((out / "render.ppm").string(), r.image().color);
    c3gs::write_file_bytes((out / "render.f32").string(), c3gs::encode_raw_f32(r.image().color));
    c3gs::write_ppm((out / "render_coarse.ppm").string(), r.coarse().render.color);
    c3gs::write_depth_pfm((out / "depth.pfm").string(), r.fine().depth);
    c3gs::write_depth_pfm((out / "depth_coarse.pfm").string(), r.coarse().depth);
    c3gs::write_gc01((out / "gaussians.gc01").string(), r.fine().cloud);
    c3gs::write_gc01((out / "gaussians_coarse.gc01").string(), r.coarse().cloud);
    write_text(out / "gaussians.ply", c3gs::format_ply(r.fine().cloud));
    write_text(out / "camera.txt", c3gs::format_camera_text(bundle.target_camera));

    nlohmann::ordered_json report;
    report["scene"] = a.scene;
    report["mode"] = cfg.mode == c3gs::FeatureMode::Learned ? "learned" : "photometric";
    report["source_views"] = bundle.source_ids;
    report["gaussians"] = r.fine().cloud.size();
    std::string text;
    if (r.metrics) {
        for (const auto& [k, v] : c3gs::metrics_entries(*r.metrics)) {
            report[k] = v;
            char line[128];
            std::snprintf(line, sizeof line, "%s %.9g\n", k.c_str(), v);
            text += line;
        }
    }
    write_text(out / "metrics.txt", text);
    write_text(out / "metrics.json", report.dump(2) + "\n");
    std::fputs(text.c_str(), stdout);
    std::printf("wrote %s\n", out.string().c_str());
    return 0;
}

int cmd_depth_eval(const DepthEvalArgs& a) {
    const c3gs::DepthMap pred = c3gs::read_depth_pfm(a.pred);
    const c3gs::DepthMap gt = c3gs::read_depth_pfm(a.gt);
    std::optional<c3gs::Mask> mask;
    if (!a.mask.empty()) mask = c3gs::read_depth_pfm(a.mask).valid;
    const c3gs::DepthMetrics m = c3gs::depth_metrics(pred, gt, mask ? &*mask : nullptr, a.near, a.far);
    if (m.valid_pixels == 0) throw c3gs::IoError(a.pred, "no pixel is valid in both depth maps");
    print_metrics({{"abs_err", m.abs_err},
                   {"acc_2", m.acc_2},
                   {"acc_10", m.acc_10},
                   {"within_1pct", m.within_1pct},
                   {"valid_pixels", static_cast<double>(m.valid_pixels)}});
    return 0;
}

int cmd_synth(const SynthArgs& a) {
    c3gs::SyntheticSpec spec;
    spec.kind = c3gs::parse_synthetic_kind(a.kind);
    spec.source_views = a.views;
    spec.width = a.width;
    spec.height = a.height;
    spec.seed = a.seed;
    if (a.baseline) spec.baseline = *a.baseline;
    c3gs::write_synthetic_scene(a.out, c3gs::generate_synthetic_scene(spec));
    std::printf("wrote %zu views to %s\n", a.views + 1, a.out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"c3gs: two-stage multi-view depth and Gaussian splatting"};
    app.require_subcommand(1);

    RenderArgs render;
    auto* r = app.add_subcommand("render", "run the pipeline on a scene directory");
    r->add_option("--scene", render.scene, "scene directory (images/, cams/, gt/)")->required();
    r->add_option("--config", render.config, "key = value config file");
    r->add_option("--weights", render.weights, "NTW1 weight file (learned mode)");
    r->add_option("--out", render.out, "output directory")->required();

    DepthEvalArgs eval;
    auto* d = app.add_subcommand("depth-eval", "compare a depth PFM against ground truth");
    d->add_option("--pred", eval.pred)->required();
    d->add_option("--gt", eval.gt)->required();
    d->add_option("--mask", eval.mask, "PFM; positive pixels are evaluated");
    d->add_option("--near", eval.near, "tight accuracy threshold, scene units");
    d->add_option("--far", eval.far, "loose accuracy threshold, scene units");

    std::uint64_t grad_seed = 0;
    auto* g = app.add_subcommand("gradcheck", "finite-difference check of the rasterizer gradients");
    g->add_option("--seed", grad_seed);

    auto* s = app.add_subcommand("selftest", "run every acceptance check");

    SynthArgs synth;
    double baseline = 0;
    auto* y = app.add_subcommand("synth", "write a synthetic scene with ground truth");
    y->add_option("--spec", synth.kind, "plane | two-plane | textured-sphere");
    y->add_option("--views", synth.views, "number of source views")->check(CLI::Range(2, 16));
    y->add_option("--width", synth.width)->check(CLI::Range(4, 4096));
    y->add_option("--height", synth.height)->check(CLI::Range(4, 4096));
    y->add_option("--seed", synth.seed);
    auto* base_opt = y->add_option("--baseline", baseline, "source camera circle radius");
    y->add_option("--out", synth.out)->required();

    std::string init_config, init_out;
    auto* w = app.add_subcommand("init-weights", "write seeded random weights for learned mode");
    w->add_option("--config", init_config);
    w->add_option("--out", init_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*r) return cmd_render(render);
        if (*d) return cmd_depth_eval(eval);
        if (*g) {
            const auto o = c3gs::checks::rasterizer_gradcheck(grad_seed);
            std::printf("[%s] rasterizer gradients: %s\n", o.pass ? "PASS" : "FAIL", o.detail.c_str());
            return o.pass ? 0 : 1;
        }
        if (*s) return c3gs::checks::run_criteria(c3gs::checks::acceptance_criteria()) == 0 ? 0 : 1;
        if (*y) {
            if (*base_opt) synth.baseline = baseline;
            return cmd_synth(synth);
        }
        if (*w) {
            const c3gs::PipelineConfig cfg = init_config.empty() ? c3gs::PipelineConfig{} : c3gs::read_config(init_config);
            c3gs::write_ntw1(init_out, c3gs::init_pipeline_weights(cfg));
            return 0;
        }
    } catch (const c3gs::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
