// Copyright Contributors to the c3gs project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "c3gs/binary_io.hpp"
#include "c3gs/camera.hpp"
#include "c3gs/cda.hpp"
#include "c3gs/fpn_cga.hpp"
#include "c3gs/gaussians.hpp"
#include "c3gs/loss_metrics.hpp"
#include "c3gs/tensor.hpp"

namespace c3gs {

enum class FeatureMode { Learned, Photometric };

struct PipelineConfig {
    FeatureMode mode = FeatureMode::Photometric;
    std::size_t stages = 2;
    std::size_t coarse_hypotheses = 64;
    std::size_t fine_hypotheses = 8;
    HypothesisSpacing spacing = HypothesisSpacing::UniformDepth;
    double fine_radius_factor = 2.0;  // fine half-range in units of the coarse hypothesis spacing

    FpnConfig fpn;
    std::size_t cda_view_hidden = 32;
    std::size_t cda_aggregated = 16;
    std::size_t cda_attention_dim = 16;
    std::size_t gaussian_dim = 24;
    std::size_t head_hidden = 32;

    LossWeights loss;
    std::uint64_t seed = 0;
    std::size_t tile_size = 16;
    std::size_t source_views = 0;  // 0 = every non-target view
    std::size_t target_view = 0;
    double temperature = 1.0;      // learned-mode softmax temperature

    double photometric_temperature = 3e-4;
    std::size_t photometric_window = 7;  // box window over which matching cost is averaged
    double photometric_scale = 0.3;      // Gaussian sigma in pixel footprints
    double photometric_opacity = 0.98;
    double photometric_max_cost = 2.5e-4;  // confidence filter on the matching cost, 0 disables

    double depth_threshold_near = 2.0;
    double depth_threshold_far = 10.0;

    /// Throws on any inconsistent value.
    void validate() const {
        if (stages != 2) throw Error("config: stages must be 2");
        if (coarse_hypotheses < 2 || fine_hypotheses < 2) throw Error("config: hypothesis counts must be >= 2");
        if (!(fine_radius_factor > 0)) throw Error("config: fine_radius_factor must be positive");
        if (tile_size == 0) throw Error("config: tile_size must be positive");
        if (!(temperature > 0) || !(photometric_temperature > 0)) throw Error("config: temperatures must be positive");
        if (photometric_window % 2 == 0) throw Error("config: photometric_window must be odd");
        if (!(photometric_scale > 0)) throw Error("config: photometric_scale must be positive");
        if (!(photometric_opacity > 0 && photometric_opacity < 1)) throw Error("config: photometric_opacity must lie in (0, 1)");
        if (loss.gamma.size() != stages) throw Error("config: one gamma per stage is required");
        if (photometric_max_cost < 0) throw Error("config: photometric_max_cost must be nonnegative");
        if (fpn.attention_kernel % 2 == 0) throw Error("config: attention_kernel must be odd");
    }

    CdaConfig cda(std::size_t feature_channels, const std::string& prefix) const {
        CdaConfig c;
        c.feature_channels = feature_channels;
        c.view_hidden = cda_view_hidden;
        c.aggregated = cda_aggregated;
        c.attention_dim = cda_attention_dim;
        c.gaussian_dim = gaussian_dim;
        c.prefix = prefix;
        return c;
    }

    DecoderConfig decoder(double scale_max) const { return DecoderConfig{gaussian_dim, head_hidden, scale_max}; }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value, const std::string& where) {
    T out{};
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) throw Error(where + ": key '" + key + "' has invalid value '" + value + "'");
    return out;
}

}  // namespace detail

/// Flat `key = value` text; '#' starts a comment. Unknown keys, duplicates and malformed values are errors.
inline PipelineConfig parse_config(const std::string& text, const std::string& where = "<config>") {
    PipelineConfig cfg;
    std::map<std::string, std::function<void(const std::string&, const std::string&)>> setters;
    auto size_key = [&](const char* k, std::size_t& dst) {
        setters[k] = [&dst, where](const std::string& key, const std::string& v) {
            dst = detail::parse_number<std::size_t>(key, v, where);
        };
    };
    auto real_key = [&](const char* k, double& dst) {
        setters[k] = [&dst, where](const std::string& key, const std::string& v) {
            dst = detail::parse_number<double>(key, v, where);
        };
    };
    setters["mode"] = [&](const std::string& key, const std::string& v) {
        if (v == "learned") cfg.mode = FeatureMode::Learned;
        else if (v == "photometric") cfg.mode = FeatureMode::Photometric;
        else throw Error(where + ": key '" + key + "' must be learned or photometric, got '" + v + "'");
    };
    setters["hypothesis_spacing"] = [&](const std::string& key, const std::string& v) {
        if (v == "depth") cfg.spacing = HypothesisSpacing::UniformDepth;
        else if (v == "inverse_depth") cfg.spacing = HypothesisSpacing::UniformInverseDepth;
        else throw Error(where + ": key '" + key + "' must be depth or inverse_depth, got '" + v + "'");
    };
    setters["seed"] = [&](const std::string& key, const std::string& v) {
        cfg.seed = detail::parse_number<std::uint64_t>(key, v, where);
    };
    size_key("stages", cfg.stages);
    size_key("coarse_hypotheses", cfg.coarse_hypotheses);
    size_key("fine_hypotheses", cfg.fine_hypotheses);
    real_key("fine_radius_factor", cfg.fine_radius_factor);
    size_key("fpn_coarse_width", cfg.fpn.coarse_width);
    size_key("fpn_fine_width", cfg.fpn.fine_width);
    size_key("attention_kernel", cfg.fpn.attention_kernel);
    size_key("cda_view_hidden", cfg.cda_view_hidden);
    size_key("cda_aggregated", cfg.cda_aggregated);
    size_key("cda_attention_dim", cfg.cda_attention_dim);
    size_key("gaussian_dim", cfg.gaussian_dim);
    size_key("head_hidden", cfg.head_hidden);
    real_key("beta_s", cfg.loss.beta_s);
    real_key("beta_p", cfg.loss.beta_p);
    real_key("gamma_coarse", cfg.loss.gamma[0]);
    real_key("gamma_fine", cfg.loss.gamma[1]);
    size_key("tile_size", cfg.tile_size);
    size_key("source_views", cfg.source_views);
    size_key("target_view", cfg.target_view);
    real_key("temperature", cfg.temperature);
    real_key("photometric_temperature", cfg.photometric_temperature);
    size_key("photometric_window", cfg.photometric_window);
    real_key("photometric_scale", cfg.photometric_scale);
    real_key("photometric_opacity", cfg.photometric_opacity);
    real_key("photometric_max_cost", cfg.photometric_max_cost);
    real_key("depth_threshold_near", cfg.depth_threshold_near);
    real_key("depth_threshold_far", cfg.depth_threshold_far);

    std::map<std::string, std::size_t> seen;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::string at = where + ":" + std::to_string(lineno);
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Error(at + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        auto it = setters.find(key);
        if (it == setters.end()) throw Error(at + ": unknown key '" + key + "'");
        if (auto [pos, fresh] = seen.emplace(key, lineno); !fresh) {
            throw Error(at + ": key '" + key + "' already set on line " + std::to_string(pos->second));
        }
        it->second(key, value);
    }
    cfg.validate();
    return cfg;
}

inline PipelineConfig read_config(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    return parse_config(std::string(bytes.begin(), bytes.end()), path);
}

}  // namespace c3gs
