// Copyright Contributors to the c3gs project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "c3gs/binary_io.hpp"
#include "c3gs/camera.hpp"
#include "c3gs/tensor.hpp"

namespace c3gs {

namespace detail {
// Reads one whitespace-delimited header token, skipping '#' comments.
inline std::string header_token(const std::vector<std::uint8_t>& bytes, std::size_t& pos, const std::string& path) {
    while (pos < bytes.size()) {
        if (bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (std::isspace(bytes[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(static_cast<char>(bytes[pos++]));
    if (tok.empty()) throw IoError(path, "truncated header");
    return tok;
}

inline std::size_t header_int(const std::vector<std::uint8_t>& bytes, std::size_t& pos, const std::string& path,
                              const char* field) {
    std::string tok = header_token(bytes, pos, path);
    try {
        std::size_t used = 0;
        long v = std::stol(tok, &used);
        if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw IoError(path, std::string("bad ") + field + " '" + tok + "'");
    }
}
}  // namespace detail

/// 8-bit quantization used by the PPM writer: round(255 v) after clamping to [0, 1].
inline std::uint8_t quantize_unit(float v) {
    double c = std::isfinite(v) ? std::clamp(static_cast<double>(v), 0.0, 1.0) : 0.0;
    return static_cast<std::uint8_t>(std::lround(255.0 * c));
}

/// Binary P6, maxval 255, from a 3 x H x W tensor in [0, 1].
inline std::vector<std::uint8_t> encode_ppm(const Tensor& image) {
    expect_rank("encode_ppm", "image", image, 3);
    expect_extent("encode_ppm", "channel axis (0)", image.dim(0), 3);
    const std::size_t H = image.dim(1), W = image.dim(2);
    ByteWriter w;
    w.text("P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n");
    std::vector<std::uint8_t> px(H * W * 3);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c) px[(y * W + x) * 3 + c] = quantize_unit(image.at(c, y, x));
    w.raw(px.data(), px.size());
    return std::move(w.bytes());
}

inline Tensor decode_ppm(const std::vector<std::uint8_t>& bytes, const std::string& path = "<memory>") {
    std::size_t pos = 0;
    if (detail::header_token(bytes, pos, path) != "P6") throw IoError(path, "not a binary PPM (P6)");
    const std::size_t W = detail::header_int(bytes, pos, path, "width");
    const std::size_t H = detail::header_int(bytes, pos, path, "height");
    const std::size_t maxval = detail::header_int(bytes, pos, path, "maxval");
    if (maxval != 255) throw IoError(path, "only maxval 255 is supported");
    ++pos;  // single whitespace after maxval
    if (bytes.size() < pos + H * W * 3) throw IoError(path, "truncated pixel data");
    Tensor image({3, H, W});
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                image.at(c, y, x) = static_cast<float>(bytes[pos + (y * W + x) * 3 + c]) / 255.0f;
    return image;
}

inline void write_ppm(const std::string& path, const Tensor& image) { write_file_bytes(path, encode_ppm(image)); }
inline Tensor read_ppm(const std::string& path) { return decode_ppm(read_file_bytes(path), path); }

/// Single-channel PFM: "Pf", little-endian (scale -1.0), rows stored bottom-up.
inline std::vector<std::uint8_t> encode_pfm(const Tensor& map) {
    expect_rank("encode_pfm", "map", map, 2);
    const std::size_t H = map.dim(0), W = map.dim(1);
    ByteWriter w;
    w.text("Pf\n" + std::to_string(W) + " " + std::to_string(H) + "\n-1.0\n");
    for (std::size_t r = 0; r < H; ++r) {
        const std::size_t y = H - 1 - r;
        for (std::size_t x = 0; x < W; ++x) w.f32(map.at(y, x));
    }
    return std::move(w.bytes());
}

inline Tensor decode_pfm(const std::vector<std::uint8_t>& bytes, const std::string& path = "<memory>") {
    std::size_t pos = 0;
    if (detail::header_token(bytes, pos, path) != "Pf") throw IoError(path, "not a single-channel PFM (Pf)");
    const std::size_t W = detail::header_int(bytes, pos, path, "width");
    const std::size_t H = detail::header_int(bytes, pos, path, "height");
    const std::string scale_tok = detail::header_token(bytes, pos, path);
    double scale = 0;
    try {
        scale = std::stod(scale_tok);
    } catch (const std::exception&) {
        throw IoError(path, "bad scale '" + scale_tok + "'");
    }
    if (!(scale < 0)) throw IoError(path, "big-endian PFM is not supported");
    ++pos;
    if (bytes.size() < pos + H * W * 4) throw IoError(path, "truncated payload");
    std::vector<std::uint8_t> payload(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
    ByteReader r(payload, path);
    Tensor map({H, W});
    for (std::size_t row = 0; row < H; ++row) {
        const std::size_t y = H - 1 - row;
        for (std::size_t x = 0; x < W; ++x) map.at(y, x) = r.f32("payload");
    }
    return map;
}

inline void write_pfm(const std::string& path, const Tensor& map) { write_file_bytes(path, encode_pfm(map)); }
inline Tensor read_pfm(const std::string& path) { return decode_pfm(read_file_bytes(path), path); }

/// Depth map as PFM; invalid pixels are written as 0.
inline void write_depth_pfm(const std::string& path, const DepthMap& depth) {
    Tensor v = depth.values;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (!depth.valid.bits[i]) v[i] = 0.0f;
    write_pfm(path, v);
}

/// Reads a depth PFM; pixels with non-positive or non-finite values are invalid.
inline DepthMap read_depth_pfm(const std::string& path) {
    DepthMap d{read_pfm(path), {}};
    d.valid = Mask(d.values.dim(0), d.values.dim(1));
    for (std::size_t i = 0; i < d.values.size(); ++i) d.valid.bits[i] = std::isfinite(d.values[i]) && d.values[i] > 0;
    return d;
}

/// Lossless dump: u32 rank, u32 dims, f32 little-endian payload.
inline std::vector<std::uint8_t> encode_raw_f32(const Tensor& t) {
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data()) w.f32(v);
    return std::move(w.bytes());
}

inline Tensor decode_raw_f32(const std::vector<std::uint8_t>& bytes, const std::string& path = "<memory>") {
    ByteReader r(bytes, path);
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) throw IoError(path, "bad rank");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u32("dims"));
    Tensor t(shape);
    for (auto& v : t.data()) v = r.f32("payload");
    if (!r.at_end()) throw IoError(path, "trailing bytes after payload");
    return t;
}

/// 2 x 2 box-filter downsampling of a C x H x W image (H, W even).
inline Tensor downsample_x2(const Tensor& image) {
    expect_rank("downsample_x2", "image", image, 3);
    const std::size_t C = image.dim(0), H = image.dim(1) / 2, W = image.dim(2) / 2;
    if (image.dim(1) % 2 || image.dim(2) % 2) throw ShapeError("downsample_x2: extents must be even");
    Tensor out({C, H, W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                double s = static_cast<double>(image.at(c, 2 * y, 2 * x)) + image.at(c, 2 * y, 2 * x + 1) +
                           image.at(c, 2 * y + 1, 2 * x) + image.at(c, 2 * y + 1, 2 * x + 1);
                out.at(c, y, x) = static_cast<float>(0.25 * s);
            }
    return out;
}

}  // namespace c3gs
