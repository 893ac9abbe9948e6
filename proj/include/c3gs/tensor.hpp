// Copyright Contributors to the c3gs project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace c3gs {

/// Base error type for every failure raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when tensor extents disagree; the message names the offending axis.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& what) : Error(what) {}
};

using Shape = std::vector<std::size_t>;

inline std::string shape_to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

inline std::size_t shape_volume(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major float tensor. Extents are always positive.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, float fill = 0.0f) : shape_(std::move(shape)) {
        check_extents();
        data_.assign(shape_volume(shape_), fill);
    }

    Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_extents();
        if (data_.size() != shape_volume(shape_)) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_to_string(shape_));
        }
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const {
        if (axis >= shape_.size()) {
            throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_to_string(shape_));
        }
        return shape_[axis];
    }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    const std::vector<float>& values() const noexcept { return data_; }

    float& operator[](std::size_t i) noexcept { return data_[i]; }
    float operator[](std::size_t i) const noexcept { return data_[i]; }

    template <typename... Index>
    float& at(Index... idx) noexcept {
        return data_[offset(idx...)];
    }
    template <typename... Index>
    float at(Index... idx) const noexcept {
        return data_[offset(idx...)];
    }

    /// Returns a copy with a new shape of equal volume.
    Tensor reshaped(Shape shape) const {
        if (shape_volume(shape) != data_.size()) {
            throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " +
                             shape_to_string(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    bool all_finite() const noexcept {
        for (float v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void check_extents() const {
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (shape_[i] == 0) {
                throw ShapeError("tensor axis " + std::to_string(i) + " has zero extent");
            }
        }
    }

    template <typename... Index>
    std::size_t offset(Index... idx) const noexcept {
        const std::size_t indices[] = {static_cast<std::size_t>(idx)...};
        std::size_t off = 0;
        for (std::size_t i = 0; i < sizeof...(Index); ++i) off = off * shape_[i] + indices[i];
        return off;
    }

    Shape shape_;
    std::vector<float> data_;
};

/// Throws a ShapeError naming `what` when `actual != expected`.
inline void expect_extent(const char* op, const char* what, std::size_t actual, std::size_t expected) {
    if (actual != expected) {
        throw ShapeError(std::string(op) + ": " + what + " is " + std::to_string(actual) +
                         ", expected " + std::to_string(expected));
    }
}

inline void expect_rank(const char* op, const char* what, const Tensor& t, std::size_t rank) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                         ", got shape " + shape_to_string(t.shape()));
    }
}

/// Per-pixel boolean mask over an H x W grid.
struct Mask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    Mask(std::size_t h, std::size_t w, bool value = false)
        : height(h), width(w), bits(h * w, value ? 1 : 0) {}

    bool operator()(std::size_t y, std::size_t x) const noexcept { return bits[y * width + x] != 0; }
    void set(std::size_t y, std::size_t x, bool v) noexcept { bits[y * width + x] = v ? 1 : 0; }
    std::size_t count() const noexcept {
        std::size_t n = 0;
        for (auto b : bits) n += b != 0;
        return n;
    }
    friend bool operator==(const Mask&, const Mask&) = default;
};

}  // namespace c3gs
