// Copyright Contributors to the c3gs project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "c3gs/binary_io.hpp"
#include "c3gs/kernels.hpp"
#include "c3gs/rng.hpp"
#include "c3gs/tensor.hpp"

namespace c3gs {

/// Named parameter tensors, keyed by hierarchical names such as "fpn.level1.conv0.weight".
class WeightStore {
public:
    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

    const Tensor& get(const std::string& name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw Error("missing weight '" + name + "'");
        return it->second;
    }

    /// Fetches a tensor and checks its shape.
    const Tensor& get(const std::string& name, const Shape& shape) const {
        const Tensor& t = get(name);
        if (t.shape() != shape) {
            throw ShapeError("weight '" + name + "' has shape " + shape_to_string(t.shape()) + ", expected " +
                             shape_to_string(shape));
        }
        return t;
    }

    void set(const std::string& name, Tensor t) { tensors_[name] = std::move(t); }

    /// Inserts a new tensor; throws if the name already exists.
    void insert(const std::string& name, Tensor t) {
        if (!tensors_.emplace(name, std::move(t)).second) throw Error("duplicate weight '" + name + "'");
    }

    std::size_t size() const noexcept { return tensors_.size(); }
    const std::map<std::string, Tensor>& entries() const noexcept { return tensors_; }

    friend bool operator==(const WeightStore&, const WeightStore&) = default;

private:
    std::map<std::string, Tensor> tensors_;
};

inline constexpr char kNtwMagic[4] = {'N', 'T', 'W', '1'};

/// Serializes to the NTW1 layout: magic, then per tensor {u32 name length, name, u32 rank,
/// u32 dims[rank], f32 payload}, all little-endian.
inline std::vector<std::uint8_t> encode_ntw1(const WeightStore& store) {
    ByteWriter w;
    w.raw(kNtwMagic, 4);
    for (const auto& [name, t] : store.entries()) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.text(name);
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (float v : t.data()) w.f32(v);
    }
    return std::move(w.bytes());
}

inline WeightStore decode_ntw1(const std::vector<std::uint8_t>& bytes, const std::string& path = "<memory>") {
    ByteReader r(bytes, path);
    if (r.text(4, "magic") != std::string(kNtwMagic, 4)) throw IoError(path, "bad magic, expected NTW1");
    WeightStore store;
    while (!r.at_end()) {
        std::uint32_t len = r.u32("name length");
        std::string name = r.text(len, "name");
        std::uint32_t rank = r.u32("rank");
        if (rank == 0 || rank > 8) throw IoError(path, "weight '" + name + "' has unsupported rank " + std::to_string(rank));
        Shape shape;
        std::uint64_t volume = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            std::uint32_t d = r.u32("dims");
            if (d == 0) throw IoError(path, "weight '" + name + "' has a zero extent");
            shape.push_back(d);
            volume *= d;
        }
        if (volume * 4 > r.remaining()) throw IoError(path, "truncated payload for weight '" + name + "'");
        std::vector<float> data(volume);
        for (auto& v : data) v = r.f32("payload");
        if (store.contains(name)) throw IoError(path, "duplicate weight name '" + name + "'");
        store.insert(name, Tensor(std::move(shape), std::move(data)));
    }
    return store;
}

inline void write_ntw1(const std::string& path, const WeightStore& store) { write_file_bytes(path, encode_ntw1(store)); }

inline WeightStore read_ntw1(const std::string& path) { return decode_ntw1(read_file_bytes(path), path); }

/// Uniform in +-sqrt(1 / fan_in), drawn from the substream named after the tensor.
inline Tensor init_uniform(const SeededRng& rng, const std::string& name, Shape shape, std::size_t fan_in) {
    Tensor t(std::move(shape));
    auto stream = rng.stream(name);
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (auto& v : t.data()) v = static_cast<float>(stream.uniform(-bound, bound));
    return t;
}

/// Adds "<prefix>.weight" (out x in x k...) and "<prefix>.bias" for a convolution.
inline void init_conv(WeightStore& store, const SeededRng& rng, const std::string& prefix, std::size_t out,
                      std::size_t in, std::size_t k, std::size_t spatial_rank) {
    Shape shape{out, in};
    std::size_t fan_in = in;
    for (std::size_t i = 0; i < spatial_rank; ++i) {
        shape.push_back(k);
        fan_in *= k;
    }
    store.insert(prefix + ".weight", init_uniform(rng, prefix + ".weight", shape, fan_in));
    store.insert(prefix + ".bias", init_uniform(rng, prefix + ".bias", {out}, fan_in));
}

/// Adds "<prefix>.layer<i>.weight/bias" for every layer of `spec`.
inline void init_mlp(WeightStore& store, const SeededRng& rng, const std::string& prefix, const MlpSpec& spec,
                     bool zero_last_layer = false) {
    for (std::size_t l = 0; l < spec.layers(); ++l) {
        const std::string base = prefix + ".layer" + std::to_string(l);
        const std::size_t in = spec.widths[l], out = spec.widths[l + 1];
        if (zero_last_layer && l + 1 == spec.layers()) {
            store.insert(base + ".weight", Tensor({out, in}));
            store.insert(base + ".bias", Tensor({out}));
        } else {
            store.insert(base + ".weight", init_uniform(rng, base + ".weight", {out, in}, in));
            store.insert(base + ".bias", init_uniform(rng, base + ".bias", {out}, in));
        }
    }
}

inline MlpWeights load_mlp(const WeightStore& store, const std::string& prefix, const MlpSpec& spec) {
    MlpWeights w;
    for (std::size_t l = 0; l < spec.layers(); ++l) {
        const std::string base = prefix + ".layer" + std::to_string(l);
        w.weights.push_back(store.get(base + ".weight", {spec.widths[l + 1], spec.widths[l]}));
        w.biases.push_back(store.get(base + ".bias", {spec.widths[l + 1]}));
    }
    return w;
}

/// Convolution parameters fetched from a store.
struct ConvParams {
    Tensor weight;
    Tensor bias;
};

inline ConvParams load_conv(const WeightStore& store, const std::string& prefix, std::size_t out, std::size_t in,
                            std::size_t k, std::size_t spatial_rank) {
    Shape shape{out, in};
    for (std::size_t i = 0; i < spatial_rank; ++i) shape.push_back(k);
    return {store.get(prefix + ".weight", shape), store.get(prefix + ".bias", {out})};
}

}  // namespace c3gs
