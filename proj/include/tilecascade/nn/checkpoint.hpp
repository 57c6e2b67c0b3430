#pragma once

// CNNC checkpoint container (little-endian):
//   "CNNC" | u32 version = 1 | u32 layer_count |
//   per layer: u8 kind, then kind-specific u32 fields
//     conv2d: in_ch, out_ch, kernel, stride, pad
//     fc:     in_dim, out_dim
//     relu / maxpool2 / flatten: none
//   u32 param_count | per param: u32 ndim, ndim x u32 dims |
//   float32 payloads of every param in declaration order |
//   u32 metadata_length | metadata JSON (UTF-8, sorted keys)

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "tilecascade/detail/binary.hpp"
#include "tilecascade/nn/network.hpp"

namespace tilecascade::nn {

inline constexpr std::uint32_t kCnncVersion = 1;

struct CheckpointMeta {
    std::int64_t epoch = 0;
    std::string train_config_hash;

    friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
    Network network;
    CheckpointMeta meta;
};

inline std::string encode_checkpoint(const Network& net, const CheckpointMeta& meta)
{
    tilecascade::detail::ByteWriter w;
    w.magic("CNNC");
    w.u32(kCnncVersion);
    w.u32(static_cast<std::uint32_t>(net.layers().size()));
    for (const auto& s : net.layers()) {
        w.u8(static_cast<std::uint8_t>(s.kind));
        if (s.kind == LayerKind::conv2d) {
            w.u32(s.in_ch);
            w.u32(s.out_ch);
            w.u32(s.kernel);
            w.u32(s.stride);
            w.u32(s.pad);
        } else if (s.kind == LayerKind::fc) {
            w.u32(s.in_dim);
            w.u32(s.out_dim);
        }
    }
    const auto shapes = net.param_shapes();
    w.u32(static_cast<std::uint32_t>(shapes.size()));
    for (const auto& shape : shapes) {
        w.u32(static_cast<std::uint32_t>(shape.size()));
        for (auto d : shape) w.u32(d);
    }
    for (const auto& p : net.params()) {
        w.f32s(p);
    }
    const nlohmann::json j = {
        {"epoch", meta.epoch},
        {"train_config_hash", meta.train_config_hash},
        {"seed", net.seed()},
        {"input", {net.nominal_input().c, net.nominal_input().h, net.nominal_input().w}},
    };
    const std::string text = j.dump();
    w.u32(static_cast<std::uint32_t>(text.size()));
    w.raw(text);
    return w.bytes();
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& what = "checkpoint")
{
    if (bytes.size() < 4 || bytes.substr(0, 4) != "CNNC") {
        throw FormatError(what + ": bad magic (expected CNNC)");
    }
    tilecascade::detail::ByteReader r(bytes, what);
    r.take(4);
    if (const auto v = r.u32(); v != kCnncVersion) {
        throw FormatError(what + ": unsupported CNNC version " + std::to_string(v));
    }
    const auto layer_count = r.u32();
    std::vector<LayerSpec> layers;
    for (std::uint32_t l = 0; l < layer_count; ++l) {
        LayerSpec s;
        const auto kind = r.u8();
        if (kind < 1 || kind > 5) {
            throw FormatError(what + ": unknown layer kind " + std::to_string(kind));
        }
        s.kind = static_cast<LayerKind>(kind);
        if (s.kind == LayerKind::conv2d) {
            s.in_ch = r.u32();
            s.out_ch = r.u32();
            s.kernel = r.u32();
            s.stride = r.u32();
            s.pad = r.u32();
        } else if (s.kind == LayerKind::fc) {
            s.in_dim = r.u32();
            s.out_dim = r.u32();
        }
        try {
            s.validate();
        } catch (const ValidationError& e) {
            throw FormatError(what + ": layer " + std::to_string(l) + ": " + e.what());
        }
        layers.push_back(s);
    }

    std::vector<std::vector<std::uint32_t>> expected;
    for (const auto& s : layers) {
        if (s.has_params()) {
            expected.push_back(s.weight_shape());
            expected.push_back(s.bias_shape());
        }
    }
    const auto param_count = r.u32();
    if (param_count != expected.size()) {
        throw FormatError(what + ": shape table lists " + std::to_string(param_count) + " parameters, layers declare "
                          + std::to_string(expected.size()));
    }
    for (std::uint32_t i = 0; i < param_count; ++i) {
        const auto ndim = r.u32();
        std::vector<std::uint32_t> dims(ndim);
        for (auto& d : dims) d = r.u32();
        if (dims != expected[i]) {
            throw FormatError(what + ": shape table entry " + std::to_string(i) + " inconsistent with layer specs");
        }
    }
    ParamSet<float> params;
    for (const auto& shape : expected) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        std::vector<float> v(n);
        for (auto& x : v) x = r.f32();
        params.push_back(std::move(v));
    }
    const auto meta_len = r.u32();
    const auto meta_text = r.take(meta_len);
    if (r.remaining() != 0) {
        throw CorruptionError(what + ": " + std::to_string(r.remaining()) + " trailing bytes");
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(meta_text);
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError(what + ": metadata: " + e.what());
    }
    CheckpointMeta meta;
    Shape input{};
    std::uint64_t seed = 0;
    try {
        meta.epoch = j.at("epoch").get<std::int64_t>();
        meta.train_config_hash = j.at("train_config_hash").get<std::string>();
        seed = j.at("seed").get<std::uint64_t>();
        const auto& in = j.at("input");
        input = {1, in.at(0).get<int>(), in.at(1).get<int>(), in.at(2).get<int>()};
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(what + ": metadata: " + e.what());
    }
    try {
        return {Network(std::move(layers), input, seed, std::move(params)), std::move(meta)};
    } catch (const ValidationError& e) {
        throw FormatError(what + ": " + e.what());
    }
}

inline void save_checkpoint(const Network& net, const CheckpointMeta& meta, const std::filesystem::path& path)
{
    tilecascade::detail::write_file(path, encode_checkpoint(net, meta));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    return decode_checkpoint(tilecascade::detail::read_file(path), path.string());
}

}  // namespace tilecascade::nn
