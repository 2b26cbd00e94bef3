#pragma once

// EEGD v1 container: "EEGD", version byte, u32le header length, UTF-8 JSON
// header, then little-endian float32 payload in row-major order of "shape".

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "signal.hpp"

namespace imspeech::eegd {

using Json = nlohmann::ordered_json;

constexpr char kMagic[4] = {'E', 'E', 'G', 'D'};
constexpr std::uint8_t kVersion = 1;

struct Container {
    Json header;
    std::vector<float> payload;
};

namespace detail {

inline void put_u32le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32le(std::string& out, float f) {
    put_u32le(out, std::bit_cast<std::uint32_t>(f));
}

inline std::uint32_t get_u32le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::size_t shape_product(const Json& shape) {
    std::size_t n = 1;
    for (const auto& d : shape) n *= d.get<std::size_t>();
    return n;
}

}  // namespace detail

inline std::string encode(const Container& c) {
    require(c.header.contains("shape"), ErrorKind::Format, "header lacks 'shape'");
    require(detail::shape_product(c.header.at("shape")) == c.payload.size(), ErrorKind::Shape,
            "payload length does not match header shape");
    const std::string header = c.header.dump();
    std::string out(kMagic, 4);
    out.push_back(static_cast<char>(kVersion));
    detail::put_u32le(out, static_cast<std::uint32_t>(header.size()));
    out += header;
    out.reserve(out.size() + 4 * c.payload.size());
    for (float f : c.payload) detail::put_f32le(out, f);
    return out;
}

inline Container decode(const std::string& bytes) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    require(bytes.size() >= 9, ErrorKind::Format, "file too short for an EEGD header");
    require(std::memcmp(p, kMagic, 4) == 0, ErrorKind::Format, "bad magic (expected EEGD)");
    require(p[4] == kVersion, ErrorKind::Format, "unsupported EEGD version " + std::to_string(p[4]));
    const std::uint32_t hlen = detail::get_u32le(p + 5);
    require(bytes.size() >= 9 + static_cast<std::size_t>(hlen), ErrorKind::Format, "truncated header");
    Container c;
    try {
        c.header = Json::parse(bytes.substr(9, hlen));
    } catch (const nlohmann::json::exception& ex) {
        fail(ErrorKind::Format, std::string("header JSON: ") + ex.what());
    }
    require(c.header.contains("shape") && c.header.contains("kind"), ErrorKind::Format,
            "header lacks 'kind' or 'shape'");
    const std::size_t n = detail::shape_product(c.header.at("shape"));
    require(bytes.size() == 9 + hlen + 4 * n, ErrorKind::Format, "payload size does not match shape");
    c.payload.resize(n);
    for (std::size_t i = 0; i < n; ++i) c.payload[i] = std::bit_cast<float>(detail::get_u32le(p + 9 + hlen + 4 * i));
    return c;
}

inline void write_file(const std::filesystem::path& path, const Container& c) {
    std::ofstream f(path, std::ios::binary);
    require(static_cast<bool>(f), ErrorKind::Io, "cannot open " + path.string() + " for writing");
    const auto bytes = encode(c);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(f), ErrorKind::Io, "write failed: " + path.string());
}

inline Container read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    require(static_cast<bool>(f), ErrorKind::Io, "cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode(bytes);
}

// ---------------------------------------------------------------------------
// Recordings and epochs

inline Container to_container(const RawRecording& rec) {
    Container c;
    c.header["kind"] = "raw";
    c.header["fs"] = rec.fs();
    c.header["channels"] = rec.channel_names();
    c.header["shape"] = {rec.channels(), rec.samples()};
    c.header["labels"] = Json::array();
    c.header["class_names"] = Json::array();
    c.payload = rec.data();
    return c;
}

inline Container to_container(const EpochSet& ep, const std::vector<std::string>& channel_names) {
    require(channel_names.size() == ep.channels(), ErrorKind::Shape, "channel name count mismatch");
    Container c;
    c.header["kind"] = "epochs";
    c.header["fs"] = ep.fs();
    c.header["channels"] = channel_names;
    c.header["shape"] = {ep.trials(), ep.channels(), ep.samples()};
    c.header["labels"] = ep.labels();
    c.header["class_names"] = ep.class_names();
    c.payload = ep.data();
    return c;
}

inline RawRecording recording_from(const Container& c) {
    require(c.header.at("kind") == "raw", ErrorKind::Format, "expected kind 'raw'");
    const auto& shape = c.header.at("shape");
    require(shape.size() == 2, ErrorKind::Format, "raw recordings have a 2-D shape");
    auto names = c.header.at("channels").get<std::vector<std::string>>();
    require(names.size() == shape[0].get<std::size_t>(), ErrorKind::Format, "channel list does not match shape");
    return RawRecording(c.payload, c.header.at("fs").get<double>(), std::move(names));
}

struct LoadedEpochs {
    EpochSet epochs;
    std::vector<std::string> channel_names;
};

inline LoadedEpochs epochs_from(const Container& c) {
    require(c.header.at("kind") == "epochs", ErrorKind::Format, "expected kind 'epochs'");
    const auto& shape = c.header.at("shape");
    require(shape.size() == 3, ErrorKind::Format, "epochs have a 3-D shape");
    auto names = c.header.at("channels").get<std::vector<std::string>>();
    const auto channels = shape[1].get<std::size_t>();
    require(names.size() == channels, ErrorKind::Format, "channel list does not match shape");
    auto labels = c.header.at("labels").get<std::vector<int>>();
    require(labels.size() == shape[0].get<std::size_t>(), ErrorKind::Format, "label count does not match shape");
    return {EpochSet(c.payload, channels, shape[2].get<std::size_t>(), std::move(labels),
                     c.header.at("class_names").get<std::vector<std::string>>(), c.header.at("fs").get<double>()),
            std::move(names)};
}

// ---------------------------------------------------------------------------
// Named tensor bundles (model parameters, CSP filters, classifier weights).

struct NamedArray {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> values;
};

/// Packs arrays back to back; the header lists each name and shape and
/// "shape" is the flat payload length. Extra metadata goes in `meta`.
inline Container pack(const std::string& kind, const std::vector<NamedArray>& arrays, Json meta = Json::object()) {
    Container c;
    c.header["kind"] = kind;
    auto& tensors = c.header["tensors"] = Json::array();
    for (const auto& a : arrays) {
        std::size_t n = 1;
        for (auto d : a.shape) n *= d;
        require(n == a.values.size(), ErrorKind::Shape, "array '" + a.name + "' length does not match shape");
        tensors.push_back(Json{{"name", a.name}, {"shape", a.shape}});
        c.payload.insert(c.payload.end(), a.values.begin(), a.values.end());
    }
    c.header["shape"] = {c.payload.size()};
    c.header["meta"] = std::move(meta);
    return c;
}

inline std::vector<NamedArray> unpack(const Container& c, const std::string& kind) {
    require(c.header.at("kind") == kind, ErrorKind::Format, "expected kind '" + kind + "'");
    std::vector<NamedArray> out;
    std::size_t off = 0;
    for (const auto& t : c.header.at("tensors")) {
        NamedArray a{t.at("name").get<std::string>(), t.at("shape").get<std::vector<std::size_t>>(), {}};
        std::size_t n = 1;
        for (auto d : a.shape) n *= d;
        require(off + n <= c.payload.size(), ErrorKind::Format, "tensor table exceeds payload");
        a.values.assign(c.payload.begin() + static_cast<std::ptrdiff_t>(off),
                        c.payload.begin() + static_cast<std::ptrdiff_t>(off + n));
        off += n;
        out.push_back(std::move(a));
    }
    require(off == c.payload.size(), ErrorKind::Format, "payload has trailing data");
    return out;
}

inline const NamedArray& find(const std::vector<NamedArray>& arrays, const std::string& name) {
    for (const auto& a : arrays)
        if (a.name == name) return a;
    fail(ErrorKind::Format, "missing array '" + name + "'");
}

}  // namespace imspeech::eegd
