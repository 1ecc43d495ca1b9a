#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cadenceforge/binio.hpp"
#include "cadenceforge/common.hpp"
#include "cadenceforge/nn.hpp"

namespace cforge {

// CKPT container: magic | u32 version | u64 header bytes | JSON header |
// little-endian f32 blobs in header entry order. The header carries entry
// names/shapes plus free-form training metadata, so files are inspectable
// without the binary tail.

template <class S>
void save_checkpoint(const std::string& path, std::vector<ParamRef<S>>& params,
                     const std::vector<BufferRef<S>>& buffers,
                     const nlohmann::json& metadata = {}) {
    nlohmann::json header;
    header["format"] = 1;
    header["meta"] = metadata.is_null() ? nlohmann::json::object() : metadata;
    auto& entries = header["entries"] = nlohmann::json::array();
    for (auto& p : params) {
        entries.push_back({{"name", p.name},
                           {"shape", p.tensor.shape()},
                           {"kind", "param"}});
    }
    for (const auto& b : buffers) {
        entries.push_back({{"name", b.name},
                           {"shape", std::vector<std::size_t>{b.data->size()}},
                           {"kind", "buffer"}});
    }
    const std::string text = header.dump();

    auto os = binio::open_out(path);
    binio::write_magic(os, "CKPT");
    binio::write_pod<std::uint32_t>(os, 1u);
    binio::write_pod<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    std::vector<float> blob;
    for (auto& p : params) {
        blob.assign(p.tensor.value().begin(), p.tensor.value().end());
        binio::write_f32s(os, blob);
    }
    for (const auto& b : buffers) {
        blob.assign(b.data->begin(), b.data->end());
        binio::write_f32s(os, blob);
    }
    require(static_cast<bool>(os), "write failed: " + path);
}

// Loads into an existing model's params/buffers, matching by name, and
// returns the stored metadata. Every entry must match in shape; params and
// buffers absent from the file (or extra in the file) are an error, so a
// checkpoint can never silently half-load.
template <class S>
nlohmann::json load_checkpoint(const std::string& path, std::vector<ParamRef<S>>& params,
                               const std::vector<BufferRef<S>>& buffers) {
    auto is = binio::open_in(path);
    binio::check_magic(is, "CKPT", "CKPT");
    const auto version = binio::read_pod<std::uint32_t>(is, "version");
    require(version == 1, "unsupported CKPT version " + std::to_string(version));
    const auto header_len = binio::read_pod<std::uint64_t>(is, "header length");
    require(header_len > 0 && header_len < (1ull << 24), "CKPT header length implausible");
    std::string text(header_len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(header_len));
    require(static_cast<bool>(is), "truncated CKPT header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad CKPT header JSON: ") + e.what());
    }
    require(header.value("format", 0) == 1, "unknown CKPT header format");

    std::size_t pi = 0, bi = 0;
    for (const auto& e : header.at("entries")) {
        const std::string name = e.at("name");
        const auto shape = e.at("shape").get<std::vector<std::size_t>>();
        const std::string kind = e.at("kind");
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        const auto blob = binio::read_f32s(is, n, "CKPT");
        if (kind == "param") {
            require(pi < params.size(), "checkpoint has more params than the model");
            auto& p = params[pi++];
            require(p.name == name, "param order mismatch: expected " + p.name + ", file has " + name);
            require(p.tensor.shape() == shape, "param shape mismatch for " + name);
            auto& dst = p.tensor.value();
            for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<S>(blob[i]);
        } else if (kind == "buffer") {
            require(bi < buffers.size(), "checkpoint has more buffers than the model");
            const auto& b = buffers[bi++];
            require(b.name == name, "buffer order mismatch: expected " + b.name + ", file has " + name);
            require(b.data->size() == n, "buffer size mismatch for " + name);
            for (std::size_t i = 0; i < n; ++i) (*b.data)[i] = static_cast<S>(blob[i]);
        } else {
            throw ValidationError("unknown CKPT entry kind: " + kind);
        }
    }
    require(pi == params.size(), "checkpoint is missing model parameters");
    require(bi == buffers.size(), "checkpoint is missing model buffers");
    return header["meta"];
}

// Metadata only, without touching the weight blobs — used to discover a
// checkpoint's model/pipeline configuration before building the model.
inline nlohmann::json read_checkpoint_meta(const std::string& path) {
    auto is = binio::open_in(path);
    binio::check_magic(is, "CKPT", "CKPT");
    const auto version = binio::read_pod<std::uint32_t>(is, "version");
    require(version == 1, "unsupported CKPT version " + std::to_string(version));
    const auto header_len = binio::read_pod<std::uint64_t>(is, "header length");
    require(header_len > 0 && header_len < (1ull << 24), "CKPT header length implausible");
    std::string text(header_len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(header_len));
    require(static_cast<bool>(is), "truncated CKPT header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad CKPT header JSON: ") + e.what());
    }
    require(header.value("format", 0) == 1, "unknown CKPT header format");
    return header["meta"];
}

}  // namespace cforge
