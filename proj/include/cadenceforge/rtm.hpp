#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "cadenceforge/binio.hpp"
#include "cadenceforge/common.hpp"

namespace cforge {

// Magnitude range-time map in dB, one plane per antenna, laid out
// antenna-major then time-major: data[(a*T + t)*R + r].
struct RangeTimeMap {
    std::uint32_t antennas = 3;
    std::uint32_t num_frames = 0;   // T, slow-time
    std::uint32_t num_ranges = 0;   // R, fast-time bins
    float frame_rate_hz = 13.0f;
    std::int32_t label = -1;        // -1 = unlabeled
    std::vector<float> data;        // dB values

    float& at(std::size_t a, std::size_t t, std::size_t r) {
        return data[(a * num_frames + t) * num_ranges + r];
    }
    float at(std::size_t a, std::size_t t, std::size_t r) const {
        return data[(a * num_frames + t) * num_ranges + r];
    }
    std::size_t plane_size() const {
        return static_cast<std::size_t>(num_frames) * num_ranges;
    }
    std::size_t size() const { return static_cast<std::size_t>(antennas) * plane_size(); }

    void validate() const {
        require(antennas == 3, "range-time map must carry exactly 3 antennas");
        require(num_frames >= 20 && num_frames <= 43,
                "frame count out of range [20, 43]: " + std::to_string(num_frames));
        require(num_ranges == 256, "range axis must have 256 bins");
        require(frame_rate_hz > 0.0f, "frame rate must be positive");
        require(data.size() == size(), "data buffer does not match declared shape");
        for (float v : data)
            require(std::isfinite(v), "range-time map contains non-finite values");
    }
};

constexpr double kDbEps = 1e-10;

// Inverse of the 20*log10 magnitude compression applied upstream.
inline double db_to_linear(double db) { return std::pow(10.0, db / 20.0); }

// eps keeps exact zeros representable (maps to -200 dB).
inline double linear_to_db(double amp, double eps = kDbEps) {
    return 20.0 * std::log10(amp + eps);
}

// Joint min-max over the whole buffer; a constant input maps to all zeros.
inline void normalize_unit(std::vector<float>& x) {
    if (x.empty()) return;
    auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
    const float lo = *lo_it, hi = *hi_it;
    if (hi <= lo) {
        std::fill(x.begin(), x.end(), 0.0f);
        return;
    }
    const float inv = 1.0f / (hi - lo);
    for (auto& v : x) v = (v - lo) * inv;
}

// Bilinear resample with corner alignment: out(0)=in(0), out(-1)=in(-1).
inline std::vector<float> resize_bilinear(const std::vector<float>& src,
                                          std::size_t src_h, std::size_t src_w,
                                          std::size_t dst_h, std::size_t dst_w) {
    require(src.size() == src_h * src_w, "resize: bad source shape");
    require(src_h >= 1 && src_w >= 1 && dst_h >= 1 && dst_w >= 1, "resize: empty axis");
    std::vector<float> dst(dst_h * dst_w);
    const double sy = dst_h > 1 ? double(src_h - 1) / double(dst_h - 1) : 0.0;
    const double sx = dst_w > 1 ? double(src_w - 1) / double(dst_w - 1) : 0.0;
    for (std::size_t y = 0; y < dst_h; ++y) {
        const double fy = y * sy;
        const std::size_t y0 = std::min(static_cast<std::size_t>(fy), src_h - 1);
        const std::size_t y1 = std::min(y0 + 1, src_h - 1);
        const double wy = fy - double(y0);
        for (std::size_t x = 0; x < dst_w; ++x) {
            const double fx = x * sx;
            const std::size_t x0 = std::min(static_cast<std::size_t>(fx), src_w - 1);
            const std::size_t x1 = std::min(x0 + 1, src_w - 1);
            const double wx = fx - double(x0);
            const double top = src[y0 * src_w + x0] * (1.0 - wx) + src[y0 * src_w + x1] * wx;
            const double bot = src[y1 * src_w + x0] * (1.0 - wx) + src[y1 * src_w + x1] * wx;
            dst[y * dst_w + x] = static_cast<float>(top * (1.0 - wy) + bot * wy);
        }
    }
    return dst;
}

struct PreprocessConfig {
    std::size_t pad_frames = 48;  // temporal zero-pad target before resize
    std::size_t spatial = 32;     // square model input side

    void validate() const {
        require(pad_frames >= 1 && spatial >= 2, "preprocess config out of range");
    }
};

// Zero-pads the (already normalized) time axis out to cfg.pad_frames, then
// resamples each antenna plane to spatial x spatial. Input layout matches
// RangeTimeMap::data; output is antenna-major spatial planes.
inline std::vector<float> pad_and_resize(const std::vector<float>& planes,
                                         std::size_t antennas, std::size_t frames,
                                         std::size_t ranges, const PreprocessConfig& cfg) {
    cfg.validate();
    require(planes.size() == antennas * frames * ranges, "pad_and_resize: bad shape");
    const std::size_t pad_t = std::max(cfg.pad_frames, frames);
    std::vector<float> out;
    out.reserve(antennas * cfg.spatial * cfg.spatial);
    std::vector<float> padded(pad_t * ranges);
    for (std::size_t a = 0; a < antennas; ++a) {
        std::fill(padded.begin(), padded.end(), 0.0f);
        std::copy(planes.begin() + static_cast<std::ptrdiff_t>(a * frames * ranges),
                  planes.begin() + static_cast<std::ptrdiff_t>((a + 1) * frames * ranges),
                  padded.begin());
        auto plane = resize_bilinear(padded, pad_t, ranges, cfg.spatial, cfg.spatial);
        out.insert(out.end(), plane.begin(), plane.end());
    }
    return out;
}

// ---- RTM1 container ----------------------------------------------------
//
// magic "RTM1" | u32 version=1 | u32 antennas | u32 T | u32 R |
// f32 frame_rate | i32 label | f32 data[antennas*T*R]

inline void save_rtm(const RangeTimeMap& rtm, const std::string& path) {
    rtm.validate();
    auto os = binio::open_out(path);
    binio::write_magic(os, "RTM1");
    binio::write_pod<std::uint32_t>(os, 1u);
    binio::write_pod<std::uint32_t>(os, rtm.antennas);
    binio::write_pod<std::uint32_t>(os, rtm.num_frames);
    binio::write_pod<std::uint32_t>(os, rtm.num_ranges);
    binio::write_pod<float>(os, rtm.frame_rate_hz);
    binio::write_pod<std::int32_t>(os, rtm.label);
    binio::write_f32s(os, rtm.data);
    require(static_cast<bool>(os), "write failed: " + path);
}

inline RangeTimeMap load_rtm(const std::string& path) {
    auto is = binio::open_in(path);
    binio::check_magic(is, "RTM1", "RTM1");
    const auto version = binio::read_pod<std::uint32_t>(is, "version");
    require(version == 1, "unsupported RTM1 version " + std::to_string(version));
    RangeTimeMap rtm;
    rtm.antennas = binio::read_pod<std::uint32_t>(is, "antennas");
    rtm.num_frames = binio::read_pod<std::uint32_t>(is, "frames");
    rtm.num_ranges = binio::read_pod<std::uint32_t>(is, "ranges");
    rtm.frame_rate_hz = binio::read_pod<float>(is, "frame_rate");
    rtm.label = binio::read_pod<std::int32_t>(is, "label");
    require(rtm.antennas > 0 && rtm.antennas < 16 && rtm.num_frames > 0 &&
                rtm.num_frames < 4096 && rtm.num_ranges > 0 && rtm.num_ranges <= 65536,
            "RTM1 header dimensions implausible");
    rtm.data = binio::read_f32s(is, rtm.size(), "RTM1");
    rtm.validate();
    return rtm;
}

}  // namespace cforge
