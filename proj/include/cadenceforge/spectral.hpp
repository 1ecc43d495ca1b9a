#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "cadenceforge/binio.hpp"
#include "cadenceforge/common.hpp"
#include "cadenceforge/rtm.hpp"

namespace cforge {

enum class Window { Rectangular, Hamming, BlackmanHarris4 };

inline const char* window_name(Window w) {
    switch (w) {
        case Window::Rectangular: return "rectangular";
        case Window::Hamming: return "hamming";
        case Window::BlackmanHarris4: return "blackman-harris";
    }
    return "?";
}

inline Window window_from_name(const std::string& s) {
    if (s == "rectangular") return Window::Rectangular;
    if (s == "hamming") return Window::Hamming;
    if (s == "blackman-harris") return Window::BlackmanHarris4;
    throw ValidationError("unknown window: " + s);
}

// Symmetric windows (denominator L-1), so endpoints land on the defining
// cosine series exactly.
inline std::vector<double> make_window(Window kind, std::size_t length) {
    require(length >= 1, "window length must be >= 1");
    std::vector<double> w(length, 1.0);
    if (length == 1 || kind == Window::Rectangular) return w;
    const double denom = static_cast<double>(length - 1);
    constexpr double tau = 2.0 * std::numbers::pi;
    for (std::size_t n = 0; n < length; ++n) {
        const double t = static_cast<double>(n) / denom;
        switch (kind) {
            case Window::Hamming:
                w[n] = 0.54 - 0.46 * std::cos(tau * t);
                break;
            case Window::BlackmanHarris4:
                w[n] = 0.35875 - 0.48829 * std::cos(tau * t) +
                       0.14128 * std::cos(2.0 * tau * t) -
                       0.01168 * std::cos(3.0 * tau * t);
                break;
            case Window::Rectangular:
                break;
        }
    }
    return w;
}

namespace detail {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Iterative radix-2 Cooley-Tukey, decimation in time.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    if (n <= 1) return;
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const auto u = a[i + k];
                const auto v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

// O(N^2) fallback so arbitrary transform sizes stay available (the
// no-padding ablation uses N = T which is rarely a power of two).
inline std::vector<std::complex<double>> dft_naive(const std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    std::vector<std::complex<double>> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::complex<double> acc(0.0, 0.0);
        for (std::size_t t = 0; t < n; ++t) {
            const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) *
                               static_cast<double>(t) / static_cast<double>(n);
            acc += a[t] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        out[k] = acc;
    }
    return out;
}

}  // namespace detail

// One-sided magnitude spectrum of a real series zero-padded to n_fft:
// returns |X_k| for k = 0 .. n_fft/2 inclusive.
inline std::vector<double> real_dft_magnitude(const std::vector<double>& x, std::size_t n_fft) {
    require(n_fft >= x.size() && n_fft >= 2, "n_fft must be >= series length and >= 2");
    std::vector<std::complex<double>> buf(n_fft, {0.0, 0.0});
    for (std::size_t i = 0; i < x.size(); ++i) buf[i] = {x[i], 0.0};
    if (detail::is_pow2(n_fft)) {
        detail::fft_radix2(buf);
    } else {
        buf = detail::dft_naive(buf);
    }
    std::vector<double> mag(n_fft / 2 + 1);
    for (std::size_t k = 0; k < mag.size(); ++k) mag[k] = std::abs(buf[k]);
    return mag;
}

// Highest sidelobe relative to the mainlobe peak, in dB. The mainlobe is
// delimited by walking from bin 0 to the first local minimum of the
// oversampled transform; the report is the loudest bin past that null.
inline double window_sidelobe_db(Window kind, std::size_t length, std::size_t oversample = 32) {
    require(oversample >= 4, "oversample too small for sidelobe measurement");
    const auto w = make_window(kind, length);
    std::size_t n_fft = 1;
    while (n_fft < length * oversample) n_fft <<= 1;
    const auto mag = real_dft_magnitude(w, n_fft);
    const double peak = mag[0];
    std::size_t k = 1;
    while (k + 1 < mag.size() && mag[k + 1] < mag[k]) ++k;  // descend to first null
    double side = 0.0;
    for (std::size_t j = k + 1; j < mag.size(); ++j) side = std::max(side, mag[j]);
    require(side > 0.0 && peak > 0.0, "degenerate window spectrum");
    return 20.0 * std::log10(side / peak);
}

// ---- cadence-velocity diagrams ------------------------------------------

struct CvdConfig {
    std::size_t n_fft = 128;   // 0 = no padding, use the series length
    Window window = Window::BlackmanHarris4;
    bool discard_dc = true;    // drop k=0 and remove the temporal mean
    bool linearize = true;     // undo the dB compression before the transform
    double eps = kDbEps;

    void validate() const {
        require(n_fft == 0 || (detail::is_pow2(n_fft) && n_fft >= 2),
                "n_fft must be 0 (no padding) or a power of two >= 2");
        require(eps > 0.0, "eps must be positive");
    }
};

// Cadence-velocity diagram: per antenna, per range bin, magnitude (dB) of
// the slow-time spectrum. Layout: data[(a*num_ranges + r)*num_bins + k].
struct Cvd {
    std::uint32_t antennas = 0;
    std::uint32_t num_ranges = 0;
    std::uint32_t num_bins = 0;
    float bin_hz = 0.0f;
    std::int32_t label = -1;
    std::vector<float> data;

    float at(std::size_t a, std::size_t r, std::size_t k) const {
        return data[(a * num_ranges + r) * num_bins + k];
    }
    std::size_t size() const {
        return static_cast<std::size_t>(antennas) * num_ranges * num_bins;
    }
};

// Slow-time spectral decomposition of one range-time map. For each antenna
// and range bin the frame series is (optionally) linearized, detrended,
// windowed, zero-padded and transformed; magnitudes are re-compressed to dB.
//
// When discard_dc is set the temporal mean is removed before windowing and
// the k=0 bin is dropped. Mean removal is what makes the discard effective:
// with zero-padding the rectangular truncation smears any DC offset across
// the low bins, which would otherwise dominate every cadence of interest.
inline Cvd extract_cvd(const RangeTimeMap& rtm, const CvdConfig& cfg) {
    cfg.validate();
    const std::size_t T = rtm.num_frames;
    require(T >= 2, "need at least 2 frames for a spectrum");
    const std::size_t n_fft = cfg.n_fft == 0 ? T : cfg.n_fft;
    require(n_fft >= T, "n_fft smaller than the frame count");

    const auto w = make_window(cfg.window, T);
    const std::size_t k_lo = cfg.discard_dc ? 1 : 0;
    const std::size_t num_bins = n_fft / 2 + 1 - k_lo;

    Cvd cvd;
    cvd.antennas = rtm.antennas;
    cvd.num_ranges = rtm.num_ranges;
    cvd.num_bins = static_cast<std::uint32_t>(num_bins);
    cvd.bin_hz = static_cast<float>(rtm.frame_rate_hz / static_cast<double>(n_fft));
    cvd.label = rtm.label;
    cvd.data.resize(cvd.size());

    std::vector<double> series(T);
    for (std::size_t a = 0; a < rtm.antennas; ++a) {
        for (std::size_t r = 0; r < rtm.num_ranges; ++r) {
            for (std::size_t t = 0; t < T; ++t) {
                const double v = rtm.at(a, t, r);
                series[t] = cfg.linearize ? db_to_linear(v) : v;
            }
            if (cfg.discard_dc) {
                double mean = 0.0;
                for (double v : series) mean += v;
                mean /= static_cast<double>(T);
                for (double& v : series) v -= mean;
            }
            std::vector<double> windowed(T);
            for (std::size_t t = 0; t < T; ++t) windowed[t] = series[t] * w[t];
            const auto mag = real_dft_magnitude(windowed, n_fft);
            float* dst = &cvd.data[(a * rtm.num_ranges + r) * num_bins];
            for (std::size_t k = 0; k < num_bins; ++k)
                dst[k] = static_cast<float>(linear_to_db(mag[k + k_lo], cfg.eps));
        }
    }
    return cvd;
}

// Frequency of CVD bin index k (bin 0 of the stored data is k_lo of the
// underlying transform; with discard_dc that is bin_hz, not 0).
inline double cvd_bin_freq(const Cvd& cvd, std::size_t k, bool dc_discarded = true) {
    return (static_cast<double>(k) + (dc_discarded ? 1.0 : 0.0)) * cvd.bin_hz;
}

// Ratio of linear magnitude at the second harmonic to the fundamental.
// For each antenna the range bin with the strongest fundamental response is
// selected; magnitudes are peak-picked within +-1 bin to tolerate off-grid
// cadences. Returns the mean ratio over antennas.
inline double harmonic_artifact_ratio(const Cvd& cvd, double fundamental_hz,
                                      bool dc_discarded = true) {
    require(cvd.bin_hz > 0.0f && cvd.num_bins > 2, "CVD too small for harmonic analysis");
    const double k_off = dc_discarded ? 1.0 : 0.0;
    const auto to_index = [&](double hz) -> std::size_t {
        const double idx = hz / cvd.bin_hz - k_off;
        const long long k = std::llround(idx);
        require(k >= 0 && k < static_cast<long long>(cvd.num_bins),
                "frequency outside CVD band");
        return static_cast<std::size_t>(k);
    };
    const std::size_t k1 = to_index(fundamental_hz);
    const std::size_t k2 = to_index(2.0 * fundamental_hz);

    const auto peak_lin = [&](std::size_t a, std::size_t r, std::size_t k) {
        double best = -1e30;
        const std::size_t lo = k > 0 ? k - 1 : 0;
        const std::size_t hi = std::min<std::size_t>(k + 1, cvd.num_bins - 1);
        for (std::size_t j = lo; j <= hi; ++j) best = std::max(best, double(cvd.at(a, r, j)));
        return db_to_linear(best);
    };

    double sum = 0.0;
    for (std::size_t a = 0; a < cvd.antennas; ++a) {
        std::size_t best_r = 0;
        double best_v = -1e30;
        for (std::size_t r = 0; r < cvd.num_ranges; ++r) {
            const double v = peak_lin(a, r, k1);
            if (v > best_v) { best_v = v; best_r = r; }
        }
        sum += peak_lin(a, best_r, k2) / peak_lin(a, best_r, k1);
    }
    return sum / static_cast<double>(cvd.antennas);
}

// ---- CVD1 container ------------------------------------------------------
//
// magic "CVD1" | u32 version=1 | u32 antennas | u32 R | u32 bins |
// f32 bin_hz | i32 label | f32 data[antennas*R*bins]

inline void save_cvd(const Cvd& cvd, const std::string& path) {
    require(cvd.data.size() == cvd.size(), "CVD buffer does not match declared shape");
    auto os = binio::open_out(path);
    binio::write_magic(os, "CVD1");
    binio::write_pod<std::uint32_t>(os, 1u);
    binio::write_pod<std::uint32_t>(os, cvd.antennas);
    binio::write_pod<std::uint32_t>(os, cvd.num_ranges);
    binio::write_pod<std::uint32_t>(os, cvd.num_bins);
    binio::write_pod<float>(os, cvd.bin_hz);
    binio::write_pod<std::int32_t>(os, cvd.label);
    binio::write_f32s(os, cvd.data);
    require(static_cast<bool>(os), "write failed: " + path);
}

inline Cvd load_cvd(const std::string& path) {
    auto is = binio::open_in(path);
    binio::check_magic(is, "CVD1", "CVD1");
    const auto version = binio::read_pod<std::uint32_t>(is, "version");
    require(version == 1, "unsupported CVD1 version " + std::to_string(version));
    Cvd cvd;
    cvd.antennas = binio::read_pod<std::uint32_t>(is, "antennas");
    cvd.num_ranges = binio::read_pod<std::uint32_t>(is, "ranges");
    cvd.num_bins = binio::read_pod<std::uint32_t>(is, "bins");
    cvd.bin_hz = binio::read_pod<float>(is, "bin_hz");
    cvd.label = binio::read_pod<std::int32_t>(is, "label");
    require(cvd.antennas > 0 && cvd.antennas < 16 && cvd.num_ranges > 0 &&
                cvd.num_ranges <= 65536 && cvd.num_bins > 0 && cvd.num_bins <= 65536,
            "CVD1 header dimensions implausible");
    require(cvd.bin_hz > 0.0f, "CVD1 bin spacing must be positive");
    cvd.data = binio::read_f32s(is, cvd.size(), "CVD1");
    return cvd;
}

}  // namespace cforge
