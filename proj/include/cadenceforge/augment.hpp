#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cadenceforge/common.hpp"
#include "cadenceforge/rng.hpp"
#include "cadenceforge/spline.hpp"

namespace cforge {

// Knobs for the full augmentation stack. The physics-aware ops (warps,
// multipath, antenna dropout) act on linear amplitudes; spec-augment and the
// mixing ops act on the normalized model inputs.
struct AugmentConfig {
    bool temporal_warp = true;
    double tw_sigma = 0.15;       // knot displacement scale, fraction of T
    std::size_t tw_knots = 4;

    bool magnitude_warp = true;
    double mw_sigma = 0.1;        // log-envelope sigma
    std::size_t mw_knots = 4;

    bool multipath = true;
    std::size_t mp_max_delay = 10;    // range bins
    double mp_atten_lo = 0.05;
    double mp_atten_hi = 0.15;

    bool antenna_dropout = true;
    double ad_prob = 0.1;

    bool spec_augment = true;
    std::size_t sa_max_masks = 2;     // per axis
    double sa_max_frac = 0.15;        // of the masked axis

    bool mixup = true;
    double mixup_alpha = 0.4;
    bool cutmix = true;
    double cutmix_alpha = 1.0;

    void validate() const {
        require(tw_sigma >= 0.0 && mw_sigma >= 0.0, "warp sigmas must be >= 0");
        require(tw_knots >= 2 && mw_knots >= 2, "warps need at least 2 knots");
        require(mp_max_delay >= 1, "multipath delay must be >= 1 bin");
        require(mp_atten_lo >= 0.0 && mp_atten_lo <= mp_atten_hi && mp_atten_hi < 1.0,
                "multipath attenuation range invalid");
        require(ad_prob >= 0.0 && ad_prob <= 1.0, "dropout probability in [0, 1]");
        require(sa_max_frac >= 0.0 && sa_max_frac <= 1.0, "mask fraction in [0, 1]");
        // zero alpha is a valid degenerate setting: the ops reduce to identity
        require(mixup_alpha >= 0.0 && cutmix_alpha >= 0.0, "mixing alphas must be >= 0");
    }

    void disable_physics() {
        temporal_warp = magnitude_warp = multipath = antenna_dropout = false;
    }
    void disable_mixing() { mixup = cutmix = false; }
};

// ---- physics-side ops (linear amplitude domain) ---------------------------

// Smoothly re-times the slow axis: interior spline knots are displaced by
// N(0, sigma*T) frames, endpoints stay put, and the resulting sample
// positions are clamped to be non-decreasing before linear resampling.
// Layout matches RangeTimeMap::data.
inline std::vector<float> temporal_warp(const std::vector<float>& planes, std::size_t antennas,
                                        std::size_t frames, std::size_t ranges, double sigma,
                                        std::size_t knots, Rng& rng) {
    require(planes.size() == antennas * frames * ranges, "temporal_warp: bad shape");
    require(knots >= 2, "temporal_warp: need >= 2 knots");
    if (frames < 3 || sigma == 0.0) return planes;

    std::vector<double> kx(knots), ky(knots);
    const double last = double(frames - 1);
    for (std::size_t j = 0; j < knots; ++j) {
        kx[j] = last * double(j) / double(knots - 1);
        ky[j] = kx[j];
        if (j > 0 && j + 1 < knots) ky[j] += rng.normal(0.0, sigma * double(frames));
    }
    NaturalCubicSpline warp(kx, ky);

    std::vector<double> src(frames);
    double prev = 0.0;
    for (std::size_t t = 0; t < frames; ++t) {
        double s = std::clamp(warp(double(t)), 0.0, last);
        if (t > 0) s = std::max(s, prev);  // keep time monotone
        src[t] = prev = s;
    }

    std::vector<float> out(planes.size());
    for (std::size_t a = 0; a < antennas; ++a)
        for (std::size_t t = 0; t < frames; ++t) {
            const double s = src[t];
            const std::size_t t0 = std::min(static_cast<std::size_t>(s), frames - 1);
            const std::size_t t1 = std::min(t0 + 1, frames - 1);
            const double w = s - double(t0);
            const float* row0 = &planes[(a * frames + t0) * ranges];
            const float* row1 = &planes[(a * frames + t1) * ranges];
            float* dst = &out[(a * frames + t) * ranges];
            for (std::size_t r = 0; r < ranges; ++r)
                dst[r] = static_cast<float>(row0[r] * (1.0 - w) + row1[r] * w);
        }
    return out;
}

// Multiplies each frame by exp(s(t)) where s is a spline through N(0, sigma)
// knot values; shared across antennas so the gesture stays coherent.
inline std::vector<float> magnitude_warp(const std::vector<float>& planes, std::size_t antennas,
                                         std::size_t frames, std::size_t ranges, double sigma,
                                         std::size_t knots, Rng& rng) {
    require(planes.size() == antennas * frames * ranges, "magnitude_warp: bad shape");
    require(knots >= 2, "magnitude_warp: need >= 2 knots");
    if (sigma == 0.0) return planes;

    std::vector<double> kx(knots), ky(knots);
    const double last = double(frames > 1 ? frames - 1 : 1);
    for (std::size_t j = 0; j < knots; ++j) {
        kx[j] = last * double(j) / double(knots - 1);
        ky[j] = rng.normal(0.0, sigma);
    }
    NaturalCubicSpline env(kx, ky);

    std::vector<double> gain(frames);
    for (std::size_t t = 0; t < frames; ++t) gain[t] = std::exp(env(double(t)));

    std::vector<float> out(planes.size());
    for (std::size_t a = 0; a < antennas; ++a)
        for (std::size_t t = 0; t < frames; ++t) {
            const double g = gain[t];
            const float* srcp = &planes[(a * frames + t) * ranges];
            float* dst = &out[(a * frames + t) * ranges];
            for (std::size_t r = 0; r < ranges; ++r)
                dst[r] = static_cast<float>(srcp[r] * g);
        }
    return out;
}

// Adds one delayed, attenuated copy along range: x[r] += atten * x[r-delay].
// A single bounce toward longer apparent range, as a reflector behind the
// subject would produce.
inline std::vector<float> add_multipath(const std::vector<float>& planes, std::size_t antennas,
                                        std::size_t frames, std::size_t ranges,
                                        std::size_t delay, double atten) {
    require(planes.size() == antennas * frames * ranges, "add_multipath: bad shape");
    require(delay >= 1 && delay < ranges, "multipath delay out of range");
    require(atten >= 0.0 && atten < 1.0, "multipath attenuation out of range");
    std::vector<float> out = planes;
    for (std::size_t a = 0; a < antennas; ++a)
        for (std::size_t t = 0; t < frames; ++t) {
            const float* srcp = &planes[(a * frames + t) * ranges];
            float* dst = &out[(a * frames + t) * ranges];
            for (std::size_t r = ranges; r-- > delay;)
                dst[r] += static_cast<float>(atten) * srcp[r - delay];
        }
    return out;
}

// With probability p, zeroes exactly one antenna plane (chosen uniformly).
// Returns the dropped plane index, or -1 if nothing was dropped.
inline int antenna_dropout(std::vector<float>& planes, std::size_t antennas,
                           std::size_t plane_size, double p, Rng& rng) {
    require(planes.size() == antennas * plane_size, "antenna_dropout: bad shape");
    if (!rng.bernoulli(p)) return -1;
    const auto a = static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(antennas) - 1));
    std::fill(planes.begin() + std::ptrdiff_t(a * plane_size),
              planes.begin() + std::ptrdiff_t((a + 1) * plane_size), 0.0f);
    return static_cast<int>(a);
}

// ---- model-input-side ops --------------------------------------------------

// SpecAugment-style masking on a stack of [antennas x H x W] planes: up to
// max_masks stripes per axis, each with width drawn from {0 .. max_frac*axis}
// (zero-width draws are no-ops). The same stripes hit every plane.
inline void spec_augment(std::vector<float>& planes, std::size_t antennas, std::size_t h,
                         std::size_t w, std::size_t max_masks, double max_frac, Rng& rng) {
    require(planes.size() == antennas * h * w, "spec_augment: bad shape");
    const auto mask_rows = [&](std::size_t lo, std::size_t len) {
        for (std::size_t a = 0; a < antennas; ++a)
            for (std::size_t y = lo; y < lo + len; ++y)
                std::fill_n(planes.begin() + std::ptrdiff_t((a * h + y) * w), w, 0.0f);
    };
    const auto mask_cols = [&](std::size_t lo, std::size_t len) {
        for (std::size_t a = 0; a < antennas; ++a)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = lo; x < lo + len; ++x)
                    planes[(a * h + y) * w + x] = 0.0f;
    };
    const auto n_t = static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(max_masks)));
    const auto n_f = static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(max_masks)));
    const auto max_h = static_cast<std::int64_t>(max_frac * double(h));
    const auto max_w = static_cast<std::int64_t>(max_frac * double(w));
    for (std::size_t i = 0; i < n_t; ++i) {
        const auto len = rng.uniform_int(0, max_h);
        if (len == 0) continue;
        const auto lo = rng.uniform_int(0, std::int64_t(h) - len);
        mask_rows(std::size_t(lo), std::size_t(len));
    }
    for (std::size_t i = 0; i < n_f; ++i) {
        const auto len = rng.uniform_int(0, max_w);
        if (len == 0) continue;
        const auto lo = rng.uniform_int(0, std::int64_t(w) - len);
        mask_cols(std::size_t(lo), std::size_t(len));
    }
}

struct MixResult {
    double lam = 1.0;  // weight of the first sample in the label mix
};

// Convex combination of two equally-shaped inputs and their soft labels.
inline MixResult mixup(std::vector<float>& x1, const std::vector<float>& x2,
                       std::vector<float>& y1, const std::vector<float>& y2, double alpha,
                       Rng& rng) {
    require(x1.size() == x2.size() && y1.size() == y2.size(), "mixup: shape mismatch");
    const double lam = alpha > 0.0 ? rng.beta(alpha, alpha) : 1.0;  // zero strength: identity
    for (std::size_t i = 0; i < x1.size(); ++i)
        x1[i] = static_cast<float>(lam * x1[i] + (1.0 - lam) * x2[i]);
    for (std::size_t i = 0; i < y1.size(); ++i)
        y1[i] = static_cast<float>(lam * y1[i] + (1.0 - lam) * y2[i]);
    return {lam};
}

// Pastes one rectangular patch of x2 over x1 (same rectangle on every
// plane); the label weight is the surviving x1 area fraction.
inline MixResult cutmix(std::vector<float>& x1, const std::vector<float>& x2, std::size_t planes,
                        std::size_t h, std::size_t w, std::vector<float>& y1,
                        const std::vector<float>& y2, double alpha, Rng& rng) {
    require(x1.size() == x2.size() && x1.size() == planes * h * w, "cutmix: bad shape");
    require(y1.size() == y2.size(), "cutmix: label shape mismatch");
    const double lam = alpha > 0.0 ? rng.beta(alpha, alpha) : 1.0;  // zero strength: no patch
    const double cut = std::sqrt(1.0 - lam);
    const auto ph = std::min<std::size_t>(h, static_cast<std::size_t>(std::lround(cut * double(h))));
    const auto pw = std::min<std::size_t>(w, static_cast<std::size_t>(std::lround(cut * double(w))));
    const auto cy = static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(h) - 1));
    const auto cx = static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(w) - 1));
    const std::size_t y_lo = cy >= ph / 2 ? cy - ph / 2 : 0;
    const std::size_t x_lo = cx >= pw / 2 ? cx - pw / 2 : 0;
    const std::size_t y_hi = std::min(h, y_lo + ph);
    const std::size_t x_hi = std::min(w, x_lo + pw);
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = y_lo; y < y_hi; ++y)
            for (std::size_t x = x_lo; x < x_hi; ++x)
                x1[(p * h + y) * w + x] = x2[(p * h + y) * w + x];
    const double patch_frac = double((y_hi - y_lo) * (x_hi - x_lo)) / double(h * w);
    const double lam_adj = 1.0 - patch_frac;
    for (std::size_t i = 0; i < y1.size(); ++i)
        y1[i] = static_cast<float>(lam_adj * y1[i] + (1.0 - lam_adj) * y2[i]);
    return {lam_adj};
}

}  // namespace cforge
