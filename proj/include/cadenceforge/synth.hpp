#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "cadenceforge/common.hpp"
#include "cadenceforge/rng.hpp"
#include "cadenceforge/rtm.hpp"
#include "cadenceforge/spectral.hpp"

namespace cforge {

// One simulated gesture: a periodically amplitude-modulated point target on
// a slowly drifting range track, over a static torso return plus a noise
// floor. All amplitudes are linear; the map is stored in dB.
struct GestureSpec {
    double cadence_hz = 2.0;       // modulation rate, must stay below Nyquist
    double range_center = 120.0;   // bins
    double range_width = 6.0;      // gaussian sigma, bins
    double mod_depth = 0.5;        // m in [0, 1)
    double range_drift = 0.0;      // bins per frame
    double noise_floor_db = -44.0; // <= -199 disables the noise term
    double antenna_gains[3] = {1.0, 1.0, 1.0};
    std::uint32_t num_frames = 32;
    double phase = 0.0;            // radians

    void validate(double frame_rate_hz) const {
        require(mod_depth >= 0.0 && mod_depth < 1.0, "mod_depth must be in [0, 1)");
        require(cadence_hz > 0.0 && cadence_hz < frame_rate_hz / 2.0,
                "cadence must sit below the slow-time Nyquist rate");
        require(range_center >= 0.0 && range_center < 256.0, "range_center outside map");
        require(range_width > 0.0, "range_width must be positive");
        require(num_frames >= 20 && num_frames <= 43, "num_frames outside [20, 43]");
        for (double g : antenna_gains) require(g > 0.0, "antenna gains must be positive");
    }
};

struct TorsoModel {
    double center = 30.0;
    double width = 14.0;
    double gain_db = 6.0;  // relative to the unit target return
};

constexpr double kSynthFrameRate = 13.0;
constexpr std::uint32_t kSynthRanges = 256;

// Renders one spec into a 3-antenna range-time map. `rng` drives only the
// per-antenna noise; everything else is a pure function of the spec.
inline RangeTimeMap generate_sample(const GestureSpec& spec, Rng rng,
                                    double frame_rate_hz = kSynthFrameRate,
                                    std::uint32_t num_ranges = kSynthRanges,
                                    const TorsoModel& torso = {}) {
    spec.validate(frame_rate_hz);
    RangeTimeMap rtm;
    rtm.antennas = 3;
    rtm.num_frames = spec.num_frames;
    rtm.num_ranges = num_ranges;
    rtm.frame_rate_hz = static_cast<float>(frame_rate_hz);
    rtm.data.resize(rtm.size());

    const double torso_amp = db_to_linear(torso.gain_db);
    const double noise_sigma =
        spec.noise_floor_db <= -199.0 ? 0.0 : db_to_linear(spec.noise_floor_db);

    std::vector<double> torso_profile(num_ranges);
    for (std::uint32_t r = 0; r < num_ranges; ++r) {
        const double z = (double(r) - torso.center) / torso.width;
        torso_profile[r] = torso_amp * std::exp(-0.5 * z * z);
    }

    for (std::uint32_t a = 0; a < 3; ++a) {
        const double gain = spec.antenna_gains[a];
        for (std::uint32_t t = 0; t < spec.num_frames; ++t) {
            const double mod =
                1.0 + spec.mod_depth *
                          std::cos(2.0 * std::numbers::pi * spec.cadence_hz *
                                       double(t) / frame_rate_hz +
                                   spec.phase);
            const double center = spec.range_center + spec.range_drift * double(t);
            for (std::uint32_t r = 0; r < num_ranges; ++r) {
                const double z = (double(r) - center) / spec.range_width;
                double amp = gain * (torso_profile[r] + mod * std::exp(-0.5 * z * z));
                if (noise_sigma > 0.0) {
                    // magnitude of a complex gaussian: Rayleigh, always >= 0
                    const double nr = rng.normal(), ni = rng.normal();
                    amp += noise_sigma * std::sqrt(0.5 * (nr * nr + ni * ni));
                }
                rtm.at(a, t, r) = static_cast<float>(linear_to_db(std::abs(amp)));
            }
        }
    }
    return rtm;
}

// ---- deterministic class grids -------------------------------------------

enum class SynthMode { Mixed, CadenceDominant, RangeDominant };

inline const char* synth_mode_name(SynthMode m) {
    switch (m) {
        case SynthMode::Mixed: return "mixed";
        case SynthMode::CadenceDominant: return "cadence";
        case SynthMode::RangeDominant: return "range";
    }
    return "?";
}

inline SynthMode synth_mode_from_name(const std::string& s) {
    if (s == "mixed") return SynthMode::Mixed;
    if (s == "cadence") return SynthMode::CadenceDominant;
    if (s == "range") return SynthMode::RangeDominant;
    throw ValidationError("unknown synth mode: " + s);
}

namespace detail {
inline double grid_frac(std::size_t i, std::size_t n) {
    return n > 1 ? double(i) / double(n - 1) : 0.5;
}
}  // namespace detail

// Class identity is carried by cadence, range, or both, depending on mode.
// Cadences span 1..4 Hz; range centers span the clutter-free part of the map.
inline double class_cadence_hz(std::size_t cls, std::size_t num_classes, SynthMode mode) {
    switch (mode) {
        case SynthMode::RangeDominant:
            return 2.0;
        case SynthMode::CadenceDominant:
            return 1.0 + 3.0 * detail::grid_frac(cls, num_classes);
        case SynthMode::Mixed: {
            const std::size_t n_cad = std::max<std::size_t>(2, (num_classes + 1) / 2);
            return 1.0 + 3.0 * detail::grid_frac(cls % n_cad, n_cad);
        }
    }
    return 2.0;
}

inline double class_range_center(std::size_t cls, std::size_t num_classes, SynthMode mode) {
    switch (mode) {
        case SynthMode::RangeDominant:
            return 60.0 + 150.0 * detail::grid_frac(cls, num_classes);
        case SynthMode::CadenceDominant:
            return 120.0;
        case SynthMode::Mixed: {
            const std::size_t n_cad = std::max<std::size_t>(2, (num_classes + 1) / 2);
            const std::size_t n_rng = (num_classes + n_cad - 1) / n_cad;
            return 70.0 + 110.0 * detail::grid_frac(cls / n_cad, n_rng);
        }
    }
    return 120.0;
}

// Fixed antenna gain patterns rotated by class, so the cross-antenna
// weighting carries signal too.
inline const double kGainPatterns[3][3] = {
    {1.0, 0.75, 0.55}, {0.55, 1.0, 0.75}, {0.75, 0.55, 1.0}};

struct SynthConfig {
    std::size_t num_classes = 8;
    std::size_t per_class = 50;
    SynthMode mode = SynthMode::Mixed;
    std::uint64_t seed = 42;
    double val_fraction = 0.2;

    void validate() const {
        require(num_classes >= 2, "need at least 2 classes");
        require(per_class >= 1, "need at least 1 sample per class");
        require(val_fraction > 0.0 && val_fraction < 1.0, "val_fraction in (0, 1)");
    }
};

// Spec for sample `idx` of class `cls`: class grid fixes cadence/range/gains,
// the per-sample stream randomizes the nuisance parameters.
inline GestureSpec make_spec(const SynthConfig& cfg, std::size_t cls, std::size_t idx) {
    Rng rng = Rng(cfg.seed).fork(Rng::combine(0x5bec5u, cls * 100003ull + idx));
    GestureSpec spec;
    spec.cadence_hz = class_cadence_hz(cls, cfg.num_classes, cfg.mode);
    spec.range_center = class_range_center(cls, cfg.num_classes, cfg.mode);
    spec.range_width = rng.uniform(4.0, 8.0);
    spec.mod_depth = rng.uniform(0.35, 0.7);
    spec.range_drift = rng.uniform(-0.15, 0.15);
    spec.noise_floor_db = rng.uniform(-50.0, -38.0);
    spec.num_frames = static_cast<std::uint32_t>(rng.uniform_int(20, 43));
    spec.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double* g = kGainPatterns[cls % 3];
    for (int a = 0; a < 3; ++a) spec.antenna_gains[a] = g[a];
    return spec;
}

struct SynthSample {
    GestureSpec spec;
    RangeTimeMap rtm;
    std::int32_t label = 0;
    bool is_val = false;
    std::size_t index_in_class = 0;
};

// Fully deterministic in cfg: specs, noise, and the stratified split all
// derive from cfg.seed through independent streams.
inline std::vector<SynthSample> generate_dataset(const SynthConfig& cfg) {
    cfg.validate();
    std::vector<SynthSample> out;
    out.reserve(cfg.num_classes * cfg.per_class);
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
        // stratified split: shuffle within the class, first chunk goes to val
        std::vector<std::size_t> order(cfg.per_class);
        for (std::size_t i = 0; i < cfg.per_class; ++i) order[i] = i;
        Rng split_rng = Rng(cfg.seed).fork(Rng::combine(0x5417u, c));
        for (std::size_t i = cfg.per_class; i > 1; --i) {
            const auto j = static_cast<std::size_t>(split_rng.uniform_int(0, std::int64_t(i) - 1));
            std::swap(order[i - 1], order[j]);
        }
        const auto val_count = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(cfg.val_fraction * double(cfg.per_class))));
        std::vector<bool> is_val(cfg.per_class, false);
        for (std::size_t i = 0; i < std::min(val_count, cfg.per_class); ++i)
            is_val[order[i]] = true;

        for (std::size_t i = 0; i < cfg.per_class; ++i) {
            SynthSample s;
            s.spec = make_spec(cfg, c, i);
            Rng noise_rng = Rng(cfg.seed).fork(Rng::combine(0x4015eu, c * 100003ull + i));
            s.rtm = generate_sample(s.spec, noise_rng);
            s.rtm.label = static_cast<std::int32_t>(c);
            s.label = static_cast<std::int32_t>(c);
            s.is_val = is_val[i];
            s.index_in_class = i;
            out.push_back(std::move(s));
        }
    }
    return out;
}

// Dominant cadence estimate: linear-power sum over antennas and ranges,
// peak bin wins. Used to check that class cadences survive the transform.
inline double recover_cadence_hz(const Cvd& cvd, bool dc_discarded = true) {
    require(cvd.num_bins >= 2, "CVD too small");
    std::vector<double> power(cvd.num_bins, 0.0);
    for (std::size_t a = 0; a < cvd.antennas; ++a)
        for (std::size_t r = 0; r < cvd.num_ranges; ++r)
            for (std::size_t k = 0; k < cvd.num_bins; ++k)
                power[k] += db_to_linear(cvd.at(a, r, k));
    std::size_t best = 0;
    for (std::size_t k = 1; k < cvd.num_bins; ++k)
        if (power[k] > power[best]) best = k;
    return cvd_bin_freq(cvd, best, dc_discarded);
}

}  // namespace cforge
