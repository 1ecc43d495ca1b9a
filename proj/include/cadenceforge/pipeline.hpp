#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cadenceforge/augment.hpp"
#include "cadenceforge/rng.hpp"
#include "cadenceforge/rtm.hpp"
#include "cadenceforge/spectral.hpp"
#include "cadenceforge/synth.hpp"

namespace cforge {

struct PipelineConfig {
    CvdConfig cvd;
    PreprocessConfig pre;

    void validate() const {
        cvd.validate();
        pre.validate();
    }
};

// Model-ready inputs for one sample: two [antennas, spatial, spatial] stacks.
struct StreamPair {
    std::vector<float> rtm_in;
    std::vector<float> cvd_in;
};

// Raw map -> the two network streams. The magnitude stream is min-max scaled
// jointly across antennas, zero-padded in time and resized; the cadence
// stream gets its own spectral transform first and needs no temporal padding
// because n_fft already fixes the frequency axis.
inline StreamPair prepare_streams(const RangeTimeMap& rtm, const PipelineConfig& cfg) {
    rtm.validate();
    cfg.validate();
    StreamPair out;

    std::vector<float> planes = rtm.data;
    normalize_unit(planes);
    out.rtm_in = pad_and_resize(planes, rtm.antennas, rtm.num_frames, rtm.num_ranges, cfg.pre);

    const Cvd cvd = extract_cvd(rtm, cfg.cvd);
    std::vector<float> cplanes = cvd.data;
    normalize_unit(cplanes);
    const std::size_t s = cfg.pre.spatial;
    const std::size_t plane = std::size_t(cvd.num_ranges) * cvd.num_bins;
    out.cvd_in.reserve(std::size_t(cvd.antennas) * s * s);
    for (std::size_t a = 0; a < cvd.antennas; ++a) {
        const std::vector<float> src(cplanes.begin() + std::ptrdiff_t(a * plane),
                                     cplanes.begin() + std::ptrdiff_t((a + 1) * plane));
        const auto rs = resize_bilinear(src, cvd.num_ranges, cvd.num_bins, s, s);
        out.cvd_in.insert(out.cvd_in.end(), rs.begin(), rs.end());
    }
    return out;
}

// Signal-level augmentation. The warps and the multipath ghost model physical
// effects on amplitudes, so the dB compression is undone first and re-applied
// after. Draw order is fixed: temporal warp, magnitude warp, multipath.
inline RangeTimeMap augment_physics(const RangeTimeMap& rtm, const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    RangeTimeMap out = rtm;
    if (!(cfg.temporal_warp || cfg.magnitude_warp || cfg.multipath)) return out;

    const std::size_t a = rtm.antennas, t = rtm.num_frames, r = rtm.num_ranges;
    std::vector<float> lin(out.data.size());
    for (std::size_t i = 0; i < lin.size(); ++i)
        lin[i] = static_cast<float>(db_to_linear(out.data[i]));
    if (cfg.temporal_warp) lin = temporal_warp(lin, a, t, r, cfg.tw_sigma, cfg.tw_knots, rng);
    if (cfg.magnitude_warp) lin = magnitude_warp(lin, a, t, r, cfg.mw_sigma, cfg.mw_knots, rng);
    if (cfg.multipath) {
        const auto delay =
            static_cast<std::size_t>(rng.uniform_int(1, std::int64_t(cfg.mp_max_delay)));
        const double atten = rng.uniform(cfg.mp_atten_lo, cfg.mp_atten_hi);
        lin = add_multipath(lin, a, t, r, delay, atten);
    }
    for (std::size_t i = 0; i < lin.size(); ++i)
        out.data[i] = static_cast<float>(linear_to_db(lin[i]));
    return out;
}

// Input-side augmentation on the prepared streams. An antenna outage is a
// hardware event, so the same plane is removed from both streams; masking
// stripes are drawn independently per stream. Returns the dropped antenna
// index, or -1.
inline int augment_streams(StreamPair& sp, std::size_t spatial, const AugmentConfig& cfg,
                           Rng& rng) {
    const std::size_t plane = spatial * spatial;
    const std::size_t antennas = sp.rtm_in.size() / plane;
    require(antennas * plane == sp.rtm_in.size() && sp.cvd_in.size() == sp.rtm_in.size(),
            "augment_streams: bad stream shape");
    int dropped = -1;
    if (cfg.antenna_dropout) {
        dropped = antenna_dropout(sp.rtm_in, antennas, plane, cfg.ad_prob, rng);
        if (dropped >= 0)
            std::fill(sp.cvd_in.begin() + std::ptrdiff_t(std::size_t(dropped) * plane),
                      sp.cvd_in.begin() + std::ptrdiff_t(std::size_t(dropped + 1) * plane), 0.0f);
    }
    if (cfg.spec_augment) {
        Rng r1 = rng.fork(1), r2 = rng.fork(2);
        spec_augment(sp.rtm_in, antennas, spatial, spatial, cfg.sa_max_masks, cfg.sa_max_frac, r1);
        spec_augment(sp.cvd_in, antennas, spatial, spatial, cfg.sa_max_masks, cfg.sa_max_frac, r2);
    }
    return dropped;
}

// ---- test-time augmentation -------------------------------------------------

inline constexpr std::size_t kTtaViews = 5;

// Deterministic view set applied to the raw map before preprocessing:
// identity, time reversal, light dB noise (sigma = 1% of the map's span,
// drawn from the supplied rng), range shift by +3 bins, and a +2 frame start
// delay. Shifts keep dimensions and back-fill with the map's floor value.
inline RangeTimeMap tta_view(const RangeTimeMap& rtm, std::size_t view, Rng& rng) {
    require(view < kTtaViews, "tta view index out of range");
    RangeTimeMap out = rtm;
    const std::size_t nt = rtm.num_frames, nr = rtm.num_ranges;
    switch (view) {
        case 0:
            break;
        case 1:
            for (std::size_t a = 0; a < rtm.antennas; ++a)
                for (std::size_t t = 0; t < nt; ++t)
                    for (std::size_t r = 0; r < nr; ++r)
                        out.at(a, t, r) = rtm.at(a, nt - 1 - t, r);
            break;
        case 2: {
            const auto [lo, hi] = std::minmax_element(rtm.data.begin(), rtm.data.end());
            const double sigma = 0.01 * (double(*hi) - double(*lo));
            for (auto& v : out.data) v += static_cast<float>(sigma * rng.normal());
            break;
        }
        case 3: {
            const float fill = *std::min_element(rtm.data.begin(), rtm.data.end());
            for (std::size_t a = 0; a < rtm.antennas; ++a)
                for (std::size_t t = 0; t < nt; ++t)
                    for (std::size_t r = 0; r < nr; ++r)
                        out.at(a, t, r) = r >= 3 ? rtm.at(a, t, r - 3) : fill;
            break;
        }
        case 4: {
            const float fill = *std::min_element(rtm.data.begin(), rtm.data.end());
            for (std::size_t a = 0; a < rtm.antennas; ++a)
                for (std::size_t t = 0; t < nt; ++t)
                    for (std::size_t r = 0; r < nr; ++r)
                        out.at(a, t, r) = t >= 2 ? rtm.at(a, t - 2, r) : fill;
            break;
        }
    }
    return out;
}

// ---- dataset directory I/O --------------------------------------------------

struct DataSample {
    RangeTimeMap rtm;
    std::size_t label = 0;
};

struct LoadedDataset {
    std::size_t num_classes = 0;
    std::vector<DataSample> train, val;
};

inline LoadedDataset to_dataset(const std::vector<SynthSample>& samples,
                                std::size_t num_classes) {
    LoadedDataset out;
    out.num_classes = num_classes;
    for (const auto& s : samples) {
        require(s.label >= 0 && std::size_t(s.label) < num_classes, "label out of range");
        (s.is_val ? out.val : out.train).push_back({s.rtm, std::size_t(s.label)});
    }
    return out;
}

inline void save_dataset(const std::string& dir, const std::vector<SynthSample>& samples,
                         const SynthConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json meta;
    meta["format"] = 1;
    meta["num_classes"] = cfg.num_classes;
    meta["per_class"] = cfg.per_class;
    meta["mode"] = synth_mode_name(cfg.mode);
    meta["seed"] = cfg.seed;
    meta["val_fraction"] = cfg.val_fraction;
    auto& list = meta["samples"] = nlohmann::json::array();
    char name[64];
    for (const auto& s : samples) {
        std::snprintf(name, sizeof name, "c%03d_i%04zu.rtm1", int(s.label), s.index_in_class);
        save_rtm(s.rtm, (fs::path(dir) / name).string());
        list.push_back({{"file", name},
                        {"label", s.label},
                        {"split", s.is_val ? "val" : "train"},
                        {"cadence_hz", s.spec.cadence_hz},
                        {"range_center", s.spec.range_center}});
    }
    std::ofstream os(fs::path(dir) / "dataset.json");
    require(bool(os), "cannot write dataset.json in " + dir);
    os << meta.dump(2) << "\n";
}

inline LoadedDataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream is(fs::path(dir) / "dataset.json");
    require(bool(is), "cannot open dataset.json in " + dir);
    nlohmann::json meta = nlohmann::json::parse(is, nullptr, /*allow_exceptions=*/false);
    require(!meta.is_discarded(), "dataset.json is not valid JSON");
    require(meta.value("format", 0) == 1, "unsupported dataset format");
    LoadedDataset out;
    out.num_classes = meta.at("num_classes").get<std::size_t>();
    require(out.num_classes >= 2, "dataset needs >= 2 classes");
    for (const auto& e : meta.at("samples")) {
        DataSample ds;
        ds.rtm = load_rtm((fs::path(dir) / e.at("file").get<std::string>()).string());
        ds.label = e.at("label").get<std::size_t>();
        require(ds.label < out.num_classes, "sample label out of range");
        require(ds.rtm.label < 0 || std::size_t(ds.rtm.label) == ds.label,
                "label mismatch between dataset.json and " + e.at("file").get<std::string>());
        const std::string split = e.at("split").get<std::string>();
        require(split == "train" || split == "val", "unknown split tag: " + split);
        (split == "val" ? out.val : out.train).push_back(std::move(ds));
    }
    require(!out.train.empty(), "dataset has no training samples");
    require(!out.val.empty(), "dataset has no validation samples");
    return out;
}

// ---- small parallel helper ---------------------------------------------------

// Runs fn(i) for i in [0, n) across up to `threads` workers. Work items must
// be independent; results must not depend on execution order.
template <class Fn>
inline void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
    if (n == 0) return;
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    std::exception_ptr err;
    std::mutex err_mu;
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += threads) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mu);
                if (!err) err = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace cforge
