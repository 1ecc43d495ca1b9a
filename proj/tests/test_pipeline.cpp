#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <filesystem>
#include <numeric>

#include "cadenceforge/pipeline.hpp"

using namespace cforge;

namespace {

RangeTimeMap demo_map(std::uint64_t seed = 9, std::size_t frames = 26) {
    GestureSpec spec;
    spec.cadence_hz = 2.2;
    spec.range_center = 120.0;
    spec.range_width = 6.0;
    spec.mod_depth = 0.5;
    spec.noise_floor_db = -45.0;
    spec.num_frames = frames;
    Rng rng(seed);
    return generate_sample(spec, rng);
}

}  // namespace

TEST_CASE("prepare_streams yields two unit-scaled square stacks") {
    const auto rtm = demo_map();
    PipelineConfig cfg;
    const auto sp = prepare_streams(rtm, cfg);
    const std::size_t plane = cfg.pre.spatial * cfg.pre.spatial;
    REQUIRE(sp.rtm_in.size() == 3 * plane);
    REQUIRE(sp.cvd_in.size() == 3 * plane);
    for (float v : sp.rtm_in) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    for (float v : sp.cvd_in) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    // deterministic
    const auto sp2 = prepare_streams(rtm, cfg);
    CHECK(sp.rtm_in == sp2.rtm_in);
    CHECK(sp.cvd_in == sp2.cvd_in);
}

TEST_CASE("prepare_streams works without spectral zero-padding") {
    const auto rtm = demo_map(3, 31);  // odd length, not a power of two
    PipelineConfig cfg;
    cfg.cvd.n_fft = 0;
    const auto sp = prepare_streams(rtm, cfg);
    CHECK(sp.cvd_in.size() == 3 * cfg.pre.spatial * cfg.pre.spatial);
    for (float v : sp.cvd_in) CHECK(std::isfinite(v));
}

TEST_CASE("physics augmentation is identity when disabled") {
    const auto rtm = demo_map();
    AugmentConfig acfg;
    acfg.temporal_warp = acfg.magnitude_warp = acfg.multipath = false;
    Rng rng(1);
    const auto out = augment_physics(rtm, acfg, rng);
    CHECK(out.data == rtm.data);
}

TEST_CASE("physics augmentation is deterministic and shape preserving") {
    const auto rtm = demo_map();
    AugmentConfig acfg;  // all physics ops on by default
    Rng r1(7), r2(7);
    const auto a = augment_physics(rtm, acfg, r1);
    const auto b = augment_physics(rtm, acfg, r2);
    CHECK(a.data == b.data);
    CHECK(a.num_frames == rtm.num_frames);
    CHECK(a.data != rtm.data);
    a.validate();
    for (float v : a.data) CHECK(std::isfinite(v));
}

TEST_CASE("multipath-only augmentation never reduces amplitude") {
    const auto rtm = demo_map();
    AugmentConfig acfg;
    acfg.temporal_warp = acfg.magnitude_warp = false;
    acfg.multipath = true;
    Rng rng(5);
    const auto out = augment_physics(rtm, acfg, rng);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        CHECK(out.data[i] >= rtm.data[i] - 1e-3f);  // dB of a sum of positives
}

TEST_CASE("antenna dropout removes the same plane from both streams") {
    const auto rtm = demo_map();
    PipelineConfig pcfg;
    auto sp = prepare_streams(rtm, pcfg);
    AugmentConfig acfg;
    acfg.antenna_dropout = true;
    acfg.ad_prob = 1.0;
    acfg.spec_augment = false;
    Rng rng(11);
    const int dropped = augment_streams(sp, pcfg.pre.spatial, acfg, rng);
    REQUIRE(dropped >= 0);
    const std::size_t plane = pcfg.pre.spatial * pcfg.pre.spatial;
    for (std::size_t i = 0; i < plane; ++i) {
        CHECK(sp.rtm_in[std::size_t(dropped) * plane + i] == 0.0f);
        CHECK(sp.cvd_in[std::size_t(dropped) * plane + i] == 0.0f);
    }
    // untouched planes keep energy
    double other = 0.0;
    for (std::size_t a = 0; a < 3; ++a) {
        if (int(a) == dropped) continue;
        for (std::size_t i = 0; i < plane; ++i) other += sp.rtm_in[a * plane + i];
    }
    CHECK(other > 0.0);
}

TEST_CASE("stream masking draws independently per stream") {
    const auto rtm = demo_map();
    PipelineConfig pcfg;
    auto sp = prepare_streams(rtm, pcfg);
    const auto before = sp;
    AugmentConfig acfg;
    acfg.antenna_dropout = false;
    acfg.spec_augment = true;
    Rng rng(2);
    augment_streams(sp, pcfg.pre.spatial, acfg, rng);
    // deterministic under the same rng
    auto sp2 = before;
    Rng rng2(2);
    augment_streams(sp2, pcfg.pre.spatial, acfg, rng2);
    CHECK(sp.rtm_in == sp2.rtm_in);
    CHECK(sp.cvd_in == sp2.cvd_in);
}

TEST_CASE("tta view 0 is the identity") {
    const auto rtm = demo_map();
    Rng rng(1);
    CHECK(tta_view(rtm, 0, rng).data == rtm.data);
}

TEST_CASE("tta time reversal is an involution") {
    const auto rtm = demo_map();
    Rng rng(1);
    const auto rev = tta_view(rtm, 1, rng);
    CHECK(rev.data != rtm.data);
    const auto back = tta_view(rev, 1, rng);
    CHECK(back.data == rtm.data);
}

TEST_CASE("tta noise view is seeded and small") {
    const auto rtm = demo_map();
    Rng r1(4), r2(4);
    const auto a = tta_view(rtm, 2, r1);
    const auto b = tta_view(rtm, 2, r2);
    CHECK(a.data == b.data);
    CHECK(a.data != rtm.data);
    const auto [lo, hi] = std::minmax_element(rtm.data.begin(), rtm.data.end());
    const float span = *hi - *lo;
    double max_dev = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        max_dev = std::max(max_dev, std::abs(double(a.data[i]) - double(rtm.data[i])));
    CHECK(max_dev < 0.06 * span);  // sigma is 1% of the span
    CHECK(max_dev > 0.0);
}

TEST_CASE("tta shifts move content and back-fill with the floor") {
    const auto rtm = demo_map();
    const float fill = *std::min_element(rtm.data.begin(), rtm.data.end());
    Rng rng(1);
    const auto rs = tta_view(rtm, 3, rng);
    CHECK(rs.at(1, 5, 0) == fill);
    CHECK(rs.at(1, 5, 2) == fill);
    CHECK(rs.at(1, 5, 10) == rtm.at(1, 5, 7));
    const auto ts = tta_view(rtm, 4, rng);
    CHECK(ts.at(2, 0, 40) == fill);
    CHECK(ts.at(2, 1, 40) == fill);
    CHECK(ts.at(2, 9, 40) == rtm.at(2, 7, 40));
    Rng other(1);
    CHECK_THROWS_AS(tta_view(rtm, kTtaViews, other), ValidationError);
}

TEST_CASE("dataset directory round trip") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "cf_pipeline_ds_test";
    fs::remove_all(dir);

    SynthConfig cfg;
    cfg.num_classes = 4;
    cfg.per_class = 6;
    cfg.seed = 77;
    const auto samples = generate_dataset(cfg);
    save_dataset(dir.string(), samples, cfg);
    CHECK(fs::exists(dir / "dataset.json"));

    const auto loaded = load_dataset(dir.string());
    CHECK(loaded.num_classes == 4);
    const auto direct = to_dataset(samples, cfg.num_classes);
    REQUIRE(loaded.train.size() == direct.train.size());
    REQUIRE(loaded.val.size() == direct.val.size());

    // maps survive the round trip bit-for-bit (order preserved)
    for (std::size_t i = 0; i < loaded.train.size(); ++i) {
        CHECK(loaded.train[i].label == direct.train[i].label);
        CHECK(loaded.train[i].rtm.data == direct.train[i].rtm.data);
    }
    CHECK(loaded.val.size() == 4);  // 6 per class at 20% -> max(1, round(1.2)) = 1 each

    fs::remove_all(dir);
    CHECK_THROWS_AS(load_dataset(dir.string()), ValidationError);
}

TEST_CASE("parallel_for covers every index exactly once and propagates errors") {
    std::vector<std::atomic<int>> hits(257);
    for (auto& h : hits) h = 0;
    parallel_for(hits.size(), 4, [&](std::size_t i) { ++hits[i]; });
    for (auto& h : hits) CHECK(h.load() == 1);

    parallel_for(3, 1, [&](std::size_t i) { ++hits[i]; });
    CHECK(hits[0].load() == 2);

    CHECK_THROWS_AS(parallel_for(8, 3,
                                 [](std::size_t i) {
                                     if (i == 5) throw ValidationError("boom");
                                 }),
                    ValidationError);
}
