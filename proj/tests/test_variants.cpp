#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "cadenceforge/manifest.hpp"
#include "cadenceforge/variants.hpp"

using namespace cforge;
namespace fs = std::filesystem;

TEST_CASE("registry holds sixteen uniquely named variants") {
    const auto names = variant_names();
    REQUIRE(names.size() == 16);
    for (std::size_t i = 0; i < names.size(); ++i)
        for (std::size_t j = i + 1; j < names.size(); ++j) CHECK(names[i] != names[j]);
    CHECK(names.front() == "Full CAST");
}

TEST_CASE("each variant changes exactly the aspect its name promises") {
    const auto base = desk_profile();

    CHECK(make_variant("Full CAST", base).model.use_casa == base.model.use_casa);

    CHECK_FALSE(make_variant("No linearisation (FFT on dB directly)", base)
                    .pipeline.cvd.linearize);
    CHECK(make_variant("Hamming window instead of Blackman-Harris", base).pipeline.cvd.window ==
          Window::Hamming);
    CHECK(make_variant("No zero-padding (N_FFT=T)", base).pipeline.cvd.n_fft == 0);

    CHECK_FALSE(make_variant("Remove CASA (standard 3-channel stacking)", base).model.use_casa);
    CHECK(make_variant("CASA with 1 head instead of 4 heads", base).model.casa.heads == 1);

    CHECK(make_variant("Concatenation instead of cross-attention", base).model.fusion ==
          FusionKind::Concat);
    CHECK(make_variant("Symmetric cross-attention (both as Q)", base).model.fusion ==
          FusionKind::Symmetric);

    CHECK_FALSE(make_variant("RTM-only (no CVD stream)", base).model.use_cvd);
    CHECK_FALSE(make_variant("CVD-only (no RTM stream)", base).model.use_rtm);

    {
        const auto v = make_variant("No auxiliary losses (lambda_aux=0)", base);
        CHECK(v.train.lambda_aux == 0.0);
        CHECK_FALSE(v.model.aux_heads);
    }
    {
        const auto v = make_variant("No physics-aware augmentation", base);
        CHECK_FALSE(v.augment.temporal_warp);
        CHECK_FALSE(v.augment.magnitude_warp);
        CHECK_FALSE(v.augment.multipath);
        CHECK_FALSE(v.augment.antenna_dropout);
    }
    {
        const auto v = make_variant("No SWA or EMA", base);
        CHECK_FALSE(v.train.use_swa);
        CHECK_FALSE(v.train.use_ema);
    }
    {
        const auto v = make_variant("MixUp/CutMix disabled", base);
        CHECK_FALSE(v.augment.mixup);
        CHECK_FALSE(v.augment.cutmix);
    }
    {
        const auto v = make_variant("Swap encoders", base);
        CHECK(v.model.rtm_encoder.widths == base.model.cvd_encoder.widths);
        CHECK(v.model.rtm_encoder.kernel == base.model.cvd_encoder.kernel);
        CHECK(v.model.cvd_encoder.kernel == base.model.rtm_encoder.kernel);
    }
    {
        const auto v = make_variant("Same encoder both streams", base);
        CHECK(v.model.cvd_encoder.widths == v.model.rtm_encoder.widths);
        CHECK(v.model.cvd_encoder.kernel == v.model.rtm_encoder.kernel);
    }
}

TEST_CASE("unknown variant name throws") {
    CHECK_THROWS_AS(make_variant("Bigger everything", desk_profile()), ValidationError);
}

TEST_CASE("profiles resolve by name and validate") {
    const auto desk = profile_by_name("desk");
    const auto paper = profile_by_name("paper");
    CHECK(desk.train.epochs < paper.train.epochs);
    CHECK(desk.model.proj_dim < paper.model.proj_dim);
    CHECK_THROWS_AS(profile_by_name("laptop"), ValidationError);

    // setup JSON round trip preserves every sub-config
    nlohmann::json j = desk;
    const auto back = j.get<VariantSetup>();
    CHECK(back.model.proj_dim == desk.model.proj_dim);
    CHECK(back.train.lr == desk.train.lr);
    CHECK(back.augment.mixup_alpha == desk.augment.mixup_alpha);
    CHECK(back.pipeline.pre.spatial == desk.pipeline.pre.spatial);
}

TEST_CASE("manifest writes atomically with a stable config hash") {
    const fs::path dir = fs::temp_directory_path() / "cf_manifest_test";
    fs::remove_all(dir);
    fs::create_directories(dir);

    RunManifest m;
    m.command = "synth";
    m.seed = 9;
    m.config = {{"classes", 4}, {"per_class", 6}};
    m.inputs = {{"none", true}};
    m.outputs = {{"dataset", "dataset.json"}};
    write_manifest(dir.string(), m);

    std::ifstream is(dir / "manifest.json");
    REQUIRE(is.good());
    const auto j = nlohmann::json::parse(is);
    CHECK(j.at("command") == "synth");
    CHECK(j.at("seed") == 9);
    CHECK(j.contains("timestamp"));
    CHECK(j.at("config_hash") == config_hash(m.config));
    CHECK_FALSE(fs::exists(dir / ".manifest.json.tmp"));  // temp renamed away

    // hash depends only on content
    CHECK(config_hash({{"a", 1}}) == config_hash({{"a", 1}}));
    CHECK(config_hash({{"a", 1}}) != config_hash({{"a", 2}}));

    fs::remove_all(dir);
}
