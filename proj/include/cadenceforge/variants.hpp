#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cadenceforge/augment.hpp"
#include "cadenceforge/config_json.hpp"
#include "cadenceforge/model.hpp"
#include "cadenceforge/pipeline.hpp"
#include "cadenceforge/train.hpp"

namespace cforge {

// Everything a single training run needs; ablation rows are mutations of a
// baseline setup, each touching exactly one aspect.
struct VariantSetup {
    ModelConfig model;
    TrainConfig train;
    AugmentConfig augment;
    PipelineConfig pipeline;
};

struct Variant {
    std::string name;
    std::function<void(VariantSetup&)> apply;
};

inline const std::vector<Variant>& variant_registry() {
    static const std::vector<Variant> reg = {
        {"Full CAST", [](VariantSetup&) {}},
        {"No linearisation (FFT on dB directly)",
         [](VariantSetup& v) { v.pipeline.cvd.linearize = false; }},
        {"Hamming window instead of Blackman-Harris",
         [](VariantSetup& v) { v.pipeline.cvd.window = Window::Hamming; }},
        {"No zero-padding (N_FFT=T)", [](VariantSetup& v) { v.pipeline.cvd.n_fft = 0; }},
        {"Remove CASA (standard 3-channel stacking)",
         [](VariantSetup& v) { v.model.use_casa = false; }},
        {"CASA with 1 head instead of 4 heads",
         [](VariantSetup& v) { v.model.casa.heads = 1; }},
        {"Concatenation instead of cross-attention",
         [](VariantSetup& v) { v.model.fusion = FusionKind::Concat; }},
        {"Symmetric cross-attention (both as Q)",
         [](VariantSetup& v) { v.model.fusion = FusionKind::Symmetric; }},
        {"RTM-only (no CVD stream)", [](VariantSetup& v) { v.model.use_cvd = false; }},
        {"CVD-only (no RTM stream)", [](VariantSetup& v) { v.model.use_rtm = false; }},
        {"No auxiliary losses (lambda_aux=0)",
         [](VariantSetup& v) {
             v.train.lambda_aux = 0.0;
             v.model.aux_heads = false;
         }},
        {"No physics-aware augmentation", [](VariantSetup& v) { v.augment.disable_physics(); }},
        {"No SWA or EMA",
         [](VariantSetup& v) { v.train.use_swa = v.train.use_ema = false; }},
        {"MixUp/CutMix disabled", [](VariantSetup& v) { v.augment.disable_mixing(); }},
        {"Swap encoders",
         [](VariantSetup& v) { std::swap(v.model.rtm_encoder, v.model.cvd_encoder); }},
        {"Same encoder both streams",
         [](VariantSetup& v) { v.model.cvd_encoder = v.model.rtm_encoder; }},
    };
    return reg;
}

inline std::vector<std::string> variant_names() {
    std::vector<std::string> out;
    for (const auto& v : variant_registry()) out.push_back(v.name);
    return out;
}

inline VariantSetup make_variant(const std::string& name, VariantSetup base) {
    for (const auto& v : variant_registry()) {
        if (v.name == name) {
            v.apply(base);
            base.model.validate();
            base.train.validate();
            base.augment.validate();
            base.pipeline.validate();
            return base;
        }
    }
    throw ValidationError("unknown variant: " + name);
}

// The struct defaults are the published recipe; the desk profile shrinks the
// model and schedule so a full run finishes in minutes on one CPU core while
// keeping every architectural component in play.
inline VariantSetup paper_profile() { return {}; }

inline VariantSetup desk_profile() {
    VariantSetup s;
    s.model.casa = {8, 2, 4};
    s.model.rtm_encoder = {{8, 16, 32, 48}, 3};
    s.model.cvd_encoder = {{8, 16, 32, 48}, 5};
    s.model.proj_dim = 128;
    s.model.fusion_heads = 4;
    s.model.ffn_hidden = 256;
    s.train.epochs = 20;
    s.train.batch_size = 16;
    s.train.lr = 2e-3;
    s.train.warmup_epochs = 2;
    s.train.ema_decay = 0.99;
    return s;
}

inline VariantSetup profile_by_name(const std::string& name) {
    if (name == "desk") return desk_profile();
    if (name == "paper") return paper_profile();
    throw ValidationError("unknown profile: " + name + " (expected desk or paper)");
}

inline void to_json(nlohmann::json& j, const VariantSetup& s) {
    j = {{"model", s.model}, {"train", s.train}, {"augment", s.augment},
         {"pipeline", s.pipeline}};
}
inline void from_json(const nlohmann::json& j, VariantSetup& s) {
    j.at("model").get_to(s.model);
    j.at("train").get_to(s.train);
    j.at("augment").get_to(s.augment);
    j.at("pipeline").get_to(s.pipeline);
}

}  // namespace cforge
