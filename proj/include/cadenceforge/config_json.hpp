#pragma once

// JSON bindings for the config structs, so checkpoints and run manifests can
// carry everything needed to rebuild a model and its preprocessing.

#include <json.hpp>

#include "cadenceforge/augment.hpp"
#include "cadenceforge/model.hpp"
#include "cadenceforge/pipeline.hpp"
#include "cadenceforge/synth.hpp"

namespace cforge {

inline const char* fusion_name(FusionKind f) {
    switch (f) {
        case FusionKind::Asymmetric: return "asymmetric";
        case FusionKind::Concat: return "concat";
        case FusionKind::Symmetric: return "symmetric";
    }
    return "asymmetric";
}

inline FusionKind fusion_from_name(const std::string& s) {
    if (s == "asymmetric") return FusionKind::Asymmetric;
    if (s == "concat") return FusionKind::Concat;
    if (s == "symmetric") return FusionKind::Symmetric;
    throw ValidationError("unknown fusion kind: " + s);
}

inline void to_json(nlohmann::json& j, const CvdConfig& c) {
    j = {{"n_fft", c.n_fft},
         {"window", window_name(c.window)},
         {"discard_dc", c.discard_dc},
         {"linearize", c.linearize},
         {"eps", c.eps}};
}
inline void from_json(const nlohmann::json& j, CvdConfig& c) {
    c.n_fft = j.at("n_fft").get<std::size_t>();
    c.window = window_from_name(j.at("window").get<std::string>());
    c.discard_dc = j.at("discard_dc").get<bool>();
    c.linearize = j.at("linearize").get<bool>();
    c.eps = j.at("eps").get<double>();
}

inline void to_json(nlohmann::json& j, const PreprocessConfig& c) {
    j = {{"pad_frames", c.pad_frames}, {"spatial", c.spatial}};
}
inline void from_json(const nlohmann::json& j, PreprocessConfig& c) {
    c.pad_frames = j.at("pad_frames").get<std::size_t>();
    c.spatial = j.at("spatial").get<std::size_t>();
}

inline void to_json(nlohmann::json& j, const PipelineConfig& c) {
    j = {{"cvd", c.cvd}, {"pre", c.pre}};
}
inline void from_json(const nlohmann::json& j, PipelineConfig& c) {
    j.at("cvd").get_to(c.cvd);
    j.at("pre").get_to(c.pre);
}

inline void to_json(nlohmann::json& j, const CasaConfig& c) {
    j = {{"embed_dim", c.embed_dim}, {"heads", c.heads}, {"gate_hidden", c.gate_hidden}};
}
inline void from_json(const nlohmann::json& j, CasaConfig& c) {
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.gate_hidden = j.at("gate_hidden").get<std::size_t>();
}

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
    j = {{"widths", c.widths}, {"kernel", c.kernel}};
}
inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
    c.widths = j.at("widths").get<std::vector<std::size_t>>();
    c.kernel = j.at("kernel").get<std::size_t>();
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"num_classes", c.num_classes},
         {"spatial", c.spatial},
         {"use_rtm", c.use_rtm},
         {"use_cvd", c.use_cvd},
         {"use_casa", c.use_casa},
         {"casa", c.casa},
         {"rtm_encoder", c.rtm_encoder},
         {"cvd_encoder", c.cvd_encoder},
         {"proj_dim", c.proj_dim},
         {"fusion", fusion_name(c.fusion)},
         {"fusion_heads", c.fusion_heads},
         {"fusion_dropout", c.fusion_dropout},
         {"ffn_hidden", c.ffn_hidden},
         {"head_dropout", c.head_dropout},
         {"aux_heads", c.aux_heads},
         {"init_seed", c.init_seed}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.spatial = j.at("spatial").get<std::size_t>();
    c.use_rtm = j.at("use_rtm").get<bool>();
    c.use_cvd = j.at("use_cvd").get<bool>();
    c.use_casa = j.at("use_casa").get<bool>();
    j.at("casa").get_to(c.casa);
    j.at("rtm_encoder").get_to(c.rtm_encoder);
    j.at("cvd_encoder").get_to(c.cvd_encoder);
    c.proj_dim = j.at("proj_dim").get<std::size_t>();
    c.fusion = fusion_from_name(j.at("fusion").get<std::string>());
    c.fusion_heads = j.at("fusion_heads").get<std::size_t>();
    c.fusion_dropout = j.at("fusion_dropout").get<double>();
    c.ffn_hidden = j.at("ffn_hidden").get<std::size_t>();
    c.head_dropout = j.at("head_dropout").get<double>();
    c.aux_heads = j.at("aux_heads").get<bool>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
}

inline void to_json(nlohmann::json& j, const AugmentConfig& c) {
    j = {{"temporal_warp", c.temporal_warp},
         {"tw_sigma", c.tw_sigma},
         {"tw_knots", c.tw_knots},
         {"magnitude_warp", c.magnitude_warp},
         {"mw_sigma", c.mw_sigma},
         {"mw_knots", c.mw_knots},
         {"multipath", c.multipath},
         {"mp_max_delay", c.mp_max_delay},
         {"mp_atten_lo", c.mp_atten_lo},
         {"mp_atten_hi", c.mp_atten_hi},
         {"antenna_dropout", c.antenna_dropout},
         {"ad_prob", c.ad_prob},
         {"spec_augment", c.spec_augment},
         {"sa_max_masks", c.sa_max_masks},
         {"sa_max_frac", c.sa_max_frac},
         {"mixup", c.mixup},
         {"mixup_alpha", c.mixup_alpha},
         {"cutmix", c.cutmix},
         {"cutmix_alpha", c.cutmix_alpha}};
}
inline void from_json(const nlohmann::json& j, AugmentConfig& c) {
    c.temporal_warp = j.at("temporal_warp").get<bool>();
    c.tw_sigma = j.at("tw_sigma").get<double>();
    c.tw_knots = j.at("tw_knots").get<std::size_t>();
    c.magnitude_warp = j.at("magnitude_warp").get<bool>();
    c.mw_sigma = j.at("mw_sigma").get<double>();
    c.mw_knots = j.at("mw_knots").get<std::size_t>();
    c.multipath = j.at("multipath").get<bool>();
    c.mp_max_delay = j.at("mp_max_delay").get<std::size_t>();
    c.mp_atten_lo = j.at("mp_atten_lo").get<double>();
    c.mp_atten_hi = j.at("mp_atten_hi").get<double>();
    c.antenna_dropout = j.at("antenna_dropout").get<bool>();
    c.ad_prob = j.at("ad_prob").get<double>();
    c.spec_augment = j.at("spec_augment").get<bool>();
    c.sa_max_masks = j.at("sa_max_masks").get<std::size_t>();
    c.sa_max_frac = j.at("sa_max_frac").get<double>();
    c.mixup = j.at("mixup").get<bool>();
    c.mixup_alpha = j.at("mixup_alpha").get<double>();
    c.cutmix = j.at("cutmix").get<bool>();
    c.cutmix_alpha = j.at("cutmix_alpha").get<double>();
}

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
    j = {{"num_classes", c.num_classes},
         {"per_class", c.per_class},
         {"mode", synth_mode_name(c.mode)},
         {"seed", c.seed},
         {"val_fraction", c.val_fraction}};
}
inline void from_json(const nlohmann::json& j, SynthConfig& c) {
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.per_class = j.at("per_class").get<std::size_t>();
    c.mode = synth_mode_from_name(j.at("mode").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    c.val_fraction = j.at("val_fraction").get<double>();
}

}  // namespace cforge
