#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cadenceforge/nn.hpp"
#include "cadenceforge/rng.hpp"
#include "cadenceforge/tensor.hpp"

namespace cforge {

// ---- configuration -----------------------------------------------------------

struct CasaConfig {
    std::size_t embed_dim = 16;
    std::size_t heads = 4;
    std::size_t gate_hidden = 8;
};

enum class FusionKind { Asymmetric, Concat, Symmetric };

struct EncoderConfig {
    std::vector<std::size_t> widths{16, 32, 64, 128};
    std::size_t kernel = 3;
};

struct ModelConfig {
    std::size_t num_classes = 8;
    std::size_t spatial = 32;          // square input side for both streams
    bool use_rtm = true;
    bool use_cvd = true;
    bool use_casa = true;
    CasaConfig casa;
    EncoderConfig rtm_encoder{{16, 32, 64, 128}, 3};
    EncoderConfig cvd_encoder{{16, 32, 64, 128}, 5};
    std::size_t proj_dim = 512;
    FusionKind fusion = FusionKind::Asymmetric;
    std::size_t fusion_heads = 8;
    double fusion_dropout = 0.1;
    std::size_t ffn_hidden = 2048;
    double head_dropout = 0.3;
    bool aux_heads = true;
    std::uint64_t init_seed = 42;

    void validate() const {
        require(num_classes >= 2, "need at least two classes");
        require(use_rtm || use_cvd, "at least one stream must be enabled");
        require(spatial >= 16, "spatial must be >= 16 (four pooling stages)");
        require(!rtm_encoder.widths.empty() && !cvd_encoder.widths.empty(),
                "encoders need at least one stage");
        for (auto k : {rtm_encoder.kernel, cvd_encoder.kernel})
            require(k % 2 == 1 && k >= 3 && k <= 7, "encoder kernels must be odd, 3..7");
        require(casa.embed_dim % casa.heads == 0, "CASA embed dim must divide by heads");
        require(proj_dim % fusion_heads == 0, "fusion dim must divide by heads");
    }
};

// ---- CASA: cross-antenna spatial attention -------------------------------------

// Shared per-antenna embedding (conv + BN + ReLU + global pool), one token
// per antenna, self-attention across the three tokens, then a sigmoid gate
// that scales each antenna plane of the input.
template <class S>
class CasaModule {
public:
    CasaModule() = default;
    CasaModule(const CasaConfig& cfg, Rng rng)
        : cfg_(cfg),
          conv_(1, cfg.embed_dim, 3, rng.fork(1)),
          bn_(cfg.embed_dim),
          mha_(cfg.embed_dim, cfg.heads, 0.0, rng.fork(2)),
          ln_(cfg.embed_dim),
          gate_in_(cfg.embed_dim, cfg.gate_hidden, rng.fork(3)),
          gate_out_(cfg.gate_hidden, 1, rng.fork(4)) {}

    struct Result {
        Tensor<S> planes;  // [B, A, H, W], input scaled by the gate
        Tensor<S> alphas;  // [B, A]
    };

    Result forward(const Tensor<S>& x, bool train, Rng& rng) {
        const std::size_t B = x.dim(0), A = x.dim(1), H = x.dim(2), W = x.dim(3);
        // fold antennas into the batch so the embedding is antenna-shared
        auto folded = reshape(x, {B * A, 1, H, W});
        auto emb = relu(bn_.forward(conv_.forward(folded), train));
        auto tokens = reshape(global_avg_pool(emb), {B, A, cfg_.embed_dim});
        auto attended = mha_.forward(tokens, tokens, train, rng);
        auto mixed = ln_.forward(add(tokens, attended));
        auto gate = sigmoid(gate_out_.forward(relu(gate_in_.forward(mixed))));
        auto alphas = reshape(gate, {B, A});
        return {scale_planes(x, alphas), alphas};
    }

    void collect(const std::string& prefix, std::vector<ParamRef<S>>& out) {
        conv_.collect(prefix + ".embed", out);
        bn_.collect(prefix + ".bn", out);
        mha_.collect(prefix + ".attn", out);
        ln_.collect(prefix + ".ln", out);
        gate_in_.collect(prefix + ".gate0", out);
        gate_out_.collect(prefix + ".gate1", out);
    }
    void collect_buffers(const std::string& prefix, std::vector<BufferRef<S>>& out) {
        bn_.collect_buffers(prefix + ".bn", out);
    }
    void begin_reestimate() { bn_.begin_reestimate(); }
    void end_reestimate() { bn_.end_reestimate(); }

private:
    CasaConfig cfg_;
    Conv2dLayer<S> conv_;
    BatchNorm2dLayer<S> bn_;
    MultiHeadAttention<S> mha_;
    LayerNormLayer<S> ln_;
    LinearLayer<S> gate_in_, gate_out_;
};

// ---- stream encoder --------------------------------------------------------------

// Four conv/BN/ReLU/avg-pool stages followed by global average pooling.
template <class S>
class StreamEncoder {
public:
    StreamEncoder() = default;
    StreamEncoder(std::size_t in_ch, const EncoderConfig& cfg, Rng rng) {
        std::size_t c = in_ch;
        for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
            convs_.emplace_back(c, cfg.widths[i], cfg.kernel, rng.fork(i + 1));
            bns_.emplace_back(cfg.widths[i]);
            c = cfg.widths[i];
        }
        out_dim_ = c;
    }

    Tensor<S> forward(const Tensor<S>& x, bool train) {
        Tensor<S> h = x;
        for (std::size_t i = 0; i < convs_.size(); ++i)
            h = avg_pool2d(relu(bns_[i].forward(convs_[i].forward(h), train)));
        return global_avg_pool(h);
    }

    std::size_t out_dim() const { return out_dim_; }

    void collect(const std::string& prefix, std::vector<ParamRef<S>>& out) {
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            const auto stage = prefix + ".stage" + std::to_string(i);
            convs_[i].collect(stage + ".conv", out);
            bns_[i].collect(stage + ".bn", out);
        }
    }
    void collect_buffers(const std::string& prefix, std::vector<BufferRef<S>>& out) {
        for (std::size_t i = 0; i < bns_.size(); ++i)
            bns_[i].collect_buffers(prefix + ".stage" + std::to_string(i) + ".bn", out);
    }
    void begin_reestimate() {
        for (auto& bn : bns_) bn.begin_reestimate();
    }
    void end_reestimate() {
        for (auto& bn : bns_) bn.end_reestimate();
    }

private:
    std::vector<Conv2dLayer<S>> convs_;
    std::vector<BatchNorm2dLayer<S>> bns_;
    std::size_t out_dim_ = 0;
};

// ---- cross-attention fusion --------------------------------------------------------

// One decoder-style block: the spatial stream queries the spectral stream,
// residual + LayerNorm, position-wise FFN, then a learned sigmoid gate blends
// the attended vector with the query-side feature.
template <class S>
class FusionBlock {
public:
    FusionBlock() = default;
    FusionBlock(std::size_t dim, std::size_t heads, double attn_dropout, std::size_t ffn_hidden,
                Rng rng)
        : mha_(dim, heads, attn_dropout, rng.fork(1)),
          ln_attn_(dim),
          ffn_in_(dim, ffn_hidden, rng.fork(2)),
          ffn_out_(ffn_hidden, dim, rng.fork(3)),
          ln_ffn_(dim),
          gate_(2 * dim, dim, rng.fork(4)) {}

    // query/context: [B, D] -> fused [B, D]
    Tensor<S> forward(const Tensor<S>& query, const Tensor<S>& context, bool train, Rng& rng) {
        auto attended = attend(query, context, train, rng);
        return blend(query, attended);
    }

    // Symmetric variant: both directions through the same weights, averaged.
    Tensor<S> forward_symmetric(const Tensor<S>& a, const Tensor<S>& b, bool train, Rng& rng) {
        auto ea = attend(a, b, train, rng);
        auto eb = attend(b, a, train, rng);
        auto attended = scale(add(ea, eb), S(0.5));
        auto anchor = scale(add(a, b), S(0.5));
        return blend(anchor, attended);
    }

    void collect(const std::string& prefix, std::vector<ParamRef<S>>& out) {
        mha_.collect(prefix + ".attn", out);
        ln_attn_.collect(prefix + ".ln_attn", out);
        ffn_in_.collect(prefix + ".ffn0", out);
        ffn_out_.collect(prefix + ".ffn1", out);
        ln_ffn_.collect(prefix + ".ln_ffn", out);
        gate_.collect(prefix + ".gate", out);
    }

    // exposed so the gate identities (g=0 -> anchor, g=1 -> attended) can be
    // checked against independently computed values
    Tensor<S> attend(const Tensor<S>& query, const Tensor<S>& context, bool train, Rng& rng) {
        const std::size_t B = query.dim(0), D = query.shape().back();
        auto q3 = reshape(query, {B, 1, D});
        auto c3 = reshape(context, {B, 1, D});
        auto att = reshape(mha_.forward(q3, c3, train, rng), {B, D});
        auto h = ln_attn_.forward(add(query, att));
        auto f = ffn_out_.forward(gelu(ffn_in_.forward(h)));
        return ln_ffn_.forward(add(h, f));
    }

    Tensor<S> blend(const Tensor<S>& anchor, const Tensor<S>& attended) {
        auto g = sigmoid(gate_.forward(concat_lastdim(anchor, attended)));
        auto ones = Tensor<S>(g.shape(), S(1));
        return add(mul(g, attended), mul(sub(ones, g), anchor));
    }

    LinearLayer<S>& gate() { return gate_; }

private:
    MultiHeadAttention<S> mha_;
    LayerNormLayer<S> ln_attn_;
    LinearLayer<S> ffn_in_, ffn_out_;
    LayerNormLayer<S> ln_ffn_;
    LinearLayer<S> gate_;
};

// ---- the full model ---------------------------------------------------------------

template <class S = float>
class CastModel {
public:
    struct Outputs {
        Tensor<S> main;          // [B, C]
        Tensor<S> aux_rtm;       // [B, C] when both streams + aux heads
        Tensor<S> aux_cvd;
        Tensor<S> alphas_rtm;    // [B, A] CASA weights (empty when disabled)
        Tensor<S> alphas_cvd;
        bool has_aux = false;
    };

    CastModel() = default;

    explicit CastModel(const ModelConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        Rng rng = Rng(cfg.init_seed).fork(0xca57ull);
        if (cfg.use_casa) {
            if (cfg.use_rtm) casa_rtm_ = std::make_unique<CasaModule<S>>(cfg.casa, rng.fork(1));
            if (cfg.use_cvd) casa_cvd_ = std::make_unique<CasaModule<S>>(cfg.casa, rng.fork(2));
        }
        if (cfg.use_rtm) {
            enc_rtm_ = StreamEncoder<S>(3, cfg.rtm_encoder, rng.fork(3));
            proj_rtm_ = LinearLayer<S>(enc_rtm_.out_dim(), cfg.proj_dim, rng.fork(5));
        }
        if (cfg.use_cvd) {
            enc_cvd_ = StreamEncoder<S>(3, cfg.cvd_encoder, rng.fork(4));
            proj_cvd_ = LinearLayer<S>(enc_cvd_.out_dim(), cfg.proj_dim, rng.fork(6));
        }
        if (two_stream() && cfg.fusion != FusionKind::Concat)
            fusion_ = FusionBlock<S>(cfg.proj_dim, cfg.fusion_heads, cfg.fusion_dropout,
                                     cfg.ffn_hidden, rng.fork(7));
        if (two_stream() && cfg.fusion == FusionKind::Concat)
            concat_proj_ = LinearLayer<S>(2 * cfg.proj_dim, cfg.proj_dim, rng.fork(8));
        head_ln_ = LayerNormLayer<S>(cfg.proj_dim);
        head_ = LinearLayer<S>(cfg.proj_dim, cfg.num_classes, rng.fork(9));
        if (two_stream() && cfg.aux_heads) {
            aux_rtm_ = LinearLayer<S>(cfg.proj_dim, cfg.num_classes, rng.fork(10));
            aux_cvd_ = LinearLayer<S>(cfg.proj_dim, cfg.num_classes, rng.fork(11));
        }
    }

    bool two_stream() const { return cfg_.use_rtm && cfg_.use_cvd; }
    const ModelConfig& config() const { return cfg_; }

    // x_rtm / x_cvd: [B, 3, S, S]; pass an empty tensor for a disabled stream.
    Outputs forward(const Tensor<S>& x_rtm, const Tensor<S>& x_cvd, bool train, Rng& rng) {
        Outputs out;
        Tensor<S> f_rtm, f_cvd;
        if (cfg_.use_rtm) {
            Tensor<S> x = x_rtm;
            if (casa_rtm_) {
                auto r = casa_rtm_->forward(x, train, rng);
                x = r.planes;
                out.alphas_rtm = r.alphas;
            }
            f_rtm = proj_rtm_.forward(enc_rtm_.forward(x, train));
        }
        if (cfg_.use_cvd) {
            Tensor<S> x = x_cvd;
            if (casa_cvd_) {
                auto r = casa_cvd_->forward(x, train, rng);
                x = r.planes;
                out.alphas_cvd = r.alphas;
            }
            f_cvd = proj_cvd_.forward(enc_cvd_.forward(x, train));
        }

        Tensor<S> fused;
        if (!two_stream()) {
            fused = cfg_.use_rtm ? f_rtm : f_cvd;
        } else {
            switch (cfg_.fusion) {
                case FusionKind::Asymmetric:
                    fused = fusion_.forward(f_rtm, f_cvd, train, rng);
                    break;
                case FusionKind::Symmetric:
                    fused = fusion_.forward_symmetric(f_rtm, f_cvd, train, rng);
                    break;
                case FusionKind::Concat:
                    fused = concat_proj_.forward(concat_lastdim(f_rtm, f_cvd));
                    break;
            }
        }

        auto h = head_ln_.forward(fused);
        if (train && cfg_.head_dropout > 0.0) h = dropout(h, cfg_.head_dropout, rng);
        out.main = head_.forward(h);
        if (two_stream() && cfg_.aux_heads) {
            out.aux_rtm = aux_rtm_.forward(f_rtm);
            out.aux_cvd = aux_cvd_.forward(f_cvd);
            out.has_aux = true;
        }
        return out;
    }

    std::vector<ParamRef<S>> params() {
        std::vector<ParamRef<S>> out;
        if (casa_rtm_) casa_rtm_->collect("casa_rtm", out);
        if (casa_cvd_) casa_cvd_->collect("casa_cvd", out);
        if (cfg_.use_rtm) {
            enc_rtm_.collect("enc_rtm", out);
            proj_rtm_.collect("proj_rtm", out);
        }
        if (cfg_.use_cvd) {
            enc_cvd_.collect("enc_cvd", out);
            proj_cvd_.collect("proj_cvd", out);
        }
        if (two_stream() && cfg_.fusion != FusionKind::Concat) fusion_.collect("fusion", out);
        if (two_stream() && cfg_.fusion == FusionKind::Concat)
            concat_proj_.collect("fusion.concat", out);
        head_ln_.collect("head.ln", out);
        head_.collect("head.fc", out);
        if (two_stream() && cfg_.aux_heads) {
            aux_rtm_.collect("aux_rtm", out);
            aux_cvd_.collect("aux_cvd", out);
        }
        return out;
    }

    std::vector<BufferRef<S>> buffers() {
        std::vector<BufferRef<S>> out;
        if (casa_rtm_) casa_rtm_->collect_buffers("casa_rtm", out);
        if (casa_cvd_) casa_cvd_->collect_buffers("casa_cvd", out);
        if (cfg_.use_rtm) enc_rtm_.collect_buffers("enc_rtm", out);
        if (cfg_.use_cvd) enc_cvd_.collect_buffers("enc_cvd", out);
        return out;
    }

    void begin_reestimate() {
        if (casa_rtm_) casa_rtm_->begin_reestimate();
        if (casa_cvd_) casa_cvd_->begin_reestimate();
        if (cfg_.use_rtm) enc_rtm_.begin_reestimate();
        if (cfg_.use_cvd) enc_cvd_.begin_reestimate();
    }
    void end_reestimate() {
        if (casa_rtm_) casa_rtm_->end_reestimate();
        if (casa_cvd_) casa_cvd_->end_reestimate();
        if (cfg_.use_rtm) enc_rtm_.end_reestimate();
        if (cfg_.use_cvd) enc_cvd_.end_reestimate();
    }

private:
    ModelConfig cfg_;
    std::unique_ptr<CasaModule<S>> casa_rtm_, casa_cvd_;
    StreamEncoder<S> enc_rtm_, enc_cvd_;
    LinearLayer<S> proj_rtm_, proj_cvd_;
    FusionBlock<S> fusion_;
    LinearLayer<S> concat_proj_;
    LayerNormLayer<S> head_ln_;
    LinearLayer<S> head_;
    LinearLayer<S> aux_rtm_, aux_cvd_;
};

// ---- loss ----------------------------------------------------------------------

// Label-smoothed soft targets from hard labels.
template <class S>
Tensor<S> smooth_labels(const std::vector<std::size_t>& labels, std::size_t num_classes,
                        double eps) {
    std::vector<S> t(labels.size() * num_classes, static_cast<S>(eps / double(num_classes)));
    for (std::size_t b = 0; b < labels.size(); ++b) {
        require(labels[b] < num_classes, "label out of range");
        t[b * num_classes + labels[b]] += static_cast<S>(1.0 - eps);
    }
    return Tensor<S>::from({labels.size(), num_classes}, std::move(t));
}

// Smoothing applied to already-soft targets: t' = (1-eps) t + eps/C.
template <class S>
Tensor<S> smooth_soft_targets(const Tensor<S>& targets, double eps) {
    const std::size_t C = targets.shape().back();
    std::vector<S> t = targets.value();
    for (auto& v : t)
        v = static_cast<S>((1.0 - eps) * double(v) + eps / double(C));
    return Tensor<S>::from(targets.shape(), std::move(t));
}

// Total objective: main CE plus lambda-weighted per-stream auxiliary CEs.
template <class S>
Tensor<S> cast_loss(const typename CastModel<S>::Outputs& out, const Tensor<S>& soft_targets,
                    double lambda_aux) {
    auto loss = cross_entropy_soft(out.main, soft_targets);
    if (out.has_aux && lambda_aux > 0.0) {
        auto aux = add(cross_entropy_soft(out.aux_rtm, soft_targets),
                       cross_entropy_soft(out.aux_cvd, soft_targets));
        loss = add(loss, scale(aux, static_cast<S>(lambda_aux)));
    }
    return loss;
}

}  // namespace cforge
