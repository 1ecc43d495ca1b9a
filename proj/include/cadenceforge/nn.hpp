#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cadenceforge/rng.hpp"
#include "cadenceforge/tensor.hpp"

namespace cforge {

// ---- convolution ------------------------------------------------------------

// x [B, C, H, W], w [O, C, k, k], optional bias [O]; stride 1, same padding
// (odd k). Shift-and-accumulate loops so rows stream contiguously.
template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* bias = nullptr) {
    require(x.rank() == 4 && w.rank() == 4, "conv2d: expect [B,C,H,W] and [O,C,k,k]");
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = w.dim(0), k = w.dim(2);
    require(w.dim(1) == C && w.dim(3) == k && k % 2 == 1, "conv2d: kernel must be odd square");
    if (bias) require(bias->numel() == O, "conv2d: bias shape");
    const std::size_t p = k / 2;

    Tensor<S> out({B, O, H, W});
    const auto& xv = x.value();
    const auto& wv = w.value();
    auto& ov = out.value();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o) {
            S* oplane = &ov[(b * O + o) * H * W];
            if (bias) {
                const S bv = bias->value()[o];
                for (std::size_t i = 0; i < H * W; ++i) oplane[i] = bv;
            }
            for (std::size_t c = 0; c < C; ++c) {
                const S* xplane = &xv[(b * C + c) * H * W];
                for (std::size_t ky = 0; ky < k; ++ky)
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const S wval = wv[((o * C + c) * k + ky) * k + kx];
                        if (wval == S(0)) continue;
                        const std::ptrdiff_t dy = std::ptrdiff_t(ky) - std::ptrdiff_t(p);
                        const std::ptrdiff_t dx = std::ptrdiff_t(kx) - std::ptrdiff_t(p);
                        const std::size_t y_lo = dy < 0 ? std::size_t(-dy) : 0;
                        const std::size_t y_hi = dy > 0 ? H - std::size_t(dy) : H;
                        const std::size_t x_lo = dx < 0 ? std::size_t(-dx) : 0;
                        const std::size_t x_hi = dx > 0 ? W - std::size_t(dx) : W;
                        for (std::size_t y = y_lo; y < y_hi; ++y) {
                            const S* xrow = xplane + (std::ptrdiff_t(y * W) + dy * std::ptrdiff_t(W) + dx);
                            S* orow = oplane + y * W;
                            for (std::size_t xx = x_lo; xx < x_hi; ++xx)
                                orow[xx] += wval * xrow[xx];
                        }
                    }
            }
        }

    auto xn = x.node().get();
    auto wn = w.node().get();
    TensorNode<S>* bn = bias ? bias->node().get() : nullptr;
    std::vector<std::shared_ptr<TensorNode<S>>> parents{x.node(), w.node()};
    if (bias) parents.push_back(bias->node());
    detail::attach<S>(out, parents, [xn, wn, bn, xv, wv, B, C, H, W, O, k, p](TensorNode<S>& self) {
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < O; ++o) {
                const S* gplane = &self.tmp[(b * O + o) * H * W];
                if (bn && bn->requires_grad) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < H * W; ++i) acc += double(gplane[i]);
                    bn->tmp[o] += static_cast<S>(acc);
                }
                for (std::size_t c = 0; c < C; ++c) {
                    const S* xplane = &xv[(b * C + c) * H * W];
                    S* xgplane = xn->requires_grad ? &xn->tmp[(b * C + c) * H * W] : nullptr;
                    for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const std::ptrdiff_t dy = std::ptrdiff_t(ky) - std::ptrdiff_t(p);
                            const std::ptrdiff_t dx = std::ptrdiff_t(kx) - std::ptrdiff_t(p);
                            const std::size_t y_lo = dy < 0 ? std::size_t(-dy) : 0;
                            const std::size_t y_hi = dy > 0 ? H - std::size_t(dy) : H;
                            const std::size_t x_lo = dx < 0 ? std::size_t(-dx) : 0;
                            const std::size_t x_hi = dx > 0 ? W - std::size_t(dx) : W;
                            const std::size_t widx = ((o * C + c) * k + ky) * k + kx;
                            if (xgplane) {
                                const S wval = wv[widx];
                                for (std::size_t y = y_lo; y < y_hi; ++y) {
                                    S* xgrow = xgplane + (std::ptrdiff_t(y * W) +
                                                          dy * std::ptrdiff_t(W) + dx);
                                    const S* grow = gplane + y * W;
                                    for (std::size_t xx = x_lo; xx < x_hi; ++xx)
                                        xgrow[xx] += wval * grow[xx];
                                }
                            }
                            if (wn->requires_grad) {
                                double acc = 0.0;
                                for (std::size_t y = y_lo; y < y_hi; ++y) {
                                    const S* xrow = xplane + (std::ptrdiff_t(y * W) +
                                                              dy * std::ptrdiff_t(W) + dx);
                                    const S* grow = gplane + y * W;
                                    for (std::size_t xx = x_lo; xx < x_hi; ++xx)
                                        acc += double(grow[xx]) * double(xrow[xx]);
                                }
                                wn->tmp[widx] += static_cast<S>(acc);
                            }
                        }
                }
            }
    });
    return out;
}

// 2x2 average pool, stride 2 (floor on odd sizes).
template <class S>
Tensor<S> avg_pool2d(const Tensor<S>& x) {
    require(x.rank() == 4, "avg_pool2d: expect [B,C,H,W]");
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Ho = H / 2, Wo = W / 2;
    require(Ho >= 1 && Wo >= 1, "avg_pool2d: input too small");
    Tensor<S> out({B, C, Ho, Wo});
    const auto& xv = x.value();
    auto& ov = out.value();
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const S* xp = &xv[bc * H * W];
        S* op = &ov[bc * Ho * Wo];
        for (std::size_t y = 0; y < Ho; ++y)
            for (std::size_t xx = 0; xx < Wo; ++xx)
                op[y * Wo + xx] =
                    (xp[(2 * y) * W + 2 * xx] + xp[(2 * y) * W + 2 * xx + 1] +
                     xp[(2 * y + 1) * W + 2 * xx] + xp[(2 * y + 1) * W + 2 * xx + 1]) /
                    S(4);
    }
    auto xn = x.node().get();
    detail::attach<S>(out, {x.node()}, [xn, B, C, H, W, Ho, Wo](TensorNode<S>& self) {
        for (std::size_t bc = 0; bc < B * C; ++bc) {
            S* xg = &xn->tmp[bc * H * W];
            const S* g = &self.tmp[bc * Ho * Wo];
            for (std::size_t y = 0; y < Ho; ++y)
                for (std::size_t xx = 0; xx < Wo; ++xx) {
                    const S q = g[y * Wo + xx] / S(4);
                    xg[(2 * y) * W + 2 * xx] += q;
                    xg[(2 * y) * W + 2 * xx + 1] += q;
                    xg[(2 * y + 1) * W + 2 * xx] += q;
                    xg[(2 * y + 1) * W + 2 * xx + 1] += q;
                }
        }
    });
    return out;
}

template <class S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
    require(x.rank() == 4, "global_avg_pool: expect [B,C,H,W]");
    const std::size_t B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
    Tensor<S> out({B, C});
    const auto& xv = x.value();
    auto& ov = out.value();
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        double acc = 0.0;
        for (std::size_t i = 0; i < P; ++i) acc += double(xv[bc * P + i]);
        ov[bc] = static_cast<S>(acc / double(P));
    }
    auto xn = x.node().get();
    detail::attach<S>(out, {x.node()}, [xn, B, C, P](TensorNode<S>& self) {
        for (std::size_t bc = 0; bc < B * C; ++bc) {
            const S q = self.tmp[bc] / static_cast<S>(P);
            S* xg = &xn->tmp[bc * P];
            for (std::size_t i = 0; i < P; ++i) xg[i] += q;
        }
    });
    return out;
}

// ---- batch norm --------------------------------------------------------------

// Training-mode batch norm over (B, H, W) per channel; biased variance.
// Batch statistics are returned through the out-params for running updates.
template <class S>
Tensor<S> batch_norm_train(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                           std::vector<S>& batch_mean, std::vector<S>& batch_var,
                           double eps = 1e-5) {
    require(x.rank() == 4, "batch_norm: expect [B,C,H,W]");
    const std::size_t B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
    require(gamma.numel() == C && beta.numel() == C, "batch_norm: affine shape");
    const double N = double(B * P);
    batch_mean.assign(C, S(0));
    batch_var.assign(C, S(0));
    const auto& xv = x.value();
    for (std::size_t c = 0; c < C; ++c) {
        double m = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            const S* xp = &xv[(b * C + c) * P];
            for (std::size_t i = 0; i < P; ++i) m += double(xp[i]);
        }
        m /= N;
        double v = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            const S* xp = &xv[(b * C + c) * P];
            for (std::size_t i = 0; i < P; ++i) {
                const double d = double(xp[i]) - m;
                v += d * d;
            }
        }
        batch_mean[c] = static_cast<S>(m);
        batch_var[c] = static_cast<S>(v / N);
    }

    Tensor<S> out(x.shape());
    auto& ov = out.value();
    std::vector<S> xhat(xv.size());
    std::vector<S> istd(C);
    for (std::size_t c = 0; c < C; ++c)
        istd[c] = static_cast<S>(1.0 / std::sqrt(double(batch_var[c]) + eps));
    const auto& gv = gamma.value();
    const auto& bv = beta.value();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const S* xp = &xv[(b * C + c) * P];
            S* op = &ov[(b * C + c) * P];
            S* xh = &xhat[(b * C + c) * P];
            for (std::size_t i = 0; i < P; ++i) {
                xh[i] = (xp[i] - batch_mean[c]) * istd[c];
                op[i] = gv[c] * xh[i] + bv[c];
            }
        }

    auto xn = x.node().get();
    auto gn = gamma.node().get();
    auto bn = beta.node().get();
    detail::attach<S>(out, {x.node(), gamma.node(), beta.node()},
                      [xn, gn, bn, gv, xhat = std::move(xhat), istd = std::move(istd), B, C, P,
                       N](TensorNode<S>& self) {
        for (std::size_t c = 0; c < C; ++c) {
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const S* g = &self.tmp[(b * C + c) * P];
                const S* xh = &xhat[(b * C + c) * P];
                for (std::size_t i = 0; i < P; ++i) {
                    sum_g += double(g[i]);
                    sum_gx += double(g[i]) * double(xh[i]);
                }
            }
            if (gn->requires_grad) gn->tmp[c] += static_cast<S>(sum_gx);
            if (bn->requires_grad) bn->tmp[c] += static_cast<S>(sum_g);
            if (xn->requires_grad) {
                const double k = double(gv[c]) * double(istd[c]);
                for (std::size_t b = 0; b < B; ++b) {
                    const S* g = &self.tmp[(b * C + c) * P];
                    const S* xh = &xhat[(b * C + c) * P];
                    S* xg = &xn->tmp[(b * C + c) * P];
                    for (std::size_t i = 0; i < P; ++i)
                        xg[i] += static_cast<S>(
                            k * (double(g[i]) - sum_g / N - double(xh[i]) * sum_gx / N));
                }
            }
        }
    });
    return out;
}

// Eval-mode batch norm with fixed statistics.
template <class S>
Tensor<S> batch_norm_eval(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                          const std::vector<S>& mean, const std::vector<S>& var,
                          double eps = 1e-5) {
    require(x.rank() == 4, "batch_norm: expect [B,C,H,W]");
    const std::size_t B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
    require(mean.size() == C && var.size() == C, "batch_norm: stats shape");
    Tensor<S> out(x.shape());
    const auto& xv = x.value();
    const auto& gv = gamma.value();
    const auto& bv = beta.value();
    auto& ov = out.value();
    std::vector<S> istd(C);
    for (std::size_t c = 0; c < C; ++c)
        istd[c] = static_cast<S>(1.0 / std::sqrt(double(var[c]) + eps));
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const S* xp = &xv[(b * C + c) * P];
            S* op = &ov[(b * C + c) * P];
            const S k = gv[c] * istd[c];
            const S off = bv[c] - gv[c] * mean[c] * istd[c];
            for (std::size_t i = 0; i < P; ++i) op[i] = k * xp[i] + off;
        }
    auto xn = x.node().get();
    auto gn = gamma.node().get();
    auto bn = beta.node().get();
    detail::attach<S>(out, {x.node(), gamma.node(), beta.node()},
                      [xn, gn, bn, xv, gv, mean, istd = std::move(istd), B, C, P](TensorNode<S>& self) {
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t b = 0; b < B; ++b) {
                const S* g = &self.tmp[(b * C + c) * P];
                const S* xp = &xv[(b * C + c) * P];
                if (xn->requires_grad) {
                    S* xg = &xn->tmp[(b * C + c) * P];
                    const S k = gv[c] * istd[c];
                    for (std::size_t i = 0; i < P; ++i) xg[i] += g[i] * k;
                }
                if (gn->requires_grad) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < P; ++i)
                        acc += double(g[i]) * (double(xp[i]) - double(mean[c])) * double(istd[c]);
                    gn->tmp[c] += static_cast<S>(acc);
                }
                if (bn->requires_grad) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < P; ++i) acc += double(g[i]);
                    bn->tmp[c] += static_cast<S>(acc);
                }
            }
        }
    });
    return out;
}

// ---- parameter bookkeeping ----------------------------------------------------

template <class S>
struct ParamRef {
    std::string name;
    Tensor<S> tensor;
    bool decay = true;  // weight decay applies (off for biases and norm affines)
};

// Non-trainable state that still belongs in checkpoints (BN running stats).
template <class S>
struct BufferRef {
    std::string name;
    std::vector<S>* data = nullptr;
};

// ---- modules -------------------------------------------------------------------

template <class S>
class LinearLayer {
public:
    LinearLayer() = default;
    LinearLayer(std::size_t in, std::size_t out, Rng rng, bool bias = true)
        : w_(Tensor<S>({out, in}, S(0), true)), has_bias_(bias) {
        const double bound = std::sqrt(6.0 / double(in + out));
        for (auto& v : w_.value()) v = static_cast<S>(rng.uniform(-bound, bound));
        if (bias) b_ = Tensor<S>({out}, S(0), true);
    }

    Tensor<S> forward(const Tensor<S>& x) const {
        return linear(x, w_, has_bias_ ? &b_ : nullptr);
    }

    void collect(const std::string& prefix, std::vector<ParamRef<S>>& out) {
        out.push_back({prefix + ".weight", w_, true});
        if (has_bias_) out.push_back({prefix + ".bias", b_, false});
    }

    Tensor<S>& weight() { return w_; }
    Tensor<S>& bias() { return b_; }

private:
    Tensor<S> w_;
    Tensor<S> b_;
    bool has_bias_ = false;
};

template <class S>
class Conv2dLayer {
public:
    Conv2dLayer() = default;
    Conv2dLayer(std::size_t in_ch, std::size_t out_ch, std::size_t k, Rng rng)
        : w_(Tensor<S>({out_ch, in_ch, k, k}, S(0), true)), b_(Tensor<S>({out_ch}, S(0), true)) {
        const double fan_in = double(in_ch * k * k);
        const double bound = std::sqrt(6.0 / fan_in);  // He-uniform
        for (auto& v : w_.value()) v = static_cast<S>(rng.uniform(-bound, bound));
    }

    Tensor<S> forward(const Tensor<S>& x) const { return conv2d(x, w_, &b_); }

    void collect(const std::string& prefix, std::vector<ParamRef<S>>& out) {
        out.push_back({prefix + ".weight", w_, true});
        out.push_back({prefix + ".bias", b_, false});
    }

private:
    Tensor<S> w_;
    Tensor<S> b_;
};

template <class S>
class BatchNorm2dLayer {
public:
    BatchNorm2dLayer() = default;
    explicit BatchNorm2dLayer(std::size_t channels, double momentum = 0.1, double eps = 1e-5)
        : gamma_(Tensor<S>({channels}, S(1), true)),
          beta_(Tensor<S>({channels}, S(0), true)),
          running_mean_(channels, S(0)),
          running_var_(channels, S(1)),
          momentum_(momentum),
          eps_(eps) {}

    Tensor<S> forward(const Tensor<S>& x, bool train) {
        if (!train) return batch_norm_eval(x, gamma_, beta_, running_mean_, running_var_, eps_);
        std::vector<S> m, v;
        auto y = batch_norm_train(x, gamma_, beta_, m, v, eps_);
        if (reestimating_) {
            // cumulative average across all batches seen since reset
            ++reest_batches_;
            const double w = 1.0 / double(reest_batches_);
            for (std::size_t c = 0; c < m.size(); ++c) {
                running_mean_[c] += static_cast<S>(w * (double(m[c]) - double(running_mean_[c])));
                running_var_[c] += static_cast<S>(w * (double(v[c]) - double(running_var_[c])));
            }
        } else {
            for (std::size_t c = 0; c < m.size(); ++c) {
                running_mean_[c] = static_cast<S>((1.0 - momentum_) * double(running_mean_[c]) +
                                                  momentum_ * double(m[c]));
                running_var_[c] = static_cast<S>((1.0 - momentum_) * double(running_var_[c]) +
                                                 momentum_ * double(v[c]));
            }
        }
        return y;
    }

    // Switch to cumulative-average stat collection (used after weight
    // averaging, when the running stats no longer match the weights).
    void begin_reestimate() {
        reestimating_ = true;
        reest_batches_ = 0;
        std::fill(running_mean_.begin(), running_mean_.end(), S(0));
        std::fill(running_var_.begin(), running_var_.end(), S(1));
    }
    void end_reestimate() { reestimating_ = false; }

    void collect(const std::string& prefix, std::vector<ParamRef<S>>& out) {
        out.push_back({prefix + ".gamma", gamma_, false});
        out.push_back({prefix + ".beta", beta_, false});
    }
    void collect_buffers(const std::string& prefix, std::vector<BufferRef<S>>& out) {
        out.push_back({prefix + ".running_mean", &running_mean_});
        out.push_back({prefix + ".running_var", &running_var_});
    }

    const std::vector<S>& running_mean() const { return running_mean_; }
    const std::vector<S>& running_var() const { return running_var_; }

private:
    Tensor<S> gamma_, beta_;
    std::vector<S> running_mean_, running_var_;
    double momentum_ = 0.1, eps_ = 1e-5;
    bool reestimating_ = false;
    std::size_t reest_batches_ = 0;
};

template <class S>
class LayerNormLayer {
public:
    LayerNormLayer() = default;
    explicit LayerNormLayer(std::size_t dim, double eps = 1e-5)
        : gamma_(Tensor<S>({dim}, S(1), true)), beta_(Tensor<S>({dim}, S(0), true)), eps_(eps) {}

    Tensor<S> forward(const Tensor<S>& x) const {
        return layer_norm_lastdim(x, gamma_, beta_, eps_);
    }

    void collect(const std::string& prefix, std::vector<ParamRef<S>>& out) {
        out.push_back({prefix + ".gamma", gamma_, false});
        out.push_back({prefix + ".beta", beta_, false});
    }

private:
    Tensor<S> gamma_, beta_;
    double eps_ = 1e-5;
};

// Standard scaled dot-product multi-head attention with a final projection.
// Query and key/value sequences may differ in length; embed dims must match.
template <class S>
class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(std::size_t dim, std::size_t heads, double attn_dropout, Rng rng)
        : wq_(dim, dim, rng.fork(1)),
          wk_(dim, dim, rng.fork(2)),
          wv_(dim, dim, rng.fork(3)),
          wo_(dim, dim, rng.fork(4)),
          heads_(heads),
          dropout_(attn_dropout) {
        require(dim % heads == 0, "attention dim must divide by head count");
    }

    // q [B, Nq, D], kv [B, Nk, D] -> [B, Nq, D]
    Tensor<S> forward(const Tensor<S>& q, const Tensor<S>& kv, bool train, Rng& rng) const {
        const std::size_t D = q.shape().back();
        auto qh = split_heads(wq_.forward(q), heads_);
        auto kh = split_heads(wk_.forward(kv), heads_);
        auto vh = split_heads(wv_.forward(kv), heads_);
        const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(double(D / heads_)));
        auto scores = scale(bmm_nt(qh, kh), inv_sqrt);
        auto attn = softmax_lastdim(scores);
        if (train && dropout_ > 0.0) attn = dropout(attn, dropout_, rng);
        auto ctx = merge_heads(bmm_nn(attn, vh), heads_);
        return wo_.forward(ctx);
    }

    void collect(const std::string& prefix, std::vector<ParamRef<S>>& out) {
        wq_.collect(prefix + ".wq", out);
        wk_.collect(prefix + ".wk", out);
        wv_.collect(prefix + ".wv", out);
        wo_.collect(prefix + ".wo", out);
    }

private:
    LinearLayer<S> wq_, wk_, wv_, wo_;
    std::size_t heads_ = 1;
    double dropout_ = 0.0;
};

template <class S>
std::size_t total_params(const std::vector<ParamRef<S>>& params, const std::string& prefix = "") {
    std::size_t n = 0;
    for (const auto& p : params)
        if (prefix.empty() || p.name.rfind(prefix, 0) == 0) n += p.tensor.numel();
    return n;
}

}  // namespace cforge
