#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cadenceforge/config_json.hpp"
#include "cadenceforge/eval.hpp"
#include "cadenceforge/model.hpp"
#include "cadenceforge/pipeline.hpp"

namespace cforge {

struct TrainConfig {
    std::size_t epochs = 70;
    std::size_t batch_size = 48;
    double lr = 3e-4;
    double min_lr_frac = 0.01;         // cosine floor, as a fraction of lr
    std::size_t warmup_epochs = 5;
    double weight_decay = 0.05;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    double grad_clip = 1.0;            // global-norm ceiling
    double label_smoothing = 0.1;
    double lambda_aux = 0.3;
    bool use_ema = true;
    bool use_swa = true;
    double ema_decay = 0.9995;
    double swa_start_frac = 0.8;       // first SWA epoch = floor(frac * epochs)
    std::size_t ensemble_top_k = 5;
    std::size_t mix_off_final_epochs = 3;
    std::uint64_t seed = 42;
    std::size_t threads = 1;           // sample preparation only

    void validate() const {
        require(epochs >= 1, "epochs must be >= 1");
        require(warmup_epochs < epochs, "warmup must be shorter than the run");
        require(batch_size >= 2, "batch statistics need >= 2 samples per batch");
        require(lr > 0.0, "lr must be positive");
        require(min_lr_frac > 0.0 && min_lr_frac <= 1.0, "min_lr_frac must be in (0, 1]");
        require(weight_decay >= 0.0, "weight decay must be >= 0");
        require(grad_clip > 0.0, "grad_clip must be positive");
        require(label_smoothing >= 0.0 && label_smoothing < 1.0,
                "label smoothing must be in [0, 1)");
        require(lambda_aux >= 0.0, "lambda_aux must be >= 0");
        require(ema_decay >= 0.0 && ema_decay < 1.0, "ema decay must be in [0, 1)");
        require(swa_start_frac > 0.0 && swa_start_frac <= 1.0,
                "swa_start_frac must be in (0, 1]");
        require(ensemble_top_k >= 1, "ensemble_top_k must be >= 1");
        require(threads >= 1, "threads must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"lr", c.lr},
         {"min_lr_frac", c.min_lr_frac},
         {"warmup_epochs", c.warmup_epochs},
         {"weight_decay", c.weight_decay},
         {"beta1", c.beta1},
         {"beta2", c.beta2},
         {"adam_eps", c.adam_eps},
         {"grad_clip", c.grad_clip},
         {"label_smoothing", c.label_smoothing},
         {"lambda_aux", c.lambda_aux},
         {"use_ema", c.use_ema},
         {"use_swa", c.use_swa},
         {"ema_decay", c.ema_decay},
         {"swa_start_frac", c.swa_start_frac},
         {"ensemble_top_k", c.ensemble_top_k},
         {"mix_off_final_epochs", c.mix_off_final_epochs},
         {"seed", c.seed},
         {"threads", c.threads}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.lr = j.at("lr").get<double>();
    c.min_lr_frac = j.at("min_lr_frac").get<double>();
    c.warmup_epochs = j.at("warmup_epochs").get<std::size_t>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
    c.grad_clip = j.at("grad_clip").get<double>();
    c.label_smoothing = j.at("label_smoothing").get<double>();
    c.lambda_aux = j.at("lambda_aux").get<double>();
    c.use_ema = j.at("use_ema").get<bool>();
    c.use_swa = j.at("use_swa").get<bool>();
    c.ema_decay = j.at("ema_decay").get<double>();
    c.swa_start_frac = j.at("swa_start_frac").get<double>();
    c.ensemble_top_k = j.at("ensemble_top_k").get<std::size_t>();
    c.mix_off_final_epochs = j.at("mix_off_final_epochs").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.threads = j.at("threads").get<std::size_t>();
}

// Linear ramp over the warmup steps, then a half cosine that lands exactly on
// min_lr_frac * lr at the final step.
inline double lr_at_step(const TrainConfig& cfg, std::size_t step, std::size_t steps_per_epoch) {
    require(steps_per_epoch >= 1, "steps_per_epoch must be >= 1");
    const std::size_t total = cfg.epochs * steps_per_epoch;
    require(step < total, "step index past the end of the schedule");
    const std::size_t warm = cfg.warmup_epochs * steps_per_epoch;
    if (step < warm) return cfg.lr * double(step + 1) / double(warm);
    const double lo = cfg.min_lr_frac * cfg.lr;
    if (total <= warm + 1) return cfg.lr;  // no room for a decay phase
    const double u = double(step - warm) / double(total - 1 - warm);
    return lo + (cfg.lr - lo) * 0.5 * (1.0 + std::cos(M_PI * u));
}

// ---- optimizer -----------------------------------------------------------------

// AdamW with decoupled weight decay; decay only touches params that opt in.
// Moments are kept in double regardless of the model's scalar type.
template <class S = float>
class AdamW {
public:
    AdamW(const std::vector<ParamRef<S>>& params, const TrainConfig& cfg) : cfg_(cfg) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const auto& p : params) {
            m_.emplace_back(p.tensor.numel(), 0.0);
            v_.emplace_back(p.tensor.numel(), 0.0);
        }
    }

    void step(std::vector<ParamRef<S>>& params, double lr) {
        require(params.size() == m_.size(), "optimizer/param set mismatch");
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& val = params[i].tensor.value();
            const auto& g = params[i].tensor.grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < val.size(); ++j) {
                const double gj = double(g[j]);
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
                double upd = lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.adam_eps);
                if (params[i].decay) upd += lr * cfg_.weight_decay * double(val[j]);
                val[j] = static_cast<S>(double(val[j]) - upd);
            }
        }
    }

    std::size_t steps_taken() const { return t_; }

private:
    TrainConfig cfg_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
template <class S>
inline double clip_grad_norm(std::vector<ParamRef<S>>& params, double max_norm) {
    double ss = 0.0;
    for (auto& p : params)
        for (S g : p.tensor.grad()) ss += double(g) * double(g);
    const double norm = std::sqrt(ss);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (auto& p : params)
            for (S& g : p.tensor.grad()) g = static_cast<S>(double(g) * scale);
    }
    return norm;
}

// ---- weight bookkeeping ----------------------------------------------------------

template <class S>
using WeightSet = std::vector<std::vector<S>>;

template <class S>
inline WeightSet<S> snapshot_params(const std::vector<ParamRef<S>>& params) {
    WeightSet<S> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p.tensor.value());
    return out;
}

template <class S>
inline void restore_params(std::vector<ParamRef<S>>& params, const WeightSet<S>& w) {
    require(w.size() == params.size(), "weight set size mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        require(w[i].size() == params[i].tensor.numel(), "weight shape mismatch");
        params[i].tensor.value() = w[i];
    }
}

template <class S>
inline WeightSet<S> snapshot_buffers(const std::vector<BufferRef<S>>& bufs) {
    WeightSet<S> out;
    out.reserve(bufs.size());
    for (const auto& b : bufs) out.push_back(*b.data);
    return out;
}

template <class S>
inline void restore_buffers(std::vector<BufferRef<S>>& bufs, const WeightSet<S>& w) {
    require(w.size() == bufs.size(), "buffer set size mismatch");
    for (std::size_t i = 0; i < bufs.size(); ++i) {
        require(w[i].size() == bufs[i].data->size(), "buffer shape mismatch");
        *bufs[i].data = w[i];
    }
}

// Exponential moving average of the weights, seeded at the initial values.
template <class S = float>
class EmaTracker {
public:
    EmaTracker(const std::vector<ParamRef<S>>& params, double decay)
        : decay_(decay), shadow_(snapshot_params(params)) {}

    void update(const std::vector<ParamRef<S>>& params) {
        require(params.size() == shadow_.size(), "ema/param set mismatch");
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& val = params[i].tensor.value();
            auto& s = shadow_[i];
            for (std::size_t j = 0; j < s.size(); ++j)
                s[j] = static_cast<S>(decay_ * double(s[j]) + (1.0 - decay_) * double(val[j]));
        }
    }

    const WeightSet<S>& weights() const { return shadow_; }

private:
    double decay_;
    WeightSet<S> shadow_;
};

// Running (equal-weight) average of epoch-end weights.
template <class S = float>
class SwaTracker {
public:
    void accumulate(const std::vector<ParamRef<S>>& params) {
        ++n_;
        if (avg_.empty()) {
            avg_.reserve(params.size());
            for (const auto& p : params) {
                const auto& v = p.tensor.value();
                avg_.emplace_back(v.begin(), v.end());
            }
            return;
        }
        require(avg_.size() == params.size(), "swa/param set mismatch");
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& val = params[i].tensor.value();
            for (std::size_t j = 0; j < avg_[i].size(); ++j)
                avg_[i][j] += (double(val[j]) - avg_[i][j]) / double(n_);
        }
    }

    bool has_average() const { return n_ > 0; }
    std::size_t count() const { return n_; }

    WeightSet<S> weights() const {
        require(n_ > 0, "swa average requested before any accumulation");
        WeightSet<S> out(avg_.size());
        for (std::size_t i = 0; i < avg_.size(); ++i)
            out[i].assign(avg_[i].begin(), avg_[i].end());
        return out;
    }

private:
    std::size_t n_ = 0;
    std::vector<std::vector<double>> avg_;  // double accumulators
};

// Keeps the k best epoch snapshots by validation accuracy; ties go to the
// later epoch. Buffers are captured alongside weights so each snapshot is a
// complete, immediately usable model state.
template <class S = float>
class TopKTracker {
public:
    struct Entry {
        double val_acc = 0.0;
        std::size_t epoch = 0;
        WeightSet<S> weights, buffers;
    };

    explicit TopKTracker(std::size_t k) : k_(k) { require(k >= 1, "top-k needs k >= 1"); }

    void offer(double val_acc, std::size_t epoch, const std::vector<ParamRef<S>>& params,
               const std::vector<BufferRef<S>>& bufs) {
        Entry e{val_acc, epoch, snapshot_params(params), snapshot_buffers(bufs)};
        entries_.push_back(std::move(e));
        std::sort(entries_.begin(), entries_.end(), [](const Entry& a, const Entry& b) {
            if (a.val_acc != b.val_acc) return a.val_acc > b.val_acc;
            return a.epoch > b.epoch;
        });
        if (entries_.size() > k_) entries_.resize(k_);
    }

    const std::vector<Entry>& entries() const { return entries_; }

private:
    std::size_t k_;
    std::vector<Entry> entries_;
};

// ---- trainer -----------------------------------------------------------------

struct EpochStats {
    std::size_t epoch = 0;
    double lr_last = 0.0;
    double train_loss = 0.0;      // mean over batches
    double grad_norm_mean = 0.0;  // pre-clip
    double val_acc = 0.0;
    std::size_t mixup_batches = 0;
    std::size_t cutmix_batches = 0;
    std::size_t antenna_drops = 0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    double best_val_acc = 0.0;
    std::size_t best_epoch = 0;
    double final_val_acc = 0.0;
    double ema_val_acc = 0.0;   // only set when checkpoints are written
    double swa_val_acc = 0.0;
    std::vector<std::string> ensemble_checkpoints;
    std::string final_checkpoint;
};

inline void to_json(nlohmann::json& j, const EpochStats& e) {
    j = {{"epoch", e.epoch},
         {"lr_last", e.lr_last},
         {"train_loss", e.train_loss},
         {"grad_norm_mean", e.grad_norm_mean},
         {"val_acc", e.val_acc},
         {"mixup_batches", e.mixup_batches},
         {"cutmix_batches", e.cutmix_batches},
         {"antenna_drops", e.antenna_drops}};
}

// Recomputes BatchNorm running statistics with a cumulative-average pass over
// the given inputs. Needed after any weight averaging: the stats gathered
// during training describe weights the averaged model no longer has.
inline void reestimate_bn(CastModel<float>& model, const std::vector<StreamPair>& streams,
                          std::size_t batch_size, std::uint64_t seed) {
    const std::size_t s = model.config().spatial;
    const std::size_t plane = 3 * s * s;
    model.begin_reestimate();
    NoGradGuard guard;
    Rng rng(seed);
    for (std::size_t start = 0; start < streams.size(); start += batch_size) {
        const std::size_t b = std::min(batch_size, streams.size() - start);
        if (b < 2) break;  // a single sample has no batch variance
        std::vector<float> xr(b * plane), xc(b * plane);
        for (std::size_t i = 0; i < b; ++i) {
            std::copy(streams[start + i].rtm_in.begin(), streams[start + i].rtm_in.end(),
                      xr.begin() + std::ptrdiff_t(i * plane));
            std::copy(streams[start + i].cvd_in.begin(), streams[start + i].cvd_in.end(),
                      xc.begin() + std::ptrdiff_t(i * plane));
        }
        auto tr = Tensor<float>::from({b, 3, s, s}, std::move(xr));
        auto tc = Tensor<float>::from({b, 3, s, s}, std::move(xc));
        (void)model.forward(tr, tc, /*train=*/true, rng);
    }
    model.end_reestimate();
}

class Trainer {
public:
    Trainer(CastModel<float>& model, TrainConfig tcfg, AugmentConfig acfg, PipelineConfig pcfg)
        : model_(model),
          tcfg_(std::move(tcfg)),
          acfg_(std::move(acfg)),
          pcfg_(std::move(pcfg)),
          params_(model.params()),
          buffers_(model.buffers()) {
        tcfg_.validate();
        acfg_.validate();
        pcfg_.validate();
    }

    // Trains in place. When out_dir is non-empty, writes final.ckpt and
    // metrics.json there plus an ensemble under out_dir/checkpoints:
    // top1..topK (best epochs), ema, swa.
    TrainResult fit(const LoadedDataset& data, const std::string& out_dir = "") {
        require(!data.train.empty() && !data.val.empty(), "need both train and val samples");
        require(data.num_classes == model_.config().num_classes,
                "dataset class count does not match the model");
        const std::size_t n = data.train.size();
        require(n >= 2, "need at least 2 training samples");

        const std::size_t spatial = model_.config().spatial;
        const std::size_t num_classes = model_.config().num_classes;
        const std::size_t plane = 3 * spatial * spatial;
        const bool physics_on = acfg_.temporal_warp || acfg_.magnitude_warp || acfg_.multipath;
        const bool input_on = acfg_.antenna_dropout || acfg_.spec_augment;

        // Validation streams never change; clean train streams serve the
        // no-physics-augmentation path and BN re-estimation.
        const PreparedSet val_set = prepare_set(data.val, pcfg_, tcfg_.threads);
        PreparedSet clean_train = prepare_set(data.train, pcfg_, tcfg_.threads);

        AdamW<float> opt(params_, tcfg_);
        EmaTracker<float> ema(params_, tcfg_.ema_decay);
        SwaTracker<float> swa;
        TopKTracker<float> topk(tcfg_.ensemble_top_k);
        const std::size_t swa_start =
            std::min(tcfg_.epochs - 1,
                     std::size_t(std::floor(tcfg_.swa_start_frac * double(tcfg_.epochs))));

        const std::size_t full = n / tcfg_.batch_size;
        const std::size_t rem = n % tcfg_.batch_size;
        const std::size_t steps_per_epoch = full + (rem >= 2 ? 1 : 0);
        require(steps_per_epoch >= 1, "batch size larger than the training set");

        const Rng root(tcfg_.seed);
        TrainResult res;
        std::size_t global_step = 0;

        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);

        for (std::size_t epoch = 0; epoch < tcfg_.epochs; ++epoch) {
            Rng shuffle_rng = root.fork(Rng::combine(0xe90c, epoch));
            for (std::size_t i = n; i > 1; --i) {
                const auto j =
                    static_cast<std::size_t>(shuffle_rng.uniform_int(0, std::int64_t(i) - 1));
                std::swap(order[i - 1], order[j]);
            }

            EpochStats st;
            st.epoch = epoch;
            const bool allow_mix = (acfg_.mixup || acfg_.cutmix) &&
                                   epoch + tcfg_.mix_off_final_epochs < tcfg_.epochs;

            for (std::size_t b = 0; b < steps_per_epoch; ++b) {
                const std::size_t lo = b * tcfg_.batch_size;
                const std::size_t hi = std::min(lo + tcfg_.batch_size, n);
                const std::size_t bs = hi - lo;

                std::vector<float> xr(bs * plane), xc(bs * plane);
                std::vector<float> tgt(bs * num_classes, 0.0f);
                std::vector<int> drops(bs, -1);
                parallel_for(bs, tcfg_.threads, [&](std::size_t i) {
                    const std::size_t idx = order[lo + i];
                    const auto& sample = data.train[idx];
                    Rng arng = root.fork(Rng::combine(0xa06, epoch * 1000003 + idx));
                    StreamPair sp;
                    if (physics_on)
                        sp = prepare_streams(augment_physics(sample.rtm, acfg_, arng), pcfg_);
                    else
                        sp = clean_train.streams[idx];
                    if (input_on) drops[i] = augment_streams(sp, spatial, acfg_, arng);
                    std::copy(sp.rtm_in.begin(), sp.rtm_in.end(),
                              xr.begin() + std::ptrdiff_t(i * plane));
                    std::copy(sp.cvd_in.begin(), sp.cvd_in.end(),
                              xc.begin() + std::ptrdiff_t(i * plane));
                    tgt[i * num_classes + sample.label] = 1.0f;
                });
                for (int d : drops) st.antenna_drops += d >= 0;

                if (allow_mix) mix_batch(xr, xc, tgt, bs, plane, num_classes, epoch, b, st);

                auto txr = Tensor<float>::from({bs, 3, spatial, spatial}, std::move(xr));
                auto txc = Tensor<float>::from({bs, 3, spatial, spatial}, std::move(xc));
                auto targets = smooth_soft_targets(
                    Tensor<float>::from({bs, num_classes}, std::move(tgt)),
                    tcfg_.label_smoothing);

                Rng frng = root.fork(Rng::combine(0xf0d, epoch * 1000003 + b));
                auto out = model_.forward(txr, txc, /*train=*/true, frng);
                auto loss = cast_loss<float>(out, targets, tcfg_.lambda_aux);
                const double lv = loss.item();
                if (!std::isfinite(lv))
                    throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                             std::to_string(epoch) + ", batch " +
                                             std::to_string(b));

                for (auto& p : params_) p.tensor.zero_grad();
                loss.backward();
                st.grad_norm_mean += clip_grad_norm(params_, tcfg_.grad_clip);
                const double lr = lr_at_step(tcfg_, global_step, steps_per_epoch);
                opt.step(params_, lr);
                if (tcfg_.use_ema) ema.update(params_);
                ++global_step;
                st.train_loss += lv;
                st.lr_last = lr;
            }

            st.train_loss /= double(steps_per_epoch);
            st.grad_norm_mean /= double(steps_per_epoch);
            st.val_acc = accuracy(predict_probs(model_, val_set.streams, tcfg_.batch_size),
                                  val_set.labels, num_classes);
            if (tcfg_.use_swa && epoch >= swa_start) swa.accumulate(params_);
            topk.offer(st.val_acc, epoch, params_, buffers_);
            if (st.val_acc > res.best_val_acc ||
                (st.val_acc == res.best_val_acc && res.history.empty())) {
                res.best_val_acc = st.val_acc;
                res.best_epoch = epoch;
            }
            res.history.push_back(st);
        }

        res.final_val_acc = res.history.back().val_acc;
        if (!out_dir.empty())
            write_outputs(res, data, val_set, clean_train, ema, swa, topk, out_dir);
        return res;
    }

private:
    void mix_batch(std::vector<float>& xr, std::vector<float>& xc, std::vector<float>& tgt,
                   std::size_t bs, std::size_t plane, std::size_t num_classes,
                   std::size_t epoch, std::size_t batch_idx, EpochStats& st) {
        const Rng root(tcfg_.seed);
        Rng mrng = root.fork(Rng::combine(0x313, epoch * 1000003 + batch_idx));
        const bool use_cut =
            acfg_.mixup && acfg_.cutmix ? mrng.bernoulli(0.5) : acfg_.cutmix;
        const std::size_t spatial = model_.config().spatial;

        std::vector<std::size_t> perm(bs);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = bs; i > 1; --i) {
            const auto j = static_cast<std::size_t>(mrng.uniform_int(0, std::int64_t(i) - 1));
            std::swap(perm[i - 1], perm[j]);
        }

        // mix against pre-mix copies so pairs see the originals
        const std::vector<float> xr0 = xr, xc0 = xc, tgt0 = tgt;
        for (std::size_t i = 0; i < bs; ++i) {
            const std::size_t j = perm[i];
            if (j == i) continue;
            std::vector<float> ar(xr.begin() + std::ptrdiff_t(i * plane),
                                  xr.begin() + std::ptrdiff_t((i + 1) * plane));
            std::vector<float> ac(xc.begin() + std::ptrdiff_t(i * plane),
                                  xc.begin() + std::ptrdiff_t((i + 1) * plane));
            const std::vector<float> br(xr0.begin() + std::ptrdiff_t(j * plane),
                                        xr0.begin() + std::ptrdiff_t((j + 1) * plane));
            const std::vector<float> bc(xc0.begin() + std::ptrdiff_t(j * plane),
                                        xc0.begin() + std::ptrdiff_t((j + 1) * plane));
            std::vector<float> ay(tgt.begin() + std::ptrdiff_t(i * num_classes),
                                  tgt.begin() + std::ptrdiff_t((i + 1) * num_classes));
            const std::vector<float> by(tgt0.begin() + std::ptrdiff_t(j * num_classes),
                                        tgt0.begin() + std::ptrdiff_t((j + 1) * num_classes));
            std::vector<float> scratch_y = ay;

            // identical rng clones give both streams the same lambda (and,
            // for cutmix, the same patch)
            Rng prng = mrng.fork(1000 + i);
            Rng prng_rtm = prng, prng_cvd = prng;
            if (use_cut) {
                cutmix(ar, br, 3, spatial, spatial, ay, by, acfg_.cutmix_alpha, prng_rtm);
                cutmix(ac, bc, 3, spatial, spatial, scratch_y, by, acfg_.cutmix_alpha, prng_cvd);
            } else {
                mixup(ar, br, ay, by, acfg_.mixup_alpha, prng_rtm);
                mixup(ac, bc, scratch_y, by, acfg_.mixup_alpha, prng_cvd);
            }
            std::copy(ar.begin(), ar.end(), xr.begin() + std::ptrdiff_t(i * plane));
            std::copy(ac.begin(), ac.end(), xc.begin() + std::ptrdiff_t(i * plane));
            std::copy(ay.begin(), ay.end(), tgt.begin() + std::ptrdiff_t(i * num_classes));
        }
        if (use_cut)
            ++st.cutmix_batches;
        else
            ++st.mixup_batches;
    }

    void write_outputs(TrainResult& res, const LoadedDataset& data, const PreparedSet& val_set,
                       const PreparedSet& clean_train, const EmaTracker<float>& ema,
                       const SwaTracker<float>& swa, const TopKTracker<float>& topk,
                       const std::string& out_dir) {
        namespace fs = std::filesystem;
        const fs::path ens_dir = fs::path(out_dir) / "checkpoints";
        fs::create_directories(ens_dir);
        const std::size_t num_classes = model_.config().num_classes;

        nlohmann::json base;
        base["model"] = model_.config();
        base["pipeline"] = pcfg_;
        base["num_train"] = data.train.size();
        base["num_val"] = data.val.size();

        const WeightSet<float> final_w = snapshot_params(params_);
        const WeightSet<float> final_b = snapshot_buffers(buffers_);

        const auto save_named = [&](const fs::path& path, nlohmann::json meta) {
            meta.update(base);
            save_checkpoint<float>(path.string(), params_, buffers_, meta);
            return path.string();
        };

        // best epochs, with the buffers they had then
        std::size_t rank = 1;
        for (const auto& e : topk.entries()) {
            restore_params(params_, e.weights);
            restore_buffers(buffers_, e.buffers);
            res.ensemble_checkpoints.push_back(
                save_named(ens_dir / ("top" + std::to_string(rank) + ".ckpt"),
                           {{"kind", "top" + std::to_string(rank)},
                            {"epoch", e.epoch},
                            {"val_acc", e.val_acc}}));
            ++rank;
        }

        // averaged weights need fresh normalisation statistics
        if (tcfg_.use_ema) {
            restore_params(params_, ema.weights());
            reestimate_bn(model_, clean_train.streams, tcfg_.batch_size, tcfg_.seed);
            res.ema_val_acc = accuracy(predict_probs(model_, val_set.streams, tcfg_.batch_size),
                                       val_set.labels, num_classes);
            res.ensemble_checkpoints.push_back(save_named(
                ens_dir / "ema.ckpt", {{"kind", "ema"}, {"val_acc", res.ema_val_acc}}));
        }

        if (swa.has_average()) {
            restore_params(params_, swa.weights());
            reestimate_bn(model_, clean_train.streams, tcfg_.batch_size, tcfg_.seed);
            res.swa_val_acc = accuracy(predict_probs(model_, val_set.streams, tcfg_.batch_size),
                                       val_set.labels, num_classes);
            res.ensemble_checkpoints.push_back(
                save_named(ens_dir / "swa.ckpt", {{"kind", "swa"},
                                                  {"epochs_averaged", swa.count()},
                                                  {"val_acc", res.swa_val_acc}}));
        }

        restore_params(params_, final_w);
        restore_buffers(buffers_, final_b);
        res.final_checkpoint =
            save_named(fs::path(out_dir) / "final.ckpt",
                       {{"kind", "final"}, {"val_acc", res.final_val_acc}});

        nlohmann::json metrics;
        metrics["train"] = tcfg_;
        metrics["augment"] = acfg_;
        metrics["history"] = res.history;
        metrics["best_val_acc"] = res.best_val_acc;
        metrics["best_epoch"] = res.best_epoch;
        metrics["final_val_acc"] = res.final_val_acc;
        metrics["ema_val_acc"] = res.ema_val_acc;
        metrics["swa_val_acc"] = res.swa_val_acc;
        std::ofstream os(fs::path(out_dir) / "metrics.json");
        require(bool(os), "cannot write metrics.json in " + out_dir);
        os << metrics.dump(2) << "\n";
    }

    CastModel<float>& model_;
    TrainConfig tcfg_;
    AugmentConfig acfg_;
    PipelineConfig pcfg_;
    std::vector<ParamRef<float>> params_;
    std::vector<BufferRef<float>> buffers_;
};

}  // namespace cforge
