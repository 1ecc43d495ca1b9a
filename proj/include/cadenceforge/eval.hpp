#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "cadenceforge/checkpoint.hpp"
#include "cadenceforge/model.hpp"
#include "cadenceforge/pipeline.hpp"
#include "cadenceforge/stats.hpp"

namespace cforge {

struct PreparedSet {
    std::vector<StreamPair> streams;
    std::vector<std::size_t> labels;
};

inline PreparedSet prepare_set(const std::vector<DataSample>& samples,
                               const PipelineConfig& pcfg, std::size_t threads = 1) {
    PreparedSet out;
    out.streams.resize(samples.size());
    out.labels.resize(samples.size());
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        out.streams[i] = prepare_streams(samples[i].rtm, pcfg);
        out.labels[i] = samples[i].label;
    });
    return out;
}

// Softmax probabilities in eval mode, [n * num_classes]. Running statistics
// are used for normalisation, so results do not depend on the batching.
inline std::vector<double> predict_probs(CastModel<float>& model,
                                         const std::vector<StreamPair>& streams,
                                         std::size_t batch_size = 32) {
    const auto& cfg = model.config();
    const std::size_t s = cfg.spatial, c = cfg.num_classes;
    const std::size_t plane = 3 * s * s;
    std::vector<double> probs(streams.size() * c, 0.0);
    NoGradGuard guard;
    Rng dummy(0);
    for (std::size_t start = 0; start < streams.size(); start += batch_size) {
        const std::size_t b = std::min(batch_size, streams.size() - start);
        std::vector<float> xr(b * plane), xc(b * plane);
        for (std::size_t i = 0; i < b; ++i) {
            const auto& sp = streams[start + i];
            require(sp.rtm_in.size() == plane && sp.cvd_in.size() == plane,
                    "predict: stream shape does not match the model's input size");
            std::copy(sp.rtm_in.begin(), sp.rtm_in.end(), xr.begin() + std::ptrdiff_t(i * plane));
            std::copy(sp.cvd_in.begin(), sp.cvd_in.end(), xc.begin() + std::ptrdiff_t(i * plane));
        }
        auto tr = Tensor<float>::from({b, 3, s, s}, std::move(xr));
        auto tc = Tensor<float>::from({b, 3, s, s}, std::move(xc));
        const auto out = model.forward(tr, tc, /*train=*/false, dummy);
        const auto& logits = out.main.value();
        for (std::size_t i = 0; i < b; ++i) {
            double mx = -1e300;
            for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, double(logits[i * c + k]));
            double z = 0.0;
            for (std::size_t k = 0; k < c; ++k) z += std::exp(double(logits[i * c + k]) - mx);
            for (std::size_t k = 0; k < c; ++k)
                probs[(start + i) * c + k] = std::exp(double(logits[i * c + k]) - mx) / z;
        }
    }
    return probs;
}

inline std::vector<std::size_t> probs_to_preds(const std::vector<double>& probs,
                                               std::size_t num_classes) {
    require(num_classes > 0 && probs.size() % num_classes == 0, "bad probability shape");
    std::vector<std::size_t> preds(probs.size() / num_classes);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double* row = &probs[i * num_classes];
        preds[i] = std::size_t(std::max_element(row, row + num_classes) - row);
    }
    return preds;
}

inline double accuracy(const std::vector<double>& probs, const std::vector<std::size_t>& labels,
                       std::size_t num_classes) {
    const auto preds = probs_to_preds(probs, num_classes);
    require(preds.size() == labels.size(), "prediction/label count mismatch");
    require(!labels.empty(), "empty evaluation set");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hit += preds[i] == labels[i];
    return double(hit) / double(labels.size());
}

// Probabilities averaged over the deterministic view set. The noise view is
// seeded per (sample, view) so repeated calls agree exactly.
inline std::vector<double> predict_probs_tta(CastModel<float>& model,
                                             const std::vector<DataSample>& samples,
                                             const PipelineConfig& pcfg, std::uint64_t seed,
                                             std::size_t batch_size = 32,
                                             std::size_t threads = 1) {
    const std::size_t c = model.config().num_classes;
    std::vector<StreamPair> views(samples.size() * kTtaViews);
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        for (std::size_t v = 0; v < kTtaViews; ++v) {
            Rng rng = Rng(seed).fork(Rng::combine(0x77a, i * kTtaViews + v));
            views[i * kTtaViews + v] = prepare_streams(tta_view(samples[i].rtm, v, rng), pcfg);
        }
    });
    const auto vp = predict_probs(model, views, batch_size);
    std::vector<double> probs(samples.size() * c, 0.0);
    for (std::size_t i = 0; i < samples.size(); ++i)
        for (std::size_t v = 0; v < kTtaViews; ++v)
            for (std::size_t k = 0; k < c; ++k)
                probs[i * c + k] += vp[(i * kTtaViews + v) * c + k] / double(kTtaViews);
    return probs;
}

// Checkpoints in a directory, sorted by filename for a stable ensemble order.
inline std::vector<std::string> list_checkpoints(const std::string& dir) {
    namespace fs = std::filesystem;
    require(fs::is_directory(dir), "not a directory: " + dir);
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".ckpt")
            out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    require(!out.empty(), "no .ckpt files in " + dir);
    return out;
}

// Mean probability over a set of checkpoints (all must match the model's
// architecture). The model is left holding the last set of weights.
inline std::vector<double> ensemble_probs(CastModel<float>& model,
                                          const std::vector<std::string>& ckpts,
                                          const std::vector<DataSample>& samples,
                                          const PipelineConfig& pcfg, bool tta,
                                          std::uint64_t seed, std::size_t batch_size = 32,
                                          std::size_t threads = 1) {
    require(!ckpts.empty(), "ensemble needs at least one checkpoint");
    const std::size_t c = model.config().num_classes;
    std::vector<double> acc(samples.size() * c, 0.0);
    auto params = model.params();
    auto buffers = model.buffers();
    PreparedSet prepared;
    if (!tta) prepared = prepare_set(samples, pcfg, threads);
    for (const auto& path : ckpts) {
        load_checkpoint<float>(path, params, buffers);
        const auto p = tta ? predict_probs_tta(model, samples, pcfg, seed, batch_size, threads)
                           : predict_probs(model, prepared.streams, batch_size);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p[i] / double(ckpts.size());
    }
    return acc;
}

}  // namespace cforge
