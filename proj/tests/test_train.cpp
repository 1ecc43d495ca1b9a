#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "cadenceforge/train.hpp"

using namespace cforge;

namespace {

ModelConfig tiny_model_config(std::size_t classes = 4) {
    ModelConfig cfg;
    cfg.num_classes = classes;
    cfg.spatial = 16;
    cfg.casa = {8, 2, 4};
    cfg.rtm_encoder = {{4, 8, 12, 16}, 3};
    cfg.cvd_encoder = {{4, 8, 12, 16}, 5};
    cfg.proj_dim = 32;
    cfg.fusion_heads = 4;
    cfg.ffn_hidden = 48;
    cfg.init_seed = 7;
    return cfg;
}

LoadedDataset tiny_dataset(std::size_t classes = 4, std::size_t per_class = 6) {
    SynthConfig cfg;
    cfg.num_classes = classes;
    cfg.per_class = per_class;
    cfg.seed = 123;
    return to_dataset(generate_dataset(cfg), classes);
}

PipelineConfig tiny_pipeline() {
    PipelineConfig p;
    p.pre.spatial = 16;
    return p;
}

ParamRef<float> make_param(std::vector<float> vals, bool decay) {
    const std::size_t n = vals.size();
    return {"p", Tensor<float>::from({n}, std::move(vals), true), decay};
}

}  // namespace

TEST_CASE("lr schedule ramps, peaks, and lands on the floor") {
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.warmup_epochs = 2;
    cfg.lr = 1e-3;
    cfg.min_lr_frac = 0.01;
    const std::size_t spe = 5;  // 50 steps, warmup 10

    CHECK(lr_at_step(cfg, 0, spe) == Catch::Approx(1e-3 / 10.0));
    CHECK(lr_at_step(cfg, 4, spe) == Catch::Approx(1e-3 * 5.0 / 10.0));
    CHECK(lr_at_step(cfg, 9, spe) == Catch::Approx(1e-3));   // ramp top
    CHECK(lr_at_step(cfg, 10, spe) == Catch::Approx(1e-3));  // cosine start
    CHECK(lr_at_step(cfg, 49, spe) == Catch::Approx(1e-5));  // exact floor
    // monotone decay after warmup
    for (std::size_t s = 10; s < 49; ++s)
        CHECK(lr_at_step(cfg, s, spe) >= lr_at_step(cfg, s + 1, spe));
    // midpoint of the cosine span sits halfway between peak and floor
    const double mid = lr_at_step(cfg, 10 + (49 - 10) / 2 + 1, spe);
    CHECK(mid < 1e-3);
    CHECK(mid > 1e-5);
    CHECK_THROWS_AS(lr_at_step(cfg, 50, spe), ValidationError);

    cfg.warmup_epochs = 0;
    CHECK(lr_at_step(cfg, 0, spe) == Catch::Approx(1e-3));
}

TEST_CASE("adamw first step matches the closed form") {
    TrainConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.5;
    std::vector<ParamRef<float>> params{make_param({2.0f}, true)};
    params[0].tensor.grad()[0] = 0.3f;

    AdamW<float> opt(params, cfg);
    opt.step(params, cfg.lr);

    // bias-corrected first step: m_hat = g, v_hat = g^2
    const double g = 0.3;
    const double adam = 0.1 * g / (std::sqrt(g * g) + cfg.adam_eps);
    const double decay = 0.1 * 0.5 * 2.0;
    CHECK(params[0].tensor.value()[0] == Catch::Approx(2.0 - adam - decay).margin(1e-6));
    CHECK(opt.steps_taken() == 1);
}

TEST_CASE("weight decay skips params that opt out") {
    TrainConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.5;
    std::vector<ParamRef<float>> params{make_param({2.0f}, true), make_param({2.0f}, false)};
    params[0].tensor.grad();  // zero grads
    params[1].tensor.grad();
    AdamW<float> opt(params, cfg);
    opt.step(params, cfg.lr);
    CHECK(params[0].tensor.value()[0] == Catch::Approx(2.0 - 0.1 * 0.5 * 2.0).margin(1e-7));
    CHECK(params[1].tensor.value()[0] == 2.0f);  // zero grad, no decay -> untouched
}

TEST_CASE("global norm clipping") {
    std::vector<ParamRef<float>> params{make_param({0.0f, 0.0f}, true)};
    auto& g = params[0].tensor.grad();
    g[0] = 3.0f;
    g[1] = 4.0f;
    CHECK(clip_grad_norm(params, 1.0) == Catch::Approx(5.0));
    CHECK(g[0] == Catch::Approx(0.6f));
    CHECK(g[1] == Catch::Approx(0.8f));
    // under the ceiling: untouched
    CHECK(clip_grad_norm(params, 10.0) == Catch::Approx(1.0));
    CHECK(g[0] == Catch::Approx(0.6f));
}

TEST_CASE("ema tracker follows the update rule exactly") {
    std::vector<ParamRef<float>> params{make_param({1.0f}, true)};
    EmaTracker<float> ema(params, 0.9);
    params[0].tensor.value()[0] = 2.0f;
    ema.update(params);
    CHECK(ema.weights()[0][0] == Catch::Approx(0.9 * 1.0 + 0.1 * 2.0).margin(1e-7));
    params[0].tensor.value()[0] = 0.0f;
    ema.update(params);
    CHECK(ema.weights()[0][0] == Catch::Approx(0.9 * 1.1).margin(1e-6));
}

TEST_CASE("swa of identical snapshots is the snapshot") {
    std::vector<ParamRef<float>> params{make_param({0.25f, -3.5f}, true)};
    SwaTracker<float> swa;
    CHECK_FALSE(swa.has_average());
    for (int i = 0; i < 5; ++i) swa.accumulate(params);
    const auto w = swa.weights();
    CHECK(w[0][0] == 0.25f);
    CHECK(w[0][1] == -3.5f);
    CHECK(swa.count() == 5);
}

TEST_CASE("swa averages distinct snapshots") {
    std::vector<ParamRef<float>> params{make_param({1.0f}, true)};
    SwaTracker<float> swa;
    swa.accumulate(params);
    params[0].tensor.value()[0] = 3.0f;
    swa.accumulate(params);
    CHECK(swa.weights()[0][0] == Catch::Approx(2.0f));
}

TEST_CASE("top-k keeps the best epochs, later epoch wins ties") {
    std::vector<ParamRef<float>> params{make_param({0.0f}, true)};
    std::vector<float> buf{1.0f};
    std::vector<BufferRef<float>> bufs{{"b", &buf}};
    TopKTracker<float> topk(2);
    params[0].tensor.value()[0] = 10.0f;
    topk.offer(0.5, 0, params, bufs);
    params[0].tensor.value()[0] = 20.0f;
    topk.offer(0.7, 1, params, bufs);
    params[0].tensor.value()[0] = 30.0f;
    topk.offer(0.5, 2, params, bufs);  // ties epoch 0 -> epoch 2 wins
    params[0].tensor.value()[0] = 40.0f;
    topk.offer(0.1, 3, params, bufs);  // never enters

    const auto& e = topk.entries();
    REQUIRE(e.size() == 2);
    CHECK(e[0].val_acc == 0.7);
    CHECK(e[0].epoch == 1);
    CHECK(e[0].weights[0][0] == 20.0f);
    CHECK(e[1].val_acc == 0.5);
    CHECK(e[1].epoch == 2);
    CHECK(e[1].weights[0][0] == 30.0f);
}

TEST_CASE("trainer runs, is deterministic, and records sane metrics") {
    const auto data = tiny_dataset();
    TrainConfig tcfg;
    tcfg.epochs = 3;
    tcfg.batch_size = 8;
    tcfg.warmup_epochs = 1;
    tcfg.lr = 1e-3;
    tcfg.seed = 5;
    tcfg.mix_off_final_epochs = 1;
    AugmentConfig acfg;  // everything on
    const auto pcfg = tiny_pipeline();

    const auto run = [&](std::size_t threads) {
        CastModel<float> model(tiny_model_config());
        TrainConfig t = tcfg;
        t.threads = threads;
        Trainer trainer(model, t, acfg, pcfg);
        return trainer.fit(data);
    };
    const auto r1 = run(1);
    REQUIRE(r1.history.size() == 3);
    for (const auto& st : r1.history) {
        CHECK(std::isfinite(st.train_loss));
        CHECK(st.train_loss > 0.0);
        CHECK(st.val_acc >= 0.0);
        CHECK(st.val_acc <= 1.0);
        CHECK(st.grad_norm_mean > 0.0);
        CHECK(st.lr_last > 0.0);
    }
    // mixing happened while allowed (epochs 0..1), stopped in the final epoch
    CHECK(r1.history[0].mixup_batches + r1.history[0].cutmix_batches == 3);
    CHECK(r1.history[2].mixup_batches + r1.history[2].cutmix_batches == 0);
    CHECK(r1.best_val_acc >= r1.history[0].val_acc);

    // bitwise repeatable, including across prep thread counts
    const auto r2 = run(1);
    const auto r3 = run(2);
    for (std::size_t e = 0; e < 3; ++e) {
        CHECK(r1.history[e].train_loss == r2.history[e].train_loss);
        CHECK(r1.history[e].val_acc == r2.history[e].val_acc);
        CHECK(r1.history[e].train_loss == r3.history[e].train_loss);
        CHECK(r1.history[e].val_acc == r3.history[e].val_acc);
    }
}

TEST_CASE("trainer writes a usable checkpoint set") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "cf_train_ckpt_test";
    fs::remove_all(dir);

    const auto data = tiny_dataset();
    TrainConfig tcfg;
    tcfg.epochs = 3;
    tcfg.batch_size = 8;
    tcfg.warmup_epochs = 1;
    tcfg.ensemble_top_k = 2;
    tcfg.ema_decay = 0.9;
    tcfg.swa_start_frac = 0.5;  // swa from epoch 1
    AugmentConfig acfg;
    acfg.disable_physics();
    acfg.disable_mixing();
    acfg.antenna_dropout = acfg.spec_augment = false;
    const auto pcfg = tiny_pipeline();

    CastModel<float> model(tiny_model_config());
    Trainer trainer(model, tcfg, acfg, pcfg);
    const auto res = trainer.fit(data, dir.string());

    CHECK(fs::exists(dir / "final.ckpt"));
    CHECK(fs::exists(dir / "metrics.json"));
    CHECK(fs::exists(dir / "checkpoints" / "top1.ckpt"));
    CHECK(fs::exists(dir / "checkpoints" / "top2.ckpt"));
    CHECK(fs::exists(dir / "checkpoints" / "ema.ckpt"));
    CHECK(fs::exists(dir / "checkpoints" / "swa.ckpt"));
    CHECK(res.ensemble_checkpoints.size() == 4);  // top2 + ema + swa
    CHECK(res.ema_val_acc >= 0.0);
    CHECK(res.swa_val_acc >= 0.0);

    // the final checkpoint reproduces the trained model's predictions
    const auto val = prepare_set(data.val, pcfg);
    const auto pa = predict_probs(model, val.streams);
    CastModel<float> fresh(tiny_model_config());
    auto fp = fresh.params();
    auto fb = fresh.buffers();
    const auto meta = load_checkpoint<float>((dir / "final.ckpt").string(), fp, fb);
    CHECK(meta.at("kind") == "final");
    CHECK(meta.at("model").at("num_classes") == 4);
    const auto pb = predict_probs(fresh, val.streams);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);

    // metadata carries the pipeline so eval can rebuild preprocessing
    PipelineConfig round;
    meta.at("pipeline").get_to(round);
    CHECK(round.pre.spatial == pcfg.pre.spatial);
    CHECK(round.cvd.n_fft == pcfg.cvd.n_fft);

    // the checkpoint directory ensembles cleanly
    const auto ckpts = list_checkpoints((dir / "checkpoints").string());
    CHECK(ckpts.size() == 4);
    const auto probs =
        ensemble_probs(fresh, ckpts, data.val, pcfg, /*tta=*/false, /*seed=*/1);
    REQUIRE(probs.size() == data.val.size() * 4);
    for (std::size_t i = 0; i < data.val.size(); ++i) {
        double row = 0.0;
        for (std::size_t c = 0; c < 4; ++c) row += probs[i * 4 + c];
        CHECK(row == Catch::Approx(1.0).margin(1e-9));
    }
    fs::remove_all(dir);
}

TEST_CASE("tta prediction is reproducible and normalised") {
    const auto data = tiny_dataset();
    const auto pcfg = tiny_pipeline();
    CastModel<float> model(tiny_model_config());
    const auto p1 = predict_probs_tta(model, data.val, pcfg, 42);
    const auto p2 = predict_probs_tta(model, data.val, pcfg, 42, 16, 2);
    REQUIRE(p1.size() == data.val.size() * 4);
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i] == Catch::Approx(p2[i]).margin(0));
    for (std::size_t i = 0; i < data.val.size(); ++i) {
        double row = 0.0;
        for (std::size_t c = 0; c < 4; ++c) row += p1[i * 4 + c];
        CHECK(row == Catch::Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("bn re-estimation produces finite, usable statistics") {
    const auto data = tiny_dataset();
    const auto pcfg = tiny_pipeline();
    CastModel<float> model(tiny_model_config());
    const auto set = prepare_set(data.train, pcfg);
    reestimate_bn(model, set.streams, 8, 3);
    for (const auto& b : model.buffers())
        for (float v : *b.data) CHECK(std::isfinite(v));
    const auto probs = predict_probs(model, set.streams);
    for (double p : probs) CHECK(std::isfinite(p));
}

TEST_CASE("training aborts on divergence") {
    const auto data = tiny_dataset();
    TrainConfig tcfg;
    tcfg.epochs = 2;
    tcfg.batch_size = 8;
    tcfg.warmup_epochs = 0;
    tcfg.lr = 1e12;
    tcfg.grad_clip = 1e30;
    AugmentConfig acfg;
    acfg.disable_physics();
    acfg.disable_mixing();
    acfg.antenna_dropout = acfg.spec_augment = false;
    CastModel<float> model(tiny_model_config());
    Trainer trainer(model, tcfg, acfg, tiny_pipeline());
    CHECK_THROWS_AS(trainer.fit(data), std::runtime_error);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.warmup_epochs = cfg.epochs;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = {};
    cfg.batch_size = 1;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = {};
    cfg.ema_decay = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = {};
    cfg.min_lr_frac = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}
