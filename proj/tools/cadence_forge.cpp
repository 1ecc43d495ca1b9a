// cadence-forge: single entry point for the whole pipeline — synthesis,
// spectral extraction, augmentation preview, training, evaluation, ablation
// sweeps, and statistics. Exit codes: 0 ok, 1 validation/usage error,
// 2 runtime failure.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cadenceforge/config_json.hpp"
#include "cadenceforge/eval.hpp"
#include "cadenceforge/manifest.hpp"
#include "cadenceforge/pipeline.hpp"
#include "cadenceforge/stats.hpp"
#include "cadenceforge/train.hpp"
#include "cadenceforge/variants.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t default_seed() {
    if (const char* s = std::getenv("CADENCE_FORGE_SEED")) {
        char* end = nullptr;
        const auto v = std::strtoull(s, &end, 10);
        cforge::require(end && *end == '\0', "CADENCE_FORGE_SEED is not an integer");
        return v;
    }
    return 42;
}

json load_json_file(const std::string& path) {
    std::ifstream is(path);
    cforge::require(bool(is), "cannot open " + path);
    json j = json::parse(is, nullptr, /*allow_exceptions=*/false);
    cforge::require(!j.is_discarded(), path + " is not valid JSON");
    return j;
}

bool parse_double(const std::string& tok, double& out) {
    try {
        std::size_t used = 0;
        out = std::stod(tok, &used);
        return used == tok.size();
    } catch (const std::exception&) {
        return false;
    }
}

// One score per CSV line: the last numeric field wins, so both bare-score
// files and "fold,score" files work. Header lines are skipped.
std::vector<double> read_scores(const std::string& path) {
    std::ifstream is(path);
    cforge::require(bool(is), "cannot open " + path);
    std::vector<double> out;
    std::string line;
    while (std::getline(is, line)) {
        std::stringstream ss(line);
        std::string tok;
        double v = 0.0;
        bool have = false;
        while (std::getline(ss, tok, ',')) {
            double parsed = 0.0;
            // trim whitespace
            const auto b = tok.find_first_not_of(" \t\r");
            const auto e = tok.find_last_not_of(" \t\r");
            if (b == std::string::npos) continue;
            if (parse_double(tok.substr(b, e - b + 1), parsed)) {
                v = parsed;
                have = true;
            }
        }
        if (have) out.push_back(v);
    }
    return out;
}

// All numeric tokens in a CSV/whitespace file; non-numeric tokens (headers)
// are skipped.
std::vector<double> read_numbers(const std::string& path) {
    std::ifstream is(path);
    cforge::require(bool(is), "cannot open " + path);
    std::vector<double> out;
    std::string tok;
    while (is) {
        int ch = is.get();
        if (ch == ',' || ch == '\n' || ch == '\r' || ch == ' ' || ch == '\t' || ch == EOF) {
            if (!tok.empty()) {
                double v = 0.0;
                if (parse_double(tok, v)) out.push_back(v);
                tok.clear();
            }
        } else {
            tok.push_back(char(ch));
        }
    }
    return out;
}

cforge::Window window_from_cli(const std::string& s) {
    if (s == "bh4") return cforge::Window::BlackmanHarris4;
    if (s == "hamming") return cforge::Window::Hamming;
    if (s == "rect") return cforge::Window::Rectangular;
    throw cforge::ValidationError("unknown window: " + s + " (expected bh4|hamming|rect)");
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path);
    cforge::require(bool(os), "cannot write " + path.string());
    os << text;
}

std::string format_acc(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

// ---- synth ------------------------------------------------------------------

struct SynthArgs {
    std::size_t classes = 8, per_class = 50;
    std::string mode = "mixed";
    double val_fraction = 0.2;
    std::uint64_t seed = default_seed();
    std::string out_dir;
};

int run_synth(const SynthArgs& a) {
    cforge::SynthConfig cfg;
    cfg.num_classes = a.classes;
    cfg.per_class = a.per_class;
    cfg.mode = cforge::synth_mode_from_name(a.mode);
    cfg.val_fraction = a.val_fraction;
    cfg.seed = a.seed;
    const auto samples = cforge::generate_dataset(cfg);
    cforge::save_dataset(a.out_dir, samples, cfg);

    cforge::RunManifest m;
    m.command = "synth";
    m.seed = a.seed;
    m.config = cfg;
    m.outputs = {{"dataset", "dataset.json"}, {"samples", samples.size()}};
    cforge::write_manifest(a.out_dir, m);
    std::cout << "synth: wrote " << samples.size() << " samples (" << a.classes << " classes) to "
              << a.out_dir << "\n";
    return 0;
}

// ---- cvd --------------------------------------------------------------------

struct CvdArgs {
    std::string in, out;
    bool no_linearize = false, keep_dc = false;
    std::string window = "bh4";
    std::size_t nfft = 128;
};

int run_cvd(const CvdArgs& a) {
    const auto rtm = cforge::load_rtm(a.in);
    cforge::CvdConfig cfg;
    cfg.n_fft = a.nfft;
    cfg.window = window_from_cli(a.window);
    cfg.linearize = !a.no_linearize;
    cfg.discard_dc = !a.keep_dc;
    const auto cvd = cforge::extract_cvd(rtm, cfg);
    cforge::save_cvd(cvd, a.out);
    std::cout << "cvd: " << a.in << " -> " << a.out << "  [" << cvd.antennas << "x"
              << cvd.num_ranges << "x" << cvd.num_bins << ", bin " << cvd.bin_hz << " Hz]\n";
    return 0;
}

// ---- artifact-demo ------------------------------------------------------------

struct ArtifactArgs {
    std::vector<double> ms;
    std::string out;  // empty -> stdout
    std::uint64_t seed = default_seed();
};

int run_artifact_demo(const ArtifactArgs& a) {
    std::vector<double> ms = a.ms.empty() ? std::vector<double>{0.2, 0.4, 0.8} : a.ms;
    std::ostringstream csv;
    csv << "m,ratio_linearized,ratio_db,m_over_4\n";
    for (double m : ms) {
        cforge::require(m > 0.0 && m < 1.0, "modulation depth must be in (0, 1)");
        cforge::GestureSpec spec;
        spec.cadence_hz = 2.0;
        spec.range_center = 120.0;
        spec.range_width = 6.0;
        spec.mod_depth = m;
        spec.noise_floor_db = -200.0;  // disabled: the artifact is about the transform
        spec.num_frames = 40;
        cforge::Rng rng(a.seed);
        const auto rtm = cforge::generate_sample(spec, rng);

        cforge::CvdConfig lin_cfg;  // defaults linearize
        cforge::CvdConfig db_cfg;
        db_cfg.linearize = false;
        const double r_lin = cforge::harmonic_artifact_ratio(
            cforge::extract_cvd(rtm, lin_cfg), spec.cadence_hz);
        const double r_db = cforge::harmonic_artifact_ratio(
            cforge::extract_cvd(rtm, db_cfg), spec.cadence_hz);
        csv << m << "," << r_lin << "," << r_db << "," << m / 4.0 << "\n";
    }
    if (a.out.empty())
        std::cout << csv.str();
    else {
        write_text(a.out, csv.str());
        std::cout << "artifact-demo: wrote " << a.out << "\n";
    }
    return 0;
}

// ---- augment -------------------------------------------------------------------

struct AugmentArgs {
    std::string in, out, config;
    std::uint64_t seed = default_seed();
};

int run_augment(const AugmentArgs& a) {
    const auto rtm = cforge::load_rtm(a.in);
    cforge::AugmentConfig cfg;
    if (!a.config.empty()) {
        json j = cfg;
        j.merge_patch(load_json_file(a.config));
        j.get_to(cfg);
    }
    cfg.validate();
    cforge::Rng rng(a.seed);
    const auto out = cforge::augment_physics(rtm, cfg, rng);
    cforge::save_rtm(out, a.out);
    std::cout << "augment: " << a.in << " -> " << a.out << "\n";
    return 0;
}

// ---- train ---------------------------------------------------------------------

struct TrainArgs {
    std::string data_dir, out_dir, config, variant = "Full CAST", profile = "desk";
    std::uint64_t seed = default_seed();
    bool seed_given = false;
    std::size_t threads = 1;
    // optional flag overrides (negative/zero = not set)
    long epochs = -1, batch_size = -1;
    double lr = -1.0;
};

cforge::VariantSetup resolve_setup(const std::string& profile, const std::string& config_path,
                                   const std::string& variant) {
    json j = cforge::profile_by_name(profile);
    if (!config_path.empty()) j.merge_patch(load_json_file(config_path));
    cforge::VariantSetup base = j.get<cforge::VariantSetup>();
    return cforge::make_variant(variant, base);
}

int run_train(TrainArgs& a) {
    const auto data = cforge::load_dataset(a.data_dir);
    auto setup = resolve_setup(a.profile, a.config, a.variant);
    setup.model.num_classes = data.num_classes;
    if (a.epochs > 0) setup.train.epochs = std::size_t(a.epochs);
    if (a.batch_size > 0) setup.train.batch_size = std::size_t(a.batch_size);
    if (a.lr > 0.0) setup.train.lr = a.lr;
    if (a.seed_given) {
        setup.train.seed = a.seed;
        setup.model.init_seed = a.seed;
    }
    setup.train.threads = a.threads;
    setup.model.validate();
    setup.train.validate();

    cforge::CastModel<float> model(setup.model);
    cforge::Trainer trainer(model, setup.train, setup.augment, setup.pipeline);
    const auto res = trainer.fit(data, a.out_dir);

    cforge::RunManifest m;
    m.command = "train";
    m.seed = setup.train.seed;
    m.config = {{"setup", setup}, {"variant", a.variant}, {"profile", a.profile}};
    m.inputs = {{"data_dir", a.data_dir}};
    json outs = json::array();
    for (const auto& c : res.ensemble_checkpoints) outs.push_back(fs::path(c).filename());
    m.outputs = {{"final", "final.ckpt"}, {"metrics", "metrics.json"}, {"ensemble", outs}};
    cforge::write_manifest(a.out_dir, m);

    std::cout << "train: '" << a.variant << "' best val acc " << format_acc(res.best_val_acc)
              << " (epoch " << res.best_epoch << "), final " << format_acc(res.final_val_acc)
              << ", " << res.ensemble_checkpoints.size() << " ensemble members in " << a.out_dir
              << "\n";
    return 0;
}

// ---- eval ----------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoints, data_dir, out_dir, split = "val";
    bool tta = false;
    std::uint64_t seed = default_seed();
    std::size_t threads = 1, batch_size = 32;
};

int run_eval(const EvalArgs& a) {
    std::vector<std::string> ckpts;
    if (fs::is_directory(a.checkpoints))
        ckpts = cforge::list_checkpoints(a.checkpoints);
    else
        ckpts = {a.checkpoints};

    const json meta = cforge::read_checkpoint_meta(ckpts.front());
    cforge::require(meta.contains("model") && meta.contains("pipeline"),
                    "checkpoint metadata lacks model/pipeline configs: " + ckpts.front());
    const auto mcfg = meta.at("model").get<cforge::ModelConfig>();
    const auto pcfg = meta.at("pipeline").get<cforge::PipelineConfig>();

    const auto data = cforge::load_dataset(a.data_dir);
    cforge::require(data.num_classes == mcfg.num_classes,
                    "dataset class count does not match the checkpoint");
    cforge::require(a.split == "val" || a.split == "train", "split must be val or train");
    const auto& samples = a.split == "val" ? data.val : data.train;

    cforge::CastModel<float> model(mcfg);
    const auto probs = cforge::ensemble_probs(model, ckpts, samples, pcfg, a.tta, a.seed,
                                              a.batch_size, a.threads);
    const auto preds = cforge::probs_to_preds(probs, mcfg.num_classes);
    std::vector<std::size_t> truths(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) truths[i] = samples[i].label;
    const auto cm =
        cforge::ConfusionMatrix::from_predictions(truths, preds, mcfg.num_classes);
    const auto recall = cm.per_class_recall();

    fs::create_directories(a.out_dir);
    json metrics;
    metrics["accuracy"] = cm.top1();
    metrics["samples"] = samples.size();
    metrics["split"] = a.split;
    metrics["tta"] = a.tta;
    metrics["checkpoints"] = json::array();
    for (const auto& c : ckpts) metrics["checkpoints"].push_back(fs::path(c).filename());
    metrics["per_class_recall"] = recall;
    metrics["most_confused"] = cm.most_confused(5);
    write_text(fs::path(a.out_dir) / "metrics.json", metrics.dump(2) + "\n");

    std::ostringstream pc;
    pc << "class,recall\n";
    for (std::size_t c = 0; c < recall.size(); ++c) pc << c << "," << recall[c] << "\n";
    write_text(fs::path(a.out_dir) / "per_class.csv", pc.str());
    write_text(fs::path(a.out_dir) / "confusion.csv", cm.to_csv());

    cforge::RunManifest m;
    m.command = "eval";
    m.seed = a.seed;
    m.config = {{"tta", a.tta}, {"split", a.split}, {"batch_size", a.batch_size}};
    m.inputs = {{"checkpoints", a.checkpoints}, {"data_dir", a.data_dir}};
    m.outputs = {{"metrics", "metrics.json"},
                 {"per_class", "per_class.csv"},
                 {"confusion", "confusion.csv"}};
    cforge::write_manifest(a.out_dir, m);

    std::cout << "eval: accuracy " << format_acc(cm.top1()) << " on " << samples.size() << " "
              << a.split << " samples (" << ckpts.size() << " checkpoint"
              << (ckpts.size() == 1 ? "" : "s") << (a.tta ? ", tta" : "") << ")\n";
    return 0;
}

// ---- ablate ---------------------------------------------------------------------

struct AblateArgs {
    std::string data_dir, out_dir, config, variants_csv, profile = "desk";
    std::uint64_t seed = default_seed();
    std::size_t repeats = 1, threads = 1;
    long epochs = -1;
};

int run_ablate(const AblateArgs& a) {
    cforge::require(a.repeats >= 1, "repeats must be >= 1");
    const auto data = cforge::load_dataset(a.data_dir);

    std::vector<std::string> names;
    if (a.variants_csv.empty()) {
        names = cforge::variant_names();
    } else {
        std::stringstream ss(a.variants_csv);
        std::string item;
        while (std::getline(ss, item, ';')) names.push_back(item);
    }

    std::ostringstream csv;
    csv << "variant,repeats,mean_val_acc,std_val_acc,status\n";
    json rows = json::array();
    for (const auto& name : names) {
        std::vector<double> accs;
        std::string status = "ok";
        try {
            for (std::size_t r = 0; r < a.repeats; ++r) {
                auto setup = resolve_setup(a.profile, a.config, name);
                setup.model.num_classes = data.num_classes;
                if (a.epochs > 0) setup.train.epochs = std::size_t(a.epochs);
                setup.train.seed = a.seed + r;
                setup.model.init_seed = a.seed + r;
                setup.train.threads = a.threads;
                cforge::CastModel<float> model(setup.model);
                cforge::Trainer trainer(model, setup.train, setup.augment, setup.pipeline);
                accs.push_back(trainer.fit(data).best_val_acc);
            }
        } catch (const std::exception& e) {
            status = std::string("error: ") + e.what();
            accs.clear();
        }
        double mean = 0.0, sd = 0.0;
        if (!accs.empty()) {
            for (double v : accs) mean += v;
            mean /= double(accs.size());
            if (accs.size() >= 2) {
                for (double v : accs) sd += (v - mean) * (v - mean);
                sd = std::sqrt(sd / double(accs.size() - 1));
            }
        }
        csv << '"' << name << '"' << "," << a.repeats << "," << format_acc(mean) << ","
            << format_acc(sd) << ",\"" << status << "\"\n";
        rows.push_back({{"variant", name},
                        {"repeats", a.repeats},
                        {"mean_val_acc", mean},
                        {"std_val_acc", sd},
                        {"status", status}});
        std::cout << "ablate: " << name << " -> " << format_acc(mean)
                  << (status == "ok" ? "" : "  [" + status + "]") << "\n";
    }

    fs::create_directories(a.out_dir);
    write_text(fs::path(a.out_dir) / "results.csv", csv.str());
    write_text(fs::path(a.out_dir) / "results.json", rows.dump(2) + "\n");

    cforge::RunManifest m;
    m.command = "ablate";
    m.seed = a.seed;
    m.config = {{"variants", names},
                {"repeats", a.repeats},
                {"profile", a.profile},
                {"epochs_override", a.epochs}};
    m.inputs = {{"data_dir", a.data_dir}};
    m.outputs = {{"results", "results.csv"}};
    cforge::write_manifest(a.out_dir, m);
    return 0;
}

// ---- ttest ---------------------------------------------------------------------

struct TTestArgs {
    std::string a_path, b_path, out;
    long k = -1;
    double rho = -1.0;
};

int run_ttest(const TTestArgs& a) {
    const auto va = read_scores(a.a_path);
    const auto vb = read_scores(a.b_path);
    if (a.k > 0) {
        cforge::require(va.size() == std::size_t(a.k) && vb.size() == std::size_t(a.k),
                        "expected exactly " + std::to_string(a.k) + " scores per file");
    }
    const auto r = cforge::corrected_paired_ttest(va, vb, a.rho);
    json out = {{"k", r.k},          {"mean_diff", r.mean_diff}, {"sd_diff", r.sd_diff},
                {"rho", r.rho},      {"corrected_se", r.se},     {"t", r.t},
                {"df", r.dof},       {"p", r.p},                 {"cohens_d", r.cohen_d}};
    if (a.out.empty())
        std::cout << out.dump(2) << "\n";
    else {
        write_text(a.out, out.dump(2) + "\n");
        std::cout << "ttest: t=" << r.t << " p=" << r.p << " -> " << a.out << "\n";
    }
    return 0;
}

// ---- confusion -----------------------------------------------------------------

struct ConfusionArgs {
    std::string preds, out_dir;
    long classes = -1;
};

int run_confusion(const ConfusionArgs& a) {
    const auto nums = read_numbers(a.preds);
    cforge::require(nums.size() >= 2 && nums.size() % 2 == 0,
                    "prediction CSV must hold (true,pred) pairs");
    std::vector<std::size_t> truths, preds;
    std::size_t max_cls = 0;
    for (std::size_t i = 0; i < nums.size(); i += 2) {
        cforge::require(nums[i] >= 0 && nums[i + 1] >= 0, "class indices must be >= 0");
        truths.push_back(std::size_t(nums[i]));
        preds.push_back(std::size_t(nums[i + 1]));
        max_cls = std::max({max_cls, truths.back(), preds.back()});
    }
    const std::size_t num_classes =
        a.classes > 0 ? std::size_t(a.classes) : std::max<std::size_t>(2, max_cls + 1);
    const auto cm = cforge::ConfusionMatrix::from_predictions(truths, preds, num_classes);

    fs::create_directories(a.out_dir);
    write_text(fs::path(a.out_dir) / "confusion.csv", cm.to_csv());
    const auto recall = cm.per_class_recall();
    std::ostringstream pc;
    pc << "class,recall\n";
    for (std::size_t c = 0; c < recall.size(); ++c) pc << c << "," << recall[c] << "\n";
    write_text(fs::path(a.out_dir) / "per_class.csv", pc.str());
    json summary = {{"top1", cm.top1()},
                    {"samples", cm.total()},
                    {"most_confused", cm.most_confused(5)}};
    write_text(fs::path(a.out_dir) / "summary.json", summary.dump(2) + "\n");

    cforge::RunManifest m;
    m.command = "confusion";
    m.config = {{"classes", num_classes}};
    m.inputs = {{"preds", a.preds}};
    m.outputs = {{"confusion", "confusion.csv"}, {"per_class", "per_class.csv"}};
    cforge::write_manifest(a.out_dir, m);
    std::cout << "confusion: top-1 " << format_acc(cm.top1()) << " over " << cm.total()
              << " pairs -> " << a.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cadence-forge: radar micro-gesture pipeline tool"};
    app.require_subcommand(1);
    std::function<int()> action;

    SynthArgs sy;
    auto* synth = app.add_subcommand("synth", "generate a synthetic labelled dataset");
    synth->add_option("--classes", sy.classes, "number of classes")->capture_default_str();
    synth->add_option("--per-class", sy.per_class, "samples per class")->capture_default_str();
    synth->add_option("--mode", sy.mode, "mixed|cadence|range")->capture_default_str();
    synth->add_option("--val-fraction", sy.val_fraction, "validation split fraction")
        ->capture_default_str();
    synth->add_option("--seed", sy.seed, "rng seed")->capture_default_str();
    synth->add_option("--out-dir", sy.out_dir, "output directory")->required();
    synth->callback([&] { action = [&] { return run_synth(sy); }; });

    CvdArgs cv;
    auto* cvd = app.add_subcommand("cvd", "extract a cadence-velocity diagram");
    cvd->add_option("--in", cv.in, "input RTM1 file")->required();
    cvd->add_option("--out", cv.out, "output CVD1 file")->required();
    cvd->add_flag("--no-linearize", cv.no_linearize, "transform the dB values directly");
    cvd->add_flag("--keep-dc", cv.keep_dc, "keep the DC bin (skip mean removal)");
    cvd->add_option("--window", cv.window, "bh4|hamming|rect")->capture_default_str();
    cvd->add_option("--nfft", cv.nfft, "transform length (0 = series length)")
        ->capture_default_str();
    cvd->callback([&] { action = [&] { return run_cvd(cv); }; });

    ArtifactArgs ar;
    auto* arte = app.add_subcommand(
        "artifact-demo", "CSV of log-domain harmonic artifact ratios vs modulation depth");
    arte->add_option("--m", ar.ms, "modulation depth(s), default 0.2 0.4 0.8");
    arte->add_option("--out", ar.out, "CSV path (default stdout)");
    arte->add_option("--seed", ar.seed, "rng seed")->capture_default_str();
    arte->callback([&] { action = [&] { return run_artifact_demo(ar); }; });

    AugmentArgs au;
    auto* aug = app.add_subcommand("augment", "apply the physics augmentation chain to a map");
    aug->add_option("--in", au.in, "input RTM1 file")->required();
    aug->add_option("--out", au.out, "output RTM1 file")->required();
    aug->add_option("--config", au.config, "AugmentConfig JSON (merged over defaults)");
    aug->add_option("--seed", au.seed, "rng seed")->capture_default_str();
    aug->callback([&] { action = [&] { return run_augment(au); }; });

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "train a model on a dataset directory");
    train->add_option("--data-dir", tr.data_dir, "dataset directory")->required();
    train->add_option("--out-dir", tr.out_dir, "output directory")->required();
    train->add_option("--config", tr.config, "setup JSON (merged over the profile)");
    train->add_option("--variant", tr.variant, "ablation variant name")->capture_default_str();
    train->add_option("--profile", tr.profile, "desk|paper")->capture_default_str();
    auto* seed_opt = train->add_option("--seed", tr.seed, "rng seed (weights + batches)");
    train->add_option("--threads", tr.threads, "sample preparation threads")
        ->capture_default_str();
    train->add_option("--epochs", tr.epochs, "override epochs");
    train->add_option("--batch-size", tr.batch_size, "override batch size");
    train->add_option("--lr", tr.lr, "override peak learning rate");
    train->callback([&, seed_opt] {
        tr.seed_given = seed_opt->count() > 0 || std::getenv("CADENCE_FORGE_SEED") != nullptr;
        action = [&] { return run_train(tr); };
    });

    EvalArgs ev;
    auto* eval = app.add_subcommand("eval", "evaluate checkpoint(s) on a dataset");
    eval->add_option("--checkpoints", ev.checkpoints, "checkpoint file or directory")
        ->required();
    eval->add_option("--data-dir", ev.data_dir, "dataset directory")->required();
    eval->add_option("--out-dir", ev.out_dir, "output directory")->required();
    eval->add_option("--split", ev.split, "val|train")->capture_default_str();
    eval->add_flag("--tta", ev.tta, "average over test-time views");
    eval->add_option("--seed", ev.seed, "rng seed for the tta noise view")
        ->capture_default_str();
    eval->add_option("--threads", ev.threads, "preparation threads")->capture_default_str();
    eval->add_option("--batch-size", ev.batch_size, "inference batch size")
        ->capture_default_str();
    eval->callback([&] { action = [&] { return run_eval(ev); }; });

    AblateArgs ab;
    auto* ablate = app.add_subcommand("ablate", "run ablation variants and tabulate accuracy");
    ablate->add_option("--data-dir", ab.data_dir, "dataset directory")->required();
    ablate->add_option("--out-dir", ab.out_dir, "output directory")->required();
    ablate->add_option("--config", ab.config, "setup JSON (merged over the profile)");
    ablate->add_option("--variants", ab.variants_csv,
                       "semicolon-separated variant names (default: all)");
    ablate->add_option("--profile", ab.profile, "desk|paper")->capture_default_str();
    ablate->add_option("--repeats", ab.repeats, "repeats per variant (seed+r)")
        ->capture_default_str();
    ablate->add_option("--epochs", ab.epochs, "override epochs");
    ablate->add_option("--seed", ab.seed, "base rng seed")->capture_default_str();
    ablate->add_option("--threads", ab.threads, "preparation threads")->capture_default_str();
    ablate->callback([&] { action = [&] { return run_ablate(ab); }; });

    TTestArgs tt;
    auto* ttest = app.add_subcommand("ttest", "variance-corrected paired t-test on fold scores");
    ttest->add_option("--a", tt.a_path, "CSV of fold scores, model A")->required();
    ttest->add_option("--b", tt.b_path, "CSV of fold scores, model B")->required();
    ttest->add_option("--k", tt.k, "expected fold count (validation only)");
    ttest->add_option("--rho", tt.rho, "overlap correction (default 1/(k-1))");
    ttest->add_option("--out", tt.out, "JSON path (default stdout)");
    ttest->callback([&] { action = [&] { return run_ttest(tt); }; });

    ConfusionArgs cf;
    auto* conf = app.add_subcommand("confusion", "confusion matrix from a (true,pred) CSV");
    conf->add_option("--preds", cf.preds, "CSV of true,pred rows")->required();
    conf->add_option("--classes", cf.classes, "class count (default: max index + 1)");
    conf->add_option("--out-dir", cf.out_dir, "output directory")->required();
    conf->callback([&] { action = [&] { return run_confusion(cf); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage problems are validation errors
    }

    try {
        return action ? action() : 1;
    } catch (const cforge::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 2;
    }
}
