#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "segvae/errors.hpp"
#include "segvae/inference.hpp"
#include "segvae/metrics.hpp"
#include "segvae/model.hpp"
#include "segvae/nifti.hpp"
#include "segvae/pipeline.hpp"
#include "segvae/registration.hpp"
#include "segvae/runconfig.hpp"
#include "segvae/trainer.hpp"

namespace segvae {

// ---------------------------------------------------------------------------
// Desk-scale end-to-end experiment
// ---------------------------------------------------------------------------

/// Desk protocol defaults: an 8-filter, three-level model on 32³ patches,
/// trained for up to 50 epochs of 200 samples with patience 2. Small enough
/// for a workstation CPU, large enough to segment the synthetic cases well.
[[nodiscard]] inline RunConfig desk_runconfig() {
    RunConfig rc;
    rc.model.base_filters = 8;
    rc.model.levels = 3;
    rc.model.patch = {32, 32, 32};
    rc.model.latent_dim = 32;
    rc.train.samples_per_epoch = 200;
    return rc;
}

/// Everything that defines one reproducible experiment: dataset size and
/// seed, two distinct model seeds for the ensemble, the run configuration,
/// and the quality bar the held-out metrics must clear.
struct ExperimentSpec {
    int n_train = 40;  ///< generated training cases (1 in 5 held for early stopping)
    int n_val = 10;    ///< generated held-out cases, never seen in training
    Index3 shape{64, 64, 64};
    std::uint64_t data_seed = 1;
    std::uint64_t model_seed_a = 101;
    std::uint64_t model_seed_b = 202;
    RunConfig run = desk_runconfig();
    double min_wt_dice = 0.7;
    double min_tc_dice = 0.6;

    void validate() const {
        if (n_train < 5) {
            throw ConfigError("experiment: n_train must be >= 5 (1 in 5 cases is held for early stopping)");
        }
        if (n_val < 1) throw ConfigError("experiment: n_val must be >= 1 (no held-out cases to evaluate)");
        for (int a = 0; a < 3; ++a) {
            if (shape[a] < 32) {
                throw ConfigError("experiment: case shape " + to_string(shape) +
                                  " too small (each axis must be >= 32)");
            }
        }
        if (model_seed_a == model_seed_b) {
            throw ConfigError("experiment: model_seed_a and model_seed_b must differ (two-model ensemble)");
        }
        if (min_wt_dice < 0.0 || min_wt_dice > 1.0 || min_tc_dice < 0.0 || min_tc_dice > 1.0) {
            throw ConfigError("experiment: dice thresholds must be in [0, 1]");
        }
        run.model.validate();
        run.train.validate();
        run.thresholds.validate();
    }
};

/// Parses an experiment spec file: the run-configuration keys plus
/// n_train, n_val, shape (or shape_x/shape_y/shape_z), data_seed,
/// model_seed_a, model_seed_b, min_wt_dice, min_tc_dice.
[[nodiscard]] inline ExperimentSpec parse_experiment(const std::string& text) {
    ExperimentSpec spec;
    bool lr_total_set = false;
    using runconfig_detail::parse_d;
    using runconfig_detail::parse_ll;
    runconfig_detail::for_each_kv(text, [&](const std::string& key, const std::string& value) {
        if (key == "n_train") spec.n_train = static_cast<int>(parse_ll(key, value));
        else if (key == "n_val") spec.n_val = static_cast<int>(parse_ll(key, value));
        else if (key == "shape") {
            const int s = static_cast<int>(parse_ll(key, value));
            spec.shape = {s, s, s};
        }
        else if (key == "shape_x") spec.shape[0] = static_cast<int>(parse_ll(key, value));
        else if (key == "shape_y") spec.shape[1] = static_cast<int>(parse_ll(key, value));
        else if (key == "shape_z") spec.shape[2] = static_cast<int>(parse_ll(key, value));
        else if (key == "data_seed") spec.data_seed = static_cast<std::uint64_t>(parse_ll(key, value));
        else if (key == "model_seed_a") spec.model_seed_a = static_cast<std::uint64_t>(parse_ll(key, value));
        else if (key == "model_seed_b") spec.model_seed_b = static_cast<std::uint64_t>(parse_ll(key, value));
        else if (key == "min_wt_dice") spec.min_wt_dice = parse_d(key, value);
        else if (key == "min_tc_dice") spec.min_tc_dice = parse_d(key, value);
        else lr_total_set = runconfig_apply(spec.run, key, value) || lr_total_set;
    });
    if (!lr_total_set) spec.run.train.schedule.total_epochs = spec.run.train.epochs;
    return spec;
}

[[nodiscard]] inline ExperimentSpec load_experiment(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return parse_experiment(std::string(bytes.begin(), bytes.end()));
}

/// Every key of the spec at its current value; parse_experiment round-trips it.
[[nodiscard]] inline std::string serialize_experiment(const ExperimentSpec& spec) {
    char buf[64];
    const auto num = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.9g", v);
        return std::string(buf);
    };
    std::string s = "# experiment\n";
    s += "n_train=" + std::to_string(spec.n_train) + "\n";
    s += "n_val=" + std::to_string(spec.n_val) + "\n";
    s += "shape_x=" + std::to_string(spec.shape[0]) + "\n";
    s += "shape_y=" + std::to_string(spec.shape[1]) + "\n";
    s += "shape_z=" + std::to_string(spec.shape[2]) + "\n";
    s += "data_seed=" + std::to_string(spec.data_seed) + "\n";
    s += "model_seed_a=" + std::to_string(spec.model_seed_a) + "\n";
    s += "model_seed_b=" + std::to_string(spec.model_seed_b) + "\n";
    s += "min_wt_dice=" + num(spec.min_wt_dice) + "\n";
    s += "min_tc_dice=" + num(spec.min_tc_dice) + "\n";
    s += serialize_runconfig(spec.run);
    return s;
}

/// Outcome of one experiment run. `passed` reports the quality bar only;
/// operational failures surface as exceptions instead.
struct ExperimentReport {
    AggregateReport metrics;          ///< held-out per-case metrics + aggregates
    std::string metrics_csv;          ///< exact bytes written to metrics.csv
    double mean_wt_dice = 0.0;
    double mean_tc_dice = 0.0;
    bool passed = false;
    TrainHistory history_a;
    TrainHistory history_b;
    std::int64_t peak_live_bytes = 0;  ///< max over held-out inference runs
    double template_correlation = 0.0; ///< registration fit of the tumor template
    double wall_seconds = 0.0;
};

namespace experiment_detail {

[[nodiscard]] inline std::string phantom_id(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "phantom_%03d", i);
    return buf;
}

inline void log_line(const std::function<void(const std::string&)>& log, const std::string& line) {
    if (log) log(line);
}

}  // namespace experiment_detail

/// Runs the full protocol under out_dir:
///   1. generate n_train + n_val synthetic cases under cases/ (seeded);
///   2. train two models from the distinct seeds, early-stopping each on the
///      held-in validation fifth; write train_a.csv / train_b.csv and
///      model_a.ckpt / model_b.ckpt;
///   3. reload both checkpoints and run flip-averaged sliding-window
///      inference of the ensemble on the held-out cases, writing
///      eval/<id>_pred.nii;
///   4. score every held-out case, write metrics.csv and error_map.nii;
///   5. build the mean tumor template, register it to the first held-out
///      case, and write the searchlight similarity map simmap.nii.
/// Identical specs produce byte-identical metrics.csv, checkpoints, and logs.
inline ExperimentReport run_experiment(const ExperimentSpec& spec, const std::filesystem::path& out_dir,
                                       const std::function<void(const std::string&)>& log = {}) {
    using experiment_detail::log_line;
    using experiment_detail::phantom_id;
    spec.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const std::filesystem::path cases_dir = out_dir / "cases";
    const std::filesystem::path eval_dir = out_dir / "eval";
    std::error_code ec;
    std::filesystem::create_directories(eval_dir, ec);
    if (ec) throw IoError("experiment: cannot create " + eval_dir.string() + ": " + ec.message());

    // 1. Dataset. Each case is seeded independently of every other, so the
    // data depend only on (data_seed, index).
    const int n_cases = spec.n_train + spec.n_val;
    for (int i = 0; i < n_cases; ++i) {
        Rng rng = Rng::stream(spec.data_seed, "phantom", i);
        write_case(cases_dir, phantom_id(i), make_phantom(rng, spec.shape));
    }
    log_line(log, "generated " + std::to_string(n_cases) + " cases under " + cases_dir.string());

    std::vector<Case> train_cases;
    train_cases.reserve(static_cast<std::size_t>(spec.n_train));
    TrainConfig tcfg = spec.run.train;
    tcfg.val_case_ids.clear();
    for (int i = 0; i < spec.n_train; ++i) {
        train_cases.push_back(load_case(cases_dir, phantom_id(i)));
        if (i % 5 == 4) tcfg.val_case_ids.push_back(train_cases.back().id);
    }

    // 2. Two models, two seeds, one protocol.
    ExperimentReport rep;
    const auto train_one = [&](std::uint64_t seed, const char* tag) {
        Model m = Model::build(spec.run.model, seed);
        TrainConfig c = tcfg;
        c.seed = seed;
        TrainHistory h = train(m, train_cases, c, [&](const EpochStats& e) {
            char line[160];
            std::snprintf(line, sizeof(line), "model %s epoch %d: train %.4f val %.4f (%.1fs)", tag,
                          e.epoch, e.train_loss, e.val_loss, e.wall_seconds);
            log_line(log, line);
        });
        save_checkpoint(m, out_dir / (std::string("model_") + tag + ".ckpt"));
        const std::string csv = write_train_log(h);
        write_file_bytes(out_dir / (std::string("train_") + tag + ".csv"),
                         std::vector<std::uint8_t>(csv.begin(), csv.end()));
        return h;
    };
    rep.history_a = train_one(spec.model_seed_a, "a");
    rep.history_b = train_one(spec.model_seed_b, "b");
    train_cases.clear();
    train_cases.shrink_to_fit();

    // 3 + 4. Held-out inference from the reloaded checkpoints, then scoring.
    Model model_a = load_checkpoint(out_dir / "model_a.ckpt");
    Model model_b = load_checkpoint(out_dir / "model_b.ckpt");
    const std::vector<Model*> ensemble{&model_a, &model_b};
    PredictOptions popts;
    popts.thresholds = spec.run.thresholds;
    popts.budget_bytes = spec.run.budget_bytes;
    std::vector<CaseMetrics> scored;
    std::vector<std::pair<Volume, Volume>> disagreements;
    for (int i = spec.n_train; i < n_cases; ++i) {
        const std::string id = phantom_id(i);
        Case c = load_case(cases_dir, id);
        const PatchPlan plan = patch_grid(c.channels[0].shape(), spec.run.model.patch);
        PredictResult pred = sliding_window_predict(ensemble, c.channels, plan, popts);
        rep.peak_live_bytes = std::max(rep.peak_live_bytes, pred.budget.peak_live_bytes);
        write_labels_file(eval_dir / (id + "_pred.nii"), pred.labels);
        const RegionMasks pm = region_encode(pred.labels);
        scored.push_back(case_metrics(id, pm, *c.regions));
        disagreements.emplace_back(pm.wt, c.regions->wt);
        disagreements.emplace_back(pm.tc, c.regions->tc);
        disagreements.emplace_back(pm.et, c.regions->et);
        char line[128];
        std::snprintf(line, sizeof(line), "%s: dice wt %.3f tc %.3f et %.3f", id.c_str(), scored.back().wt.dice,
                      scored.back().tc.dice, scored.back().et.dice);
        log_line(log, line);
    }

    rep.metrics = aggregate(std::move(scored));
    rep.metrics_csv = write_metrics_csv(rep.metrics);
    write_file_bytes(out_dir / "metrics.csv",
                     std::vector<std::uint8_t>(rep.metrics_csv.begin(), rep.metrics_csv.end()));
    write_volume_file(out_dir / "error_map.nii", error_map(disagreements));
    rep.mean_wt_dice = rep.metrics.columns[1].mean;  // metric_columns[1] == dice_wt
    rep.mean_tc_dice = rep.metrics.columns[2].mean;  // metric_columns[2] == dice_tc
    rep.passed = rep.mean_wt_dice >= spec.min_wt_dice && rep.mean_tc_dice >= spec.min_tc_dice;

    // 5. Population tumor template registered onto the first held-out case,
    // scored voxelwise with the searchlight correlation map.
    std::vector<Volume> wt_masks;
    wt_masks.reserve(static_cast<std::size_t>(spec.n_train));
    for (int i = 0; i < spec.n_train; ++i) {
        Case c = load_case(cases_dir, phantom_id(i));
        wt_masks.push_back(std::move(c.regions->wt));
    }
    const Volume tmpl = average_tumor_template(wt_masks);
    wt_masks.clear();
    Case first_eval = load_case(cases_dir, phantom_id(spec.n_train));
    const Volume& fixed_wt = first_eval.regions->wt;
    const RegistrationResult reg = affine_register(tmpl, fixed_wt);
    rep.template_correlation = reg.correlation;
    const Volume aligned = resample(tmpl, reg.transform, grid_of(fixed_wt));
    write_volume_file(out_dir / "simmap.nii", normalize_map(searchlight_pearson(aligned, fixed_wt)));
    log_line(log, "template registration correlation " + std::to_string(reg.correlation));

    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

}  // namespace segvae
