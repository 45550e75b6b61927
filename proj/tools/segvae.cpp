// segvae — memory-budgeted volumetric segmentation toolkit.
//
// Subcommands: phantom, train, infer, eval, simmap, gradcheck, experiment.
// Exit codes are a stable contract:
//   0 success, 2 usage/config, 3 I/O, 4 training divergence, 5 memory budget
//   violation, 6 gradient-check failure. An experiment that completes but
//   misses its quality bar exits 1 (operational failures keep the codes above).

#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "segvae/segvae.hpp"

namespace {

using namespace segvae;

[[nodiscard]] std::string read_text(const std::filesystem::path& p) {
    const auto bytes = read_file_bytes(p);
    return std::string(bytes.begin(), bytes.end());
}

void write_text(const std::filesystem::path& p, const std::string& s) {
    write_file_bytes(p, std::vector<std::uint8_t>(s.begin(), s.end()));
}

/// Config text = optional file + `--set key=value` overrides (last wins).
[[nodiscard]] std::string combined_config(const std::string& file, const std::vector<std::string>& sets) {
    std::string text;
    if (!file.empty()) text = read_text(file);
    for (const std::string& kv : sets) {
        text += '\n';
        text += kv;
    }
    text += '\n';
    return text;
}

// ---- phantom ----

int cmd_phantom(const std::string& out, int count, int start, int shape, std::uint64_t seed) {
    if (count < 1) throw ConfigError("phantom: --count must be >= 1");
    const Index3 s{shape, shape, shape};
    for (int i = start; i < start + count; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "phantom_%03d", i);
        Rng rng = Rng::stream(seed, "phantom", i);
        write_case(out, id, make_phantom(rng, s));
        std::printf("wrote %s/%s\n", out.c_str(), id);
    }
    return 0;
}

// ---- train ----

int cmd_train(const std::string& cases_dir, const std::string& out, const std::string& config_file,
              const std::vector<std::string>& sets) {
    const RunConfig rc = parse_runconfig(combined_config(config_file, sets));
    std::vector<std::string> ids = list_cases(cases_dir);
    if (ids.empty()) throw DataError("train: no cases under " + cases_dir);
    std::vector<Case> cases;
    cases.reserve(ids.size());
    for (const std::string& id : ids) cases.push_back(load_case(cases_dir, id));
    TrainConfig tc = rc.train;
    if (tc.val_case_ids.empty()) {
        // Default split: every fifth case (by sorted id) is validation.
        for (std::size_t i = 4; i < ids.size(); i += 5) tc.val_case_ids.push_back(ids[i]);
        if (tc.val_case_ids.empty()) {
            throw ConfigError("train: need >= 5 cases for the default validation split "
                              "(or set val_cases explicitly)");
        }
    }
    std::error_code ec;
    std::filesystem::create_directories(out, ec);
    if (ec) throw IoError("train: cannot create " + out + ": " + ec.message());
    Model model = Model::build(rc.model, tc.seed);
    const TrainHistory h = train(model, cases, tc, [](const EpochStats& e) {
        std::printf("epoch %d: lr %.6g train %.6g val %.6g dice wt %.3f tc %.3f et %.3f (%.1fs)\n",
                    e.epoch, e.lr, e.train_loss, e.val_loss, e.dice_wt, e.dice_tc, e.dice_et,
                    e.wall_seconds);
        std::fflush(stdout);
    });
    save_checkpoint(model, std::filesystem::path(out) / "model.ckpt");
    write_text(std::filesystem::path(out) / "train.csv", write_train_log(h));
    std::printf("best_epoch=%d best_val_loss=%.9g\n", h.best_epoch, h.best_val_loss);
    std::printf("wrote %s/model.ckpt and %s/train.csv\n", out.c_str(), out.c_str());
    return 0;
}

// ---- infer ----

int cmd_infer(const std::string& cases_dir, const std::string& case_id,
              const std::vector<std::string>& checkpoints, const std::string& out, bool no_tta,
              std::int64_t budget, const std::vector<std::string>& sets) {
    if (checkpoints.empty()) throw ConfigError("infer: at least one --model checkpoint is required");
    RunConfig rc;
    if (!sets.empty()) rc = parse_runconfig(combined_config("", sets));
    std::vector<Model> models;
    models.reserve(checkpoints.size());
    for (const std::string& p : checkpoints) models.push_back(load_checkpoint(p));
    std::vector<Model*> ptrs;
    for (Model& m : models) ptrs.push_back(&m);

    CaseLoadOptions lo;
    lo.require_seg = false;
    const Case c = load_case(cases_dir, case_id, lo);
    const PatchPlan plan = patch_grid(c.channels[0].shape(), models[0].config().patch);
    PredictOptions po;
    po.tta = !no_tta;
    po.thresholds = rc.thresholds;
    po.budget_bytes = budget;
    const PredictResult res = sliding_window_predict(ptrs, c.channels, plan, po);
    write_labels_file(out, res.labels);
    std::printf("patches=%zu\n", plan.offsets.size());
    std::printf("estimates_per_patch=%d\n", res.estimates_per_patch);
    std::printf("thresholds=wt:%g,tc:%g,et:%g\n", po.thresholds.wt, po.thresholds.tc, po.thresholds.et);
    std::printf("peak_live_bytes=%lld\n", static_cast<long long>(res.budget.peak_live_bytes));
    std::printf("budget_bytes=%lld\n", static_cast<long long>(res.budget.budget_bytes));
    std::printf("wrote %s\n", out.c_str());
    return 0;
}

// ---- eval ----

int cmd_eval(const std::string& truth_dir, const std::string& pred_dir, const std::string& out) {
    const std::vector<std::string> ids = list_cases(truth_dir);
    if (ids.empty()) throw DataError("eval: no cases under " + truth_dir);
    std::vector<CaseMetrics> scored;
    for (const std::string& id : ids) {
        const Case truth = load_case(truth_dir, id, {.require_seg = true, .normalize = false});
        std::filesystem::path pred_path = std::filesystem::path(pred_dir) / (id + "_pred.nii");
        if (!std::filesystem::exists(pred_path)) {
            pred_path = std::filesystem::path(pred_dir) / (id + ".nii");
        }
        if (!std::filesystem::exists(pred_path)) {
            throw DataError("eval: no prediction for case '" + id + "' under " + pred_dir);
        }
        const LabelVolume pred = read_labels_file(pred_path);
        scored.push_back(case_metrics(id, region_encode(pred), *truth.regions));
    }
    const AggregateReport rep = aggregate(std::move(scored));
    write_text(out, write_metrics_csv(rep));
    std::printf("cases=%zu\n", rep.cases.size());
    std::printf("mean_dice=wt:%.6g,tc:%.6g,et:%.6g\n", rep.columns[1].mean, rep.columns[2].mean,
                rep.columns[0].mean);
    std::printf("wrote %s\n", out.c_str());
    return 0;
}

// ---- simmap ----

int cmd_simmap(const std::string& moving_path, const std::string& fixed_path, const std::string& out,
               double radius, bool no_register) {
    const Volume moving = read_volume_file(moving_path);
    const Volume fixed = read_volume_file(fixed_path);
    Volume aligned = moving;
    if (!no_register) {
        const RegistrationResult reg = affine_register(moving, fixed);
        aligned = resample(moving, reg.transform, grid_of(fixed));
        std::printf("correlation=%.6g\n", reg.correlation);
        std::printf("translation_mm=%g,%g,%g\n", reg.transform.translation_mm[0],
                    reg.transform.translation_mm[1], reg.transform.translation_mm[2]);
        std::printf("scale=%g,%g,%g\n", reg.transform.scale[0], reg.transform.scale[1],
                    reg.transform.scale[2]);
    }
    std::printf("radius_mm=%g\n", radius);
    const Volume sim = searchlight_pearson(aligned, fixed, static_cast<float>(radius));
    write_volume_file(out, normalize_map(sim));
    std::printf("wrote %s\n", out.c_str());
    return 0;
}

// ---- gradcheck ----

int cmd_gradcheck(std::uint64_t seed, int seeds) {
    if (seeds < 1) throw ConfigError("gradcheck: --seeds must be >= 1");
    bool all_pass = true;
    for (int i = 0; i < seeds; ++i) {
        const GradCheckReport rep = gradcheck_suite(seed + static_cast<std::uint64_t>(i));
        std::printf("seed %llu\n%s", static_cast<unsigned long long>(seed + static_cast<std::uint64_t>(i)),
                    rep.to_text().c_str());
        std::fflush(stdout);
        all_pass = all_pass && rep.all_pass();
    }
    return all_pass ? 0 : static_cast<int>(ExitCode::gradcheck);
}

// ---- experiment ----

int cmd_experiment(const std::string& spec_file, const std::string& out,
                   const std::vector<std::string>& sets) {
    std::string text;
    if (spec_file.empty()) text = combined_config("", sets);  // defaults + overrides
    else text = combined_config(spec_file, sets);
    const ExperimentSpec spec = parse_experiment(text);
    const ExperimentReport rep = run_experiment(spec, out, [](const std::string& line) {
        std::printf("%s\n", line.c_str());
        std::fflush(stdout);
    });
    std::printf("mean_wt_dice=%.6g\n", rep.mean_wt_dice);
    std::printf("mean_tc_dice=%.6g\n", rep.mean_tc_dice);
    std::printf("peak_live_bytes=%lld\n", static_cast<long long>(rep.peak_live_bytes));
    std::printf("wall_seconds=%.1f\n", rep.wall_seconds);
    std::printf("quality=%s (wt >= %g, tc >= %g)\n", rep.passed ? "PASS" : "FAIL", spec.min_wt_dice,
                spec.min_tc_dice);
    return rep.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Memory-budgeted volumetric segmentation toolkit"};
    app.require_subcommand(1);
    int workers = 0;
    app.add_option("--workers", workers,
                   "worker threads (default: SEGVAE_WORKERS or hardware); 1 = reference mode");

    // phantom
    auto* p = app.add_subcommand("phantom", "generate synthetic labeled cases");
    std::string p_out;
    int p_count = 1, p_start = 0, p_shape = 64;
    std::uint64_t p_seed = 1;
    p->add_option("--out", p_out, "output case directory")->required();
    p->add_option("--count", p_count, "number of cases");
    p->add_option("--start", p_start, "first case index");
    p->add_option("--shape", p_shape, "cubic case extent (voxels, >= 32)");
    p->add_option("--seed", p_seed, "data seed");

    // train
    auto* t = app.add_subcommand("train", "train one model on a case directory");
    std::string t_cases, t_out, t_config;
    std::vector<std::string> t_set;
    t->add_option("--cases", t_cases, "case directory")->required();
    t->add_option("--out", t_out, "output directory (model.ckpt, train.csv)")->required();
    t->add_option("--config", t_config, "key=value run configuration file");
    t->add_option("--set", t_set, "override one config key (key=value, repeatable)");

    // infer
    auto* n = app.add_subcommand("infer", "budgeted sliding-window inference");
    std::string n_cases, n_case, n_out;
    std::vector<std::string> n_models, n_set;
    bool n_no_tta = false;
    std::int64_t n_budget = 0;
    n->add_option("--cases", n_cases, "case directory")->required();
    n->add_option("--case", n_case, "case id to segment")->required();
    n->add_option("--model", n_models, "model checkpoint (repeat for an ensemble)")->required();
    n->add_option("--out", n_out, "output label volume (.nii)")->required();
    n->add_flag("--no-tta", n_no_tta, "skip flip-averaged test-time augmentation");
    n->add_option("--budget", n_budget, "live-byte cap (0 = derive from a one-patch probe)");
    n->add_option("--set", n_set, "override one config key, e.g. thr_wt=0.5 (repeatable)");

    // eval
    auto* e = app.add_subcommand("eval", "score predictions against reference cases");
    std::string e_truth, e_pred, e_out;
    e->add_option("--truth", e_truth, "reference case directory (with seg.nii)")->required();
    e->add_option("--pred", e_pred, "directory of <id>_pred.nii or <id>.nii label volumes")->required();
    e->add_option("--out", e_out, "metrics CSV path")->required();

    // simmap
    auto* s = app.add_subcommand("simmap", "register a template and map searchlight similarity");
    std::string s_moving, s_fixed, s_out;
    double s_radius = 7.0;
    bool s_noreg = false;
    s->add_option("--moving", s_moving, "template volume (.nii)")->required();
    s->add_option("--fixed", s_fixed, "target volume (.nii)")->required();
    s->add_option("--out", s_out, "output similarity map (.nii)")->required();
    s->add_option("--radius", s_radius, "searchlight radius in mm");
    s->add_flag("--no-register", s_noreg, "skip affine registration (volumes already aligned)");

    // gradcheck
    auto* g = app.add_subcommand("gradcheck", "finite-difference audit of every backward pass");
    std::uint64_t g_seed = 1234;
    int g_seeds = 1;
    g->add_option("--seed", g_seed, "base seed");
    g->add_option("--seeds", g_seeds, "number of consecutive seeds to audit");

    // experiment
    auto* x = app.add_subcommand("experiment", "reproducible end-to-end desk experiment");
    std::string x_spec, x_out;
    std::vector<std::string> x_set;
    x->add_option("--spec", x_spec, "experiment spec file (defaults: desk protocol)");
    x->add_option("--out", x_out, "output directory")->required();
    x->add_option("--set", x_set, "override one spec key (key=value, repeatable)");

    for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : static_cast<int>(segvae::ExitCode::usage);
    }

    try {
        if (workers > 0) segvae::set_worker_count(workers);
        if (*p) return cmd_phantom(p_out, p_count, p_start, p_shape, p_seed);
        if (*t) return cmd_train(t_cases, t_out, t_config, t_set);
        if (*n) return cmd_infer(n_cases, n_case, n_models, n_out, n_no_tta, n_budget, n_set);
        if (*e) return cmd_eval(e_truth, e_pred, e_out);
        if (*s) return cmd_simmap(s_moving, s_fixed, s_out, s_radius, s_noreg);
        if (*g) return cmd_gradcheck(g_seed, g_seeds);
        if (*x) return cmd_experiment(x_spec, x_out, x_set);
    } catch (const segvae::Error& err) {
        std::fprintf(stderr, "error: %s\n", err.what());
        return static_cast<int>(err.exit_code());
    } catch (const std::exception& err) {
        std::fprintf(stderr, "internal error: %s\n", err.what());
        return 1;
    }
    return 0;
}
