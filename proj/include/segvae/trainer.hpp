#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "segvae/errors.hpp"
#include "segvae/losses.hpp"
#include "segvae/model.hpp"
#include "segvae/pipeline.hpp"

namespace segvae {

// ---------------------------------------------------------------------------
// Training configuration and history
// ---------------------------------------------------------------------------

struct TrainConfig {
    int epochs = 50;             ///< Ne; lr_schedule's domain is [0, Ne)
    int samples_per_epoch = 2101;
    int patience = 2;            ///< consecutive non-improving epochs before stopping
    double p_pos = 0.7;          ///< tumor-biased sampling probability
    std::uint64_t seed = 0;
    ScheduleParams schedule{};
    LossWeights weights{};
    std::vector<std::string> val_case_ids;  ///< which of the supplied cases validate
    int val_patches_per_case = 2;           ///< fixed deterministic patches per val case
    std::int64_t kl_divisor = 0;            ///< 0 → channels · patch voxels of the input

    void validate() const {
        if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
        if (samples_per_epoch < 1) throw ConfigError("TrainConfig: samples_per_epoch must be >= 1");
        if (patience < 1) throw ConfigError("TrainConfig: patience must be >= 1");
        if (p_pos < 0.0 || p_pos > 1.0) throw ConfigError("TrainConfig: p_pos must lie in [0,1]");
        if (val_patches_per_case < 1) throw ConfigError("TrainConfig: val_patches_per_case must be >= 1");
        if (epochs > schedule.total_epochs) {
            throw ConfigError("TrainConfig: epochs " + std::to_string(epochs) +
                              " exceed schedule total_epochs " + std::to_string(schedule.total_epochs));
        }
    }
};

/// One epoch's record. The loss components are the validation means, pairing
/// with val_loss; lr always equals lr_schedule(epoch).
struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double l2 = 0.0;
    double kl = 0.0;
    double dice_wt = 0.0;
    double dice_tc = 0.0;
    double dice_et = 0.0;
    double wall_seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    int best_epoch = -1;
    double best_val_loss = 0.0;
};

/// Line-oriented training log in the documented column order. Wall time is
/// deliberately excluded so the log is bit-reproducible.
[[nodiscard]] inline std::string write_train_log(const TrainHistory& h) {
    std::string out = "epoch,lr,train_loss,val_loss,l2,kl,dice_wt,dice_tc,dice_et\n";
    char buf[256];
    for (const EpochStats& e : h.epochs) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", e.epoch, e.lr,
                      e.train_loss, e.val_loss, e.l2, e.kl, e.dice_wt, e.dice_tc, e.dice_et);
        out += buf;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Early stopping
// ---------------------------------------------------------------------------

/// The early-stop rule, factored out so the hand-traceable contract is
/// testable in isolation: training stops once `patience` consecutive epochs
/// have failed to strictly decrease the best validation loss. Training
/// therefore never runs more than best_epoch + patience + 1 epochs.
struct EarlyStopper {
    int patience = 2;
    int best_epoch = -1;
    double best_loss = std::numeric_limits<double>::infinity();

    /// Records epoch e's validation loss; true when it set a new best.
    bool record(int epoch, double loss) {
        if (loss < best_loss) {
            best_loss = loss;
            best_epoch = epoch;
            return true;
        }
        return false;
    }

    [[nodiscard]] bool should_stop(int epoch) const noexcept { return epoch - best_epoch >= patience; }
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace train_detail {

struct PreparedCase {
    const Case* c = nullptr;
    PatchPlan plan;
    std::vector<int> positive;
};

[[nodiscard]] inline std::vector<PreparedCase> prepare(const std::vector<const Case*>& cases,
                                                       const ModelConfig& cfg) {
    std::vector<PreparedCase> out;
    out.reserve(cases.size());
    for (const Case* c : cases) {
        if (static_cast<int>(c->channels.size()) != cfg.in_channels) {
            throw ConfigError("train: case '" + c->id + "' has " + std::to_string(c->channels.size()) +
                              " channels, model expects " + std::to_string(cfg.in_channels));
        }
        if (!c->regions) throw DataError("train: case '" + c->id + "' has no segmentation");
        PreparedCase p;
        p.c = c;
        p.plan = patch_grid(c->channels[0].shape(), cfg.patch);
        p.positive = positive_offsets(c->regions->wt, p.plan);
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace train_detail

/// Trains in place: per epoch, samples_per_epoch augmented tumor-biased
/// patches at lr_schedule(e), one Adam step per sample (batch 1); validation
/// runs on a fixed deterministic patch set (tumor-biased, un-augmented,
/// regenerated identically every epoch). Stops once the validation loss has
/// not decreased for `patience` consecutive epochs and restores the best
/// epoch's parameters before returning.
inline TrainHistory train(Model& model, const std::vector<Case>& cases, const TrainConfig& cfg,
                          const std::function<void(const EpochStats&)>& on_epoch = {}) {
    cfg.validate();
    std::vector<const Case*> train_cases, val_cases;
    for (const Case& c : cases) {
        const bool is_val = std::find(cfg.val_case_ids.begin(), cfg.val_case_ids.end(), c.id) !=
                            cfg.val_case_ids.end();
        (is_val ? val_cases : train_cases).push_back(&c);
    }
    if (train_cases.empty()) throw ConfigError("train: no training cases");
    if (val_cases.empty()) throw ConfigError("train: no validation cases");

    const ModelConfig& mcfg = model.config();
    const auto train_prep = train_detail::prepare(train_cases, mcfg);
    const auto val_prep = train_detail::prepare(val_cases, mcfg);

    TrainHistory history;
    EarlyStopper stopper{cfg.patience};
    std::vector<Tensor> best_params;

    for (int e = 0; e < cfg.epochs; ++e) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_schedule(e, cfg.schedule);

        double train_sum = 0.0;
        for (int s = 0; s < cfg.samples_per_epoch; ++s) {
            Rng rs = Rng::stream(cfg.seed, "train", e, s);
            const auto& pc = train_prep[rs.uniform_index(train_prep.size())];
            CaseSample sample = sample_patch(*pc.c, pc.plan, pc.positive, rs, cfg.p_pos);
            sample = augment_flip(std::move(sample), rs);
            sample = augment_scale(std::move(sample), rs);
            const Tensor targets = to_region_targets(sample.regions);

            model.zero_grads();
            const ModelOutput out = model.forward(sample.channels, ForwardMode::train, &rs);
            const CombinedLoss loss =
                model_loss(out, sample.channels, targets, cfg.weights, cfg.kl_divisor);
            if (!std::isfinite(loss.total)) {
                throw DivergenceError("train: non-finite loss at epoch " + std::to_string(e) +
                                      ", sample " + std::to_string(s));
            }
            model.backward(loss);
            model.clear_saved();
            model.adam_update(static_cast<float>(lr));
            train_sum += loss.total;
        }

        EpochStats st;
        st.epoch = e;
        st.lr = lr;
        st.train_loss = train_sum / cfg.samples_per_epoch;

        double val_sum = 0.0;
        int val_n = 0;
        for (std::size_t vc = 0; vc < val_prep.size(); ++vc) {
            for (int k = 0; k < cfg.val_patches_per_case; ++k) {
                Rng rv = Rng::stream(cfg.seed, "val", vc, k);
                const auto& pc = val_prep[vc];
                const CaseSample sample = sample_patch(*pc.c, pc.plan, pc.positive, rv, 1.0);
                const Tensor targets = to_region_targets(sample.regions);
                const ModelOutput out = model.forward(sample.channels, ForwardMode::val);
                const CombinedLoss loss =
                    model_loss(out, sample.channels, targets, cfg.weights, cfg.kl_divisor);
                model.clear_saved();
                if (!std::isfinite(loss.total)) {
                    throw DivergenceError("train: non-finite validation loss at epoch " +
                                          std::to_string(e));
                }
                val_sum += loss.total;
                st.l2 += loss.l2;
                st.kl += loss.kl;
                st.dice_wt += loss.dice_wt;
                st.dice_tc += loss.dice_tc;
                st.dice_et += loss.dice_et;
                ++val_n;
            }
        }
        st.val_loss = val_sum / val_n;
        st.l2 /= val_n;
        st.kl /= val_n;
        st.dice_wt /= val_n;
        st.dice_tc /= val_n;
        st.dice_et /= val_n;
        st.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        history.epochs.push_back(st);
        if (on_epoch) on_epoch(st);

        if (stopper.record(e, st.val_loss)) best_params = model.snapshot_params();
        if (stopper.should_stop(e)) break;
    }

    model.restore_params(best_params);
    history.best_epoch = stopper.best_epoch;
    history.best_val_loss = stopper.best_loss;
    return history;
}

}  // namespace segvae
