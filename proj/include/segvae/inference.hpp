#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "segvae/errors.hpp"
#include "segvae/memory.hpp"
#include "segvae/model.hpp"
#include "segvae/pipeline.hpp"
#include "segvae/volume.hpp"

namespace segvae {

// ---------------------------------------------------------------------------
// Thresholds and probability maps
// ---------------------------------------------------------------------------

struct Thresholds {
    float wt = 0.55f;
    float tc = 0.5f;
    float et = 0.4f;

    void validate() const {
        for (float v : {wt, tc, et}) {
            if (!(v > 0.0f && v < 1.0f)) {
                throw ConfigError("Thresholds: value " + std::to_string(v) + " outside (0,1)");
            }
        }
    }
};

/// Region probabilities on the full (cropped) grid, each value in [0, 1].
struct ProbMaps {
    Volume wt, tc, et;
};

/// Live-byte accounting of one predict call against its budget.
struct MemoryBudget {
    std::int64_t peak_live_bytes = 0;
    std::int64_t budget_bytes = 0;
};

// ---------------------------------------------------------------------------
// Test-time augmentation variants
// ---------------------------------------------------------------------------

/// The 8 sign combinations of axis flips, indexed so bit 0 = x, bit 1 = y,
/// bit 2 = z. Each flip set is its own inverse, so the same descriptor
/// un-flips a prediction made from the flipped input.
inline constexpr std::array<std::array<bool, 3>, 8> tta_flips{{
    {false, false, false},
    {true, false, false},
    {false, true, false},
    {true, true, false},
    {false, false, true},
    {true, false, true},
    {false, true, true},
    {true, true, true},
}};

/// The 8 flip variants of x, in tta_flips order (variant 0 is x itself). The
/// inverse descriptor of variant i is tta_flips[i] again.
[[nodiscard]] inline std::vector<Tensor> tta_variants(const Tensor& x) {
    std::vector<Tensor> out;
    out.reserve(tta_flips.size());
    for (const auto& f : tta_flips) out.push_back(flip_tensor(x, f));
    return out;
}

// ---------------------------------------------------------------------------
// Thresholding with nesting repair
// ---------------------------------------------------------------------------

/// mask_r = (p_r ≥ t_r), then nesting is repaired by union: tc |= et, wt |= tc.
[[nodiscard]] inline RegionMasks threshold_and_nest(const ProbMaps& p, const Thresholds& t) {
    t.validate();
    if (p.wt.shape() != p.tc.shape() || p.wt.shape() != p.et.shape()) {
        throw ShapeError("threshold_and_nest: probability grids differ");
    }
    RegionMasks m{Volume(p.wt.shape(), p.wt.spacing_mm(), p.wt.origin_mm()),
                  Volume(p.wt.shape(), p.wt.spacing_mm(), p.wt.origin_mm()),
                  Volume(p.wt.shape(), p.wt.spacing_mm(), p.wt.origin_mm())};
    const std::int64_t n = m.wt.size();
    for (std::int64_t i = 0; i < n; ++i) {
        const bool et = p.et.data()[i] >= t.et;
        const bool tc = et || p.tc.data()[i] >= t.tc;
        const bool wt = tc || p.wt.data()[i] >= t.wt;
        m.et.data()[i] = et ? 1.0f : 0.0f;
        m.tc.data()[i] = tc ? 1.0f : 0.0f;
        m.wt.data()[i] = wt ? 1.0f : 0.0f;
    }
    return m;
}

// ---------------------------------------------------------------------------
// Sliding-window prediction
// ---------------------------------------------------------------------------

/// Maps one input patch [C, pz, py, px] to region probabilities [3, pz, py, px].
using PatchPredictor = std::function<Tensor(const Tensor&)>;

struct PredictOptions {
    bool tta = true;
    Thresholds thresholds{};
    /// Live-byte cap during prediction. 0 derives the budget from a one-patch
    /// probe: (live bytes + one patch's activations for one model) + 10% slack.
    std::int64_t budget_bytes = 0;
};

struct PredictResult {
    ProbMaps probs;
    LabelVolume labels;
    MemoryBudget budget;
    int estimates_per_patch = 0;
    /// Per-voxel count of accumulated estimates (multiples of estimates_per_patch).
    Volume estimate_count;
};

namespace infer_detail {

inline void accumulate_probs(const Tensor& probs, Index3 off, std::array<Volume*, 3> sums) {
    const int pz = probs.shape()[1], py = probs.shape()[2], px = probs.shape()[3];
    const std::int64_t chan = static_cast<std::int64_t>(pz) * py * px;
    for (int r = 0; r < 3; ++r) {
        const float* src = probs.data() + r * chan;
        Volume& dst = *sums[static_cast<std::size_t>(r)];
        for (int z = 0; z < pz; ++z) {
            for (int y = 0; y < py; ++y) {
                float* row = dst.data() + dst.index(off[0], off[1] + y, off[2] + z);
                for (int x = 0; x < px; ++x) row[x] += src[x];
                src += px;
            }
        }
    }
}

}  // namespace infer_detail

/// Core sliding-window loop over injectable per-patch predictors: for every
/// patch offset, each flip variant (8 under TTA, else 1) of the input goes
/// through every predictor; predictions are un-flipped and summed per voxel
/// together with an estimate count, then averaged, thresholded, and decoded.
/// Patches run strictly sequentially and live tensor bytes are asserted
/// against the budget throughout.
[[nodiscard]] inline PredictResult sliding_window_predict(const std::vector<PatchPredictor>& predictors,
                                                          const std::vector<Volume>& volumes,
                                                          const PatchPlan& plan,
                                                          const PredictOptions& opts = {}) {
    if (predictors.empty()) throw ConfigError("sliding_window_predict: no models");
    if (volumes.empty()) throw ConfigError("sliding_window_predict: no input volumes");
    if (plan.offsets.empty()) throw ConfigError("sliding_window_predict: empty patch plan");
    opts.thresholds.validate();
    const Index3 shape = volumes[0].shape();
    for (const Volume& v : volumes) {
        if (v.shape() != shape) {
            throw ShapeError("sliding_window_predict: input grids differ: " + to_string(v.shape()) +
                             " vs " + to_string(shape));
        }
    }

    MemTracker& mem = MemTracker::instance();
    const int n_variants = opts.tta ? static_cast<int>(tta_flips.size()) : 1;
    const int estimates = n_variants * static_cast<int>(predictors.size());

    PredictResult res;
    res.estimates_per_patch = estimates;

    const MemScope scope("infer.accumulate");
    std::array<Volume, 3> sums{Volume(shape, volumes[0].spacing_mm(), volumes[0].origin_mm()),
                               Volume(shape, volumes[0].spacing_mm(), volumes[0].origin_mm()),
                               Volume(shape, volumes[0].spacing_mm(), volumes[0].origin_mm())};
    Volume count(shape, volumes[0].spacing_mm(), volumes[0].origin_mm());

    // One estimate: extract, flip, predict, un-flip. The probe run measures
    // the peak footprint of exactly this body (accumulation itself allocates
    // nothing), so a derived budget of probe-peak + 10% slack holds for the
    // whole strictly-sequential loop.
    const auto run_estimate = [&](Index3 off, const std::array<bool, 3>& flips,
                                  const PatchPredictor& predict) {
        Tensor patch = extract_patch(volumes, off, plan.patch_shape);
        Tensor flipped = flip_tensor(patch, flips);
        patch.release();
        Tensor probs = predict(flipped);
        flipped.release();
        if (probs.shape() != std::vector<int>{3, plan.patch_shape[2], plan.patch_shape[1],
                                              plan.patch_shape[0]}) {
            throw ShapeError("sliding_window_predict: predictor returned wrong shape");
        }
        return flip_tensor(probs, flips);
    };

    std::int64_t budget = opts.budget_bytes;
    if (budget <= 0) {
        mem.reset_peak();
        (void)run_estimate(plan.offsets[0], tta_flips[0], predictors[0]);
        budget = mem.peak_bytes() + mem.peak_bytes() / 10;
    }
    const BudgetGuard guard(budget);
    mem.reset_peak();

    for (const Index3& off : plan.offsets) {
        for (int v = 0; v < n_variants; ++v) {
            for (const PatchPredictor& predict : predictors) {
                const Tensor unflipped = run_estimate(off, tta_flips[static_cast<std::size_t>(v)], predict);
                infer_detail::accumulate_probs(unflipped, off, {&sums[0], &sums[1], &sums[2]});
            }
        }
        for (int z = 0; z < plan.patch_shape[2]; ++z) {
            for (int y = 0; y < plan.patch_shape[1]; ++y) {
                float* row = count.data() + count.index(off[0], off[1] + y, off[2] + z);
                for (int x = 0; x < plan.patch_shape[0]; ++x) row[x] += static_cast<float>(estimates);
            }
        }
    }

    for (std::int64_t i = 0; i < count.size(); ++i) {
        if (count.data()[i] == 0.0f) {
            throw StateError("sliding_window_predict: patch plan does not cover voxel " +
                             std::to_string(i));
        }
        for (Volume& s : sums) s.data()[i] /= count.data()[i];
    }

    res.probs = ProbMaps{std::move(sums[0]), std::move(sums[1]), std::move(sums[2])};

    // Fused threshold_and_nest ∘ region_decode: labels come straight from the
    // probability maps so no intermediate mask volumes are ever live under
    // the budget (region_encode(labels) equals threshold_and_nest(probs, t)).
    const Thresholds& t = opts.thresholds;
    res.labels = LabelVolume(shape, volumes[0].spacing_mm(), volumes[0].origin_mm());
    for (std::int64_t i = 0; i < res.labels.size(); ++i) {
        const bool et = res.probs.et.data()[i] >= t.et;
        const bool tc = et || res.probs.tc.data()[i] >= t.tc;
        const bool wt = tc || res.probs.wt.data()[i] >= t.wt;
        res.labels.data()[i] = et ? 4 : tc ? 1 : wt ? 2 : 0;
    }
    res.estimate_count = std::move(count);
    res.budget = MemoryBudget{mem.peak_bytes(), budget};
    return res;
}

/// Ensemble entry point: all checkpoints must share one config whose
/// in_channels matches the input volume count; the plan's patch must be
/// divisible by 2^levels so the U-Net's skip connections re-align.
[[nodiscard]] inline PredictResult sliding_window_predict(const std::vector<Model*>& models,
                                                          const std::vector<Volume>& volumes,
                                                          const PatchPlan& plan,
                                                          const PredictOptions& opts = {}) {
    if (models.empty()) throw ConfigError("sliding_window_predict: no models");
    const ModelConfig& cfg = models[0]->config();
    for (const Model* m : models) {
        if (!(m->config() == cfg)) {
            throw ConfigError("sliding_window_predict: ensemble checkpoints have different configs");
        }
    }
    if (cfg.in_channels != static_cast<int>(volumes.size())) {
        throw ConfigError("sliding_window_predict: model expects " + std::to_string(cfg.in_channels) +
                          " channels, got " + std::to_string(volumes.size()));
    }
    const int div = 1 << cfg.levels;
    for (int a = 0; a < 3; ++a) {
        if (plan.patch_shape[a] % div != 0) {
            throw ConfigError("sliding_window_predict: patch " + to_string(plan.patch_shape) +
                              " not divisible by 2^levels = " + std::to_string(div));
        }
    }
    std::vector<PatchPredictor> predictors;
    predictors.reserve(models.size());
    for (Model* m : models) {
        predictors.push_back([m](const Tensor& x) { return m->forward(x, ForwardMode::infer).seg_probs; });
    }
    return sliding_window_predict(predictors, volumes, plan, opts);
}

}  // namespace segvae
