#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>

#include "segvae/errors.hpp"
#include "segvae/nn.hpp"
#include "segvae/tensor.hpp"

namespace segvae {

// ---------------------------------------------------------------------------
// Loss weights and LR schedule parameters
// ---------------------------------------------------------------------------

struct LossWeights {
    float w_l2 = 0.1f;
    float w_kl = 0.1f;
    float w_dice = 0.33f;  // applied to each of the three region Dice terms
    float smooth_s = 100.0f;

    void validate() const {
        if (w_l2 < 0.0f || w_kl < 0.0f || w_dice < 0.0f || smooth_s <= 0.0f)
            throw ConfigError("loss weights must be nonnegative and smooth_s positive");
    }
};

struct ScheduleParams {
    double alpha0 = 1e-4;
    int total_epochs = 50;
    double exponent = 0.9;

    void validate() const {
        if (alpha0 <= 0.0) throw ConfigError("lr schedule: alpha0 must be positive");
        if (total_epochs < 1) throw ConfigError("lr schedule: total_epochs must be >= 1");
    }
};

/// Polynomial decay alpha0 · (1 − e/Ne)^exponent for epoch e in [0, Ne].
[[nodiscard]] inline double lr_schedule(int e, const ScheduleParams& p) {
    p.validate();
    if (e < 0 || e > p.total_epochs)
        throw ConfigError("lr schedule: epoch " + std::to_string(e) + " outside [0, " +
                          std::to_string(p.total_epochs) + "]");
    return p.alpha0 * std::pow(1.0 - static_cast<double>(e) / p.total_epochs, p.exponent);
}

// ---------------------------------------------------------------------------
// Loss primitives (scalar value + exact gradient)
// ---------------------------------------------------------------------------

struct ScalarLoss {
    double value = 0.0;
    Tensor grad;
};

/// Smoothed soft Dice loss:
///   L = 1 − (2·Σ(y_true·y_pred) + s) / (Σ y_true² + Σ y_pred² + s)
/// The smoothing term s appears in both numerator and denominator, so a
/// perfect match — including the all-empty case — scores exactly 0 and the
/// loss stays in [0, 1] for y_pred in [0, 1].
[[nodiscard]] inline ScalarLoss soft_dice_loss(const Tensor& y_pred, const Tensor& y_true, float s) {
    require_same_shape("soft_dice_loss", y_true, y_pred);
    if (s <= 0.0f) throw ConfigError("soft_dice_loss: smoothing s must be positive");
    const std::int64_t n = y_pred.size();
    const double overlap = nn_detail::ddot(y_true.data(), y_pred.data(), n);
    const double sum_t2 = nn_detail::ddot(y_true.data(), y_true.data(), n);
    const double sum_p2 = nn_detail::ddot(y_pred.data(), y_pred.data(), n);
    const double num = 2.0 * overlap + static_cast<double>(s);
    const double den = sum_t2 + sum_p2 + static_cast<double>(s);

    ScalarLoss out;
    out.value = 1.0 - num / den;
    out.grad = Tensor(y_pred.shape());
    // dL/dp_i = (2·num·p_i − 2·den·t_i) / den²
    const float a = static_cast<float>(2.0 * num / (den * den));
    const float b = static_cast<float>(2.0 / den);
    const float* pp = y_pred.data();
    const float* pt = y_true.data();
    float* pg = out.grad.data();
    for (std::int64_t i = 0; i < n; ++i) pg[i] = a * pp[i] - b * pt[i];
    return out;
}

/// Mean squared error; gradient 2(recon − x)/N.
[[nodiscard]] inline ScalarLoss l2_loss(const Tensor& recon, const Tensor& x) {
    require_same_shape("l2_loss", x, recon);
    const std::int64_t n = recon.size();
    ScalarLoss out;
    out.grad = Tensor(recon.shape());
    const float* pr = recon.data();
    const float* px = x.data();
    float* pg = out.grad.data();
    double lane = 0.0;
    const float inv_n = static_cast<float>(2.0 / static_cast<double>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pr[i]) - static_cast<double>(px[i]);
        lane += d * d;
        pg[i] = inv_n * (pr[i] - px[i]);
    }
    out.value = lane / static_cast<double>(n);
    return out;
}

struct KlLoss {
    double value = 0.0;
    Tensor grad_mu, grad_logvar;
};

/// KL divergence of N(mu, exp(logvar)) from N(0, 1), summed over the latent
/// and divided by n_divisor (channels · voxels of the input patch).
[[nodiscard]] inline KlLoss kl_loss(const Tensor& mu, const Tensor& logvar, std::int64_t n_divisor) {
    require_same_shape("kl_loss", mu, logvar);
    if (n_divisor <= 0) throw ConfigError("kl_loss: divisor must be positive");
    const std::int64_t n = mu.size();
    KlLoss out;
    out.grad_mu = Tensor(mu.shape());
    out.grad_logvar = Tensor(logvar.shape());
    const float* pm = mu.data();
    const float* pl = logvar.data();
    float* gm = out.grad_mu.data();
    float* gl = out.grad_logvar.data();
    const double inv = 1.0 / static_cast<double>(n_divisor);
    const float finv = static_cast<float>(inv);
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double m = pm[i];
        const double ev = std::exp(static_cast<double>(pl[i]));
        acc += m * m + ev - static_cast<double>(pl[i]) - 1.0;
        gm[i] = finv * 2.0f * pm[i];
        gl[i] = finv * (static_cast<float>(ev) - 1.0f);
    }
    out.value = acc * inv;
    return out;
}

// ---------------------------------------------------------------------------
// Combined loss
// ---------------------------------------------------------------------------

/// Region channel order used throughout: 0 = whole tumor, 1 = tumor core,
/// 2 = enhancing tumor.
enum class RegionChannel : int { wt = 0, tc = 1, et = 2 };

struct CombinedLoss {
    double total = 0.0;
    double l2 = 0.0, kl = 0.0, dice_wt = 0.0, dice_tc = 0.0, dice_et = 0.0;
    Tensor grad_seg;                       // [3, ...patch]
    Tensor grad_recon, grad_mu, grad_logvar;  // empty when the VAE terms are absent
};

/// L = w_l2·L2 + w_kl·KL + w_dice·(Dice_wt + Dice_tc + Dice_et). The VAE
/// terms are included only when recon/mu/logvar are supplied (training and
/// validation); segmentation-only callers pass nullptr.
[[nodiscard]] inline CombinedLoss combined_loss(const Tensor& seg_probs, const Tensor& region_targets,
                                                const Tensor* recon, const Tensor* x, const Tensor* mu,
                                                const Tensor* logvar, const LossWeights& w,
                                                std::int64_t kl_divisor) {
    w.validate();
    require_same_shape("combined_loss regions", seg_probs, region_targets);
    if (seg_probs.dim(0) != 3)
        throw ShapeError("combined_loss: expected 3 region channels, got " +
                         std::to_string(seg_probs.dim(0)));

    CombinedLoss out;
    out.grad_seg = Tensor(seg_probs.shape());
    const std::int64_t chan = seg_probs.size() / 3;
    double dice_vals[3];
    for (int r = 0; r < 3; ++r) {
        Tensor pred({static_cast<int>(chan)});
        Tensor truth({static_cast<int>(chan)});
        std::memcpy(pred.data(), seg_probs.data() + r * chan, static_cast<std::size_t>(chan) * 4);
        std::memcpy(truth.data(), region_targets.data() + r * chan, static_cast<std::size_t>(chan) * 4);
        const ScalarLoss d = soft_dice_loss(pred, truth, w.smooth_s);
        dice_vals[r] = d.value;
        float* dst = out.grad_seg.data() + r * chan;
        const float* src = d.grad.data();
        for (std::int64_t i = 0; i < chan; ++i) dst[i] = w.w_dice * src[i];
    }
    out.dice_wt = dice_vals[0];
    out.dice_tc = dice_vals[1];
    out.dice_et = dice_vals[2];
    out.total = static_cast<double>(w.w_dice) * (dice_vals[0] + dice_vals[1] + dice_vals[2]);

    if (recon != nullptr) {
        if (x == nullptr || mu == nullptr || logvar == nullptr)
            throw StateError("combined_loss: VAE terms require recon, x, mu, and logvar together");
        ScalarLoss l2 = l2_loss(*recon, *x);
        KlLoss kl = kl_loss(*mu, *logvar, kl_divisor);
        out.l2 = l2.value;
        out.kl = kl.value;
        out.total += static_cast<double>(w.w_l2) * l2.value + static_cast<double>(w.w_kl) * kl.value;
        out.grad_recon = std::move(l2.grad);
        scale_inplace(out.grad_recon, w.w_l2);
        out.grad_mu = std::move(kl.grad_mu);
        scale_inplace(out.grad_mu, w.w_kl);
        out.grad_logvar = std::move(kl.grad_logvar);
        scale_inplace(out.grad_logvar, w.w_kl);
    }
    return out;
}

}  // namespace segvae
