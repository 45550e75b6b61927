#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "segvae/errors.hpp"
#include "segvae/losses.hpp"
#include "segvae/memory.hpp"
#include "segvae/nn.hpp"
#include "segvae/rng.hpp"
#include "segvae/tensor.hpp"
#include "segvae/volume.hpp"

namespace segvae {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Architecture knobs. `levels` counts spatial scales (levels − 1 encoder
/// downsamples); the VAE branch adds one more stride-2 step, so every patch
/// dim must be divisible by 2^levels.
struct ModelConfig {
    int in_channels = 4;
    int base_filters = 32;
    int filter_ratio = 2;
    int levels = 4;
    Index3 patch{80, 80, 80};  // (x, y, z)
    int latent_dim = 128;
    int groupnorm_groups = 8;
    float leaky_slope = 0.01f;

    void validate() const {
        if (in_channels < 1) throw ConfigError("model: in_channels must be >= 1");
        if (base_filters < 1) throw ConfigError("model: base_filters must be >= 1");
        if (filter_ratio != 2)
            throw ConfigError("model: filter_ratio must be 2 (stride-2 halving and 2x upsampling)");
        if (levels < 2 || levels > 6) throw ConfigError("model: levels must be in [2, 6]");
        if (latent_dim < 1) throw ConfigError("model: latent_dim must be >= 1");
        if (groupnorm_groups < 1) throw ConfigError("model: groupnorm_groups must be >= 1");
        const int div = 1 << levels;
        for (int a = 0; a < 3; ++a) {
            if (patch[a] <= 0 || patch[a] % div != 0)
                throw ConfigError("model: patch dim " + std::to_string(patch[a]) +
                                  " must be a positive multiple of 2^levels = " + std::to_string(div));
        }
        if (base_filters * (1 << (levels - 1)) < 16)
            throw ConfigError("model: base_filters * 2^(levels-1) must be >= 16 (latent readout)");
    }

    [[nodiscard]] int channels_at(int level) const { return base_filters * (1 << level); }

    bool operator==(const ModelConfig&) const = default;

    [[nodiscard]] std::string serialize() const {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(leaky_slope));
        std::string s;
        s += "in_channels=" + std::to_string(in_channels) + "\n";
        s += "base_filters=" + std::to_string(base_filters) + "\n";
        s += "filter_ratio=" + std::to_string(filter_ratio) + "\n";
        s += "levels=" + std::to_string(levels) + "\n";
        s += "patch_x=" + std::to_string(patch[0]) + "\n";
        s += "patch_y=" + std::to_string(patch[1]) + "\n";
        s += "patch_z=" + std::to_string(patch[2]) + "\n";
        s += "latent_dim=" + std::to_string(latent_dim) + "\n";
        s += "groupnorm_groups=" + std::to_string(groupnorm_groups) + "\n";
        s += "leaky_slope=" + std::string(buf) + "\n";
        return s;
    }

    [[nodiscard]] static ModelConfig parse(const std::string& blob) {
        ModelConfig cfg;
        std::size_t pos = 0;
        while (pos < blob.size()) {
            std::size_t eol = blob.find('\n', pos);
            if (eol == std::string::npos) eol = blob.size();
            const std::string line = blob.substr(pos, eol - pos);
            pos = eol + 1;
            if (line.empty()) continue;
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw FormatError("model config: malformed line '" + line + "'");
            const std::string key = line.substr(0, eq);
            const std::string val = line.substr(eq + 1);
            if (key == "in_channels") cfg.in_channels = std::stoi(val);
            else if (key == "base_filters") cfg.base_filters = std::stoi(val);
            else if (key == "filter_ratio") cfg.filter_ratio = std::stoi(val);
            else if (key == "levels") cfg.levels = std::stoi(val);
            else if (key == "patch_x") cfg.patch[0] = std::stoi(val);
            else if (key == "patch_y") cfg.patch[1] = std::stoi(val);
            else if (key == "patch_z") cfg.patch[2] = std::stoi(val);
            else if (key == "latent_dim") cfg.latent_dim = std::stoi(val);
            else if (key == "groupnorm_groups") cfg.groupnorm_groups = std::stoi(val);
            else if (key == "leaky_slope") cfg.leaky_slope = std::stof(val);
            else throw FormatError("model config: unknown key '" + key + "'");
        }
        cfg.validate();
        return cfg;
    }
};

enum class ForwardMode { train, val, infer };

/// Forward results; recon/mu/logvar are empty tensors in infer mode.
struct ModelOutput {
    Tensor seg_probs;  // [3, pz, py, px], strictly inside (0, 1)
    Tensor recon;      // [in_channels, pz, py, px]
    Tensor mu, logvar;  // [latent_dim]

    [[nodiscard]] bool has_vae() const { return !recon.empty(); }
};

// ---------------------------------------------------------------------------
// Layer building blocks
// ---------------------------------------------------------------------------

namespace model_detail {

struct Param {
    Tensor value, grad;
    AdamState adam;
};

inline void accumulate_grad(Param& p, const Tensor& g) {
    if (p.grad.empty()) throw StateError("model: backward before zero_grads");
    add_inplace(p.grad, g);
}

inline void he_fill(Tensor& w, double fan_in, std::uint64_t seed, const std::string& name) {
    Rng rng = Rng::stream(seed, "init", name);
    const double stddev = std::sqrt(2.0 / fan_in);
    float* p = w.data();
    for (std::int64_t i = 0; i < w.size(); ++i)
        p[i] = static_cast<float>(rng.normal() * stddev);
}

struct Conv3dLayer {
    std::string name;
    ConvSpec spec;
    Param w, b;
    Tensor saved_x;

    void init(const std::string& layer_name, const ConvSpec& s, std::uint64_t seed) {
        name = layer_name;
        spec = s;
        w.value = Tensor({s.out_channels, s.in_channels, s.kernel[0], s.kernel[1], s.kernel[2]});
        b.value = Tensor({s.out_channels});
        const double fan_in =
            static_cast<double>(s.in_channels) * s.kernel[0] * s.kernel[1] * s.kernel[2];
        he_fill(w.value, fan_in, seed, name);
    }

    [[nodiscard]] Tensor forward(const Tensor& x, bool save) {
        if (save) saved_x = x;
        return conv3d_forward(x, w.value, b.value, spec);
    }

    [[nodiscard]] Tensor backward(const Tensor& gy) {
        if (saved_x.empty())
            throw StateError("model: " + name + " backward without saved forward activations");
        Conv3dGrads g = conv3d_backward(gy, saved_x, w.value, spec);
        accumulate_grad(w, g.grad_w);
        accumulate_grad(b, g.grad_b);
        return std::move(g.grad_x);
    }

    template <typename Fn>
    void visit(Fn&& fn) {
        fn(name + ".w", w);
        fn(name + ".b", b);
    }
    void clear_saved() { saved_x = Tensor(); }
};

struct GroupNormLayer {
    std::string name;
    int groups = 1;
    float eps = 1e-5f;
    Param gamma, beta;
    Tensor saved_x;
    GroupNormCtx ctx;

    void init(const std::string& layer_name, int channels, int groups_cap) {
        name = layer_name;
        groups = std::min(groups_cap, channels);
        if (channels % groups != 0)
            throw ConfigError("model: " + name + " channels " + std::to_string(channels) +
                              " not divisible by groupnorm groups " + std::to_string(groups));
        gamma.value = Tensor({channels});
        gamma.value.fill(1.0f);
        beta.value = Tensor({channels});
    }

    [[nodiscard]] Tensor forward(const Tensor& x, bool save) {
        if (!save) return group_norm_forward(x, groups, gamma.value, beta.value, eps, nullptr);
        saved_x = x;
        return group_norm_forward(x, groups, gamma.value, beta.value, eps, &ctx);
    }

    [[nodiscard]] Tensor backward(const Tensor& gy) {
        if (saved_x.empty())
            throw StateError("model: " + name + " backward without saved forward activations");
        GroupNormGrads g = group_norm_backward(gy, saved_x, groups, gamma.value, ctx);
        accumulate_grad(gamma, g.grad_gamma);
        accumulate_grad(beta, g.grad_beta);
        return std::move(g.grad_x);
    }

    template <typename Fn>
    void visit(Fn&& fn) {
        fn(name + ".gamma", gamma);
        fn(name + ".beta", beta);
    }
    void clear_saved() { saved_x = Tensor(); }
};

struct LeakyReluLayer {
    float slope = 0.01f;
    Tensor saved_x;

    [[nodiscard]] Tensor forward(const Tensor& x, bool save) {
        if (save) saved_x = x;
        return leaky_relu_forward(x, slope);
    }
    [[nodiscard]] Tensor backward(const Tensor& gy) {
        if (saved_x.empty()) throw StateError("model: leaky_relu backward without saved activations");
        return leaky_relu_backward(gy, saved_x, slope);
    }
    void clear_saved() { saved_x = Tensor(); }
};

struct SigmoidLayer {
    Tensor saved_y;

    [[nodiscard]] Tensor forward(const Tensor& x, bool save) {
        Tensor y = sigmoid_forward(x);
        if (save) saved_y = y;
        return y;
    }
    [[nodiscard]] Tensor backward(const Tensor& gy) {
        if (saved_y.empty()) throw StateError("model: sigmoid backward without saved activations");
        return sigmoid_backward(gy, saved_y);
    }
    void clear_saved() { saved_y = Tensor(); }
};

struct UpsampleLayer {
    std::vector<int> in_shape;

    [[nodiscard]] Tensor forward(const Tensor& x) {
        in_shape = x.shape();
        return trilinear_upsample2x(x);
    }
    [[nodiscard]] Tensor backward(const Tensor& gy) {
        if (in_shape.empty()) throw StateError("model: upsample backward without saved shape");
        return trilinear_upsample2x_backward(gy, in_shape);
    }
};

struct DenseLayer {
    std::string name;
    Param w, b;
    Tensor saved_x;

    void init(const std::string& layer_name, int in_n, int out_n, std::uint64_t seed) {
        name = layer_name;
        w.value = Tensor({out_n, in_n});
        b.value = Tensor({out_n});
        he_fill(w.value, static_cast<double>(in_n), seed, name);
    }

    [[nodiscard]] Tensor forward(const Tensor& x, bool save) {
        if (save) saved_x = x;
        return dense_forward(x, w.value, b.value);
    }
    [[nodiscard]] Tensor backward(const Tensor& gy) {
        if (saved_x.empty())
            throw StateError("model: " + name + " backward without saved forward activations");
        DenseGrads g = dense_backward(gy, saved_x, w.value);
        accumulate_grad(w, g.grad_w);
        accumulate_grad(b, g.grad_b);
        return std::move(g.grad_x);
    }
    template <typename Fn>
    void visit(Fn&& fn) {
        fn(name + ".w", w);
        fn(name + ".b", b);
    }
    void clear_saved() { saved_x = Tensor(); }
};

/// Pre-activation residual block: x + conv(GN·LReLU(conv(GN·LReLU(x)))).
struct ResBlock {
    GroupNormLayer gn1;
    LeakyReluLayer lr1;
    Conv3dLayer conv1;
    GroupNormLayer gn2;
    LeakyReluLayer lr2;
    Conv3dLayer conv2;

    void init(const std::string& name, int channels, int groups_cap, float slope,
              std::uint64_t seed) {
        gn1.init(name + ".gn1", channels, groups_cap);
        lr1.slope = slope;
        conv1.init(name + ".conv1", ConvSpec::same(channels, channels, 3, 1), seed);
        gn2.init(name + ".gn2", channels, groups_cap);
        lr2.slope = slope;
        conv2.init(name + ".conv2", ConvSpec::same(channels, channels, 3, 1), seed);
    }

    [[nodiscard]] Tensor forward(const Tensor& x, bool save) {
        Tensor h = gn1.forward(x, save);
        h = lr1.forward(h, save);
        h = conv1.forward(h, save);
        h = gn2.forward(h, save);
        h = lr2.forward(h, save);
        h = conv2.forward(h, save);
        add_inplace(h, x);
        return h;
    }

    [[nodiscard]] Tensor backward(const Tensor& gy) {
        Tensor g = conv2.backward(gy);
        g = lr2.backward(g);
        g = gn2.backward(g);
        g = conv1.backward(g);
        g = lr1.backward(g);
        g = gn1.backward(g);
        add_inplace(g, gy);  // identity skip
        return g;
    }

    template <typename Fn>
    void visit(Fn&& fn) {
        gn1.visit(fn);
        conv1.visit(fn);
        gn2.visit(fn);
        conv2.visit(fn);
    }
    void clear_saved() {
        gn1.clear_saved();
        lr1.clear_saved();
        conv1.clear_saved();
        gn2.clear_saved();
        lr2.clear_saved();
        conv2.clear_saved();
    }
};

}  // namespace model_detail

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

class Model {
public:
    Model() = default;

    [[nodiscard]] static Model build(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        Model m;
        m.cfg_ = cfg;
        m.seed_ = seed;
        const int L = cfg.levels;
        const int gcap = cfg.groupnorm_groups;
        const float slope = cfg.leaky_slope;

        m.init_conv_.init("enc.init", ConvSpec::same(cfg.in_channels, cfg.base_filters, 3, 1), seed);
        m.enc_res_.resize(static_cast<std::size_t>(L));
        m.enc_down_.resize(static_cast<std::size_t>(L - 1));
        for (int i = 0; i < L; ++i) {
            const int ch = cfg.channels_at(i);
            m.enc_res_[static_cast<std::size_t>(i)].init("enc.l" + std::to_string(i) + ".res", ch,
                                                         gcap, slope, seed);
            if (i < L - 1)
                m.enc_down_[static_cast<std::size_t>(i)].init(
                    "enc.l" + std::to_string(i) + ".down",
                    ConvSpec::same(ch, cfg.channels_at(i + 1), 3, 2), seed);
        }

        m.dec_up_.resize(static_cast<std::size_t>(L - 1));
        m.dec_reduce_.resize(static_cast<std::size_t>(L - 1));
        m.dec_res_.resize(static_cast<std::size_t>(L - 1));
        for (int k = 0; k < L - 1; ++k) {
            const int target = L - 2 - k;  // spatial level this stage lands on
            const int in_ch = cfg.channels_at(target + 1);
            const int out_ch = cfg.channels_at(target);
            m.dec_reduce_[static_cast<std::size_t>(k)].init(
                "dec.l" + std::to_string(target) + ".reduce", ConvSpec::same(in_ch, out_ch, 1, 1),
                seed);
            m.dec_res_[static_cast<std::size_t>(k)].init("dec.l" + std::to_string(target) + ".res",
                                                         out_ch, gcap, slope, seed);
        }
        m.head_.init("head", ConvSpec::same(cfg.base_filters, 3, 1, 1), seed);
        // Tumor regions cover a small fraction of any patch, so the head
        // starts biased toward background: weights small enough that the
        // residual trunk's large raw features cannot swamp the bias, and
        // logits near -2 (probability ~0.12) for every channel. A channel
        // that instead starts high-saturated on a tiny structure sits in a
        // flat region of the smoothed Dice loss (vanishing sigmoid slope,
        // near-balanced voxel pushes) and can stay at "predict everything"
        // for an entire run; starting uniformly on the background side makes
        // that basin unreachable.
        scale_inplace(m.head_.w.value, 0.1f);
        m.head_.b.value.fill(-2.0f);

        const int deep_ch = cfg.channels_at(L - 1);
        m.vae_gn_.init("vae.gn", deep_ch, gcap);
        m.vae_lr_.slope = slope;
        m.vae_conv_.init("vae.conv", ConvSpec::same(deep_ch, 16, 3, 2), seed);
        const auto s2 = m.vae_spatial();
        const int flat_n = 16 * s2[0] * s2[1] * s2[2];
        m.vae_fc_enc_.init("vae.fc_enc", flat_n, 2 * cfg.latent_dim, seed);
        m.vae_fc_dec_.init("vae.fc_dec", cfg.latent_dim, flat_n, seed);
        m.vae_up_.resize(static_cast<std::size_t>(L));
        m.vae_up_conv_.resize(static_cast<std::size_t>(L));
        int prev_ch = 16;
        for (int j = 0; j < L; ++j) {
            const int out_ch = cfg.channels_at(L - 1 - j);
            m.vae_up_conv_[static_cast<std::size_t>(j)].init("vae.up" + std::to_string(j) + ".conv",
                                                             ConvSpec::same(prev_ch, out_ch, 1, 1),
                                                             seed);
            prev_ch = out_ch;
        }
        m.vae_out_.init("vae.out", ConvSpec::same(prev_ch, cfg.in_channels, 1, 1), seed);
        return m;
    }

    [[nodiscard]] const ModelConfig& config() const { return cfg_; }

    /// Tensor spatial dims [z, y, x] of the input patch.
    [[nodiscard]] std::vector<int> patch_dims() const {
        return {cfg_.patch[2], cfg_.patch[1], cfg_.patch[0]};
    }

    [[nodiscard]] ModelOutput forward(const Tensor& x, ForwardMode mode, Rng* rng = nullptr) {
        const MemScope scope("model.forward");
        const auto pd = patch_dims();
        require_shape("model input", x, {cfg_.in_channels, pd[0], pd[1], pd[2]});
        if (mode == ForwardMode::train && rng == nullptr)
            throw StateError("model: train-mode forward requires an rng for reparameterization");
        const bool save = mode != ForwardMode::infer;
        const int L = cfg_.levels;

        ModelOutput out;

        // ---- encoder ----
        Tensor h = init_conv_.forward(x, save);
        std::vector<Tensor> skips(static_cast<std::size_t>(L - 1));
        for (int i = 0; i < L; ++i) {
            h = enc_res_[static_cast<std::size_t>(i)].forward(h, save);
            if (i < L - 1) {
                skips[static_cast<std::size_t>(i)] = h;
                h = enc_down_[static_cast<std::size_t>(i)].forward(h, save);
            }
        }
        // h is now the deepest feature map; the VAE branch reads it too.
        Tensor deep;
        if (save) deep = h;

        // ---- segmentation decoder ----
        for (int k = 0; k < L - 1; ++k) {
            const int target = L - 2 - k;
            h = dec_up_[static_cast<std::size_t>(k)].forward(h);
            h = dec_reduce_[static_cast<std::size_t>(k)].forward(h, save);
            add_inplace(h, skips[static_cast<std::size_t>(target)]);
            skips[static_cast<std::size_t>(target)].release();
            h = dec_res_[static_cast<std::size_t>(k)].forward(h, save);
        }
        h = head_.forward(h, save);
        out.seg_probs = head_sig_.forward(h, save);
        h.release();

        // ---- VAE branch (training/validation only) ----
        if (mode != ForwardMode::infer) {
            const MemScope vae_scope("model.vae");
            Tensor v = vae_gn_.forward(deep, save);
            v = vae_lr_.forward(v, save);
            v = vae_conv_.forward(v, save);
            const auto s2 = vae_spatial();
            vae_pre_flat_shape_ = v.shape();
            v.reshape({16 * s2[0] * s2[1] * s2[2]});
            v = vae_fc_enc_.forward(v, save);

            const int latent = cfg_.latent_dim;
            out.mu = Tensor({latent});
            out.logvar = Tensor({latent});
            std::memcpy(out.mu.data(), v.data(), static_cast<std::size_t>(latent) * 4);
            std::memcpy(out.logvar.data(), v.data() + latent, static_cast<std::size_t>(latent) * 4);
            v.release();

            Tensor z({latent});
            if (mode == ForwardMode::train) {
                saved_eps_ = Tensor({latent});
                saved_std_ = Tensor({latent});
                for (int i = 0; i < latent; ++i) {
                    const float eps = static_cast<float>(rng->normal());
                    const float sd = std::exp(0.5f * out.logvar[i]);
                    saved_eps_[i] = eps;
                    saved_std_[i] = sd;
                    z[i] = out.mu[i] + sd * eps;
                }
            } else {
                // validation: deterministic code z = mu
                saved_eps_ = Tensor();
                saved_std_ = Tensor();
                std::memcpy(z.data(), out.mu.data(), static_cast<std::size_t>(latent) * 4);
            }

            Tensor w = vae_fc_dec_.forward(z, save);
            w.reshape(vae_pre_flat_shape_);
            for (int j = 0; j < L; ++j) {
                w = vae_up_[static_cast<std::size_t>(j)].forward(w);
                w = vae_up_conv_[static_cast<std::size_t>(j)].forward(w, save);
            }
            out.recon = vae_out_.forward(w, save);
        }

        last_mode_ = mode;
        have_forward_ = save;
        return out;
    }

    /// Backpropagates the per-head loss gradients into every parameter's grad
    /// buffer. grad_recon/grad_mu/grad_logvar may be null only if the forward
    /// ran without the VAE branch.
    void backward(const Tensor& grad_seg, const Tensor* grad_recon, const Tensor* grad_mu,
                  const Tensor* grad_logvar) {
        if (!have_forward_)
            throw StateError("model: backward without a train/val-mode forward");
        const int L = cfg_.levels;

        // ---- segmentation head and decoder ----
        Tensor g = head_sig_.backward(grad_seg);
        g = head_.backward(g);
        std::vector<Tensor> skip_grads(static_cast<std::size_t>(L - 1));
        for (int k = L - 2; k >= 0; --k) {
            const int target = L - 2 - k;
            g = dec_res_[static_cast<std::size_t>(k)].backward(g);
            skip_grads[static_cast<std::size_t>(target)] = g;  // additive skip branch
            g = dec_reduce_[static_cast<std::size_t>(k)].backward(g);
            g = dec_up_[static_cast<std::size_t>(k)].backward(g);
        }
        // g is now the seg-path gradient at the deepest feature map.

        // ---- VAE branch ----
        if (grad_recon != nullptr || grad_mu != nullptr || grad_logvar != nullptr) {
            if (last_mode_ == ForwardMode::infer)
                throw StateError("model: VAE gradients supplied after an infer-mode forward");
            if (grad_recon == nullptr || grad_mu == nullptr || grad_logvar == nullptr)
                throw StateError("model: VAE backward requires recon, mu, and logvar gradients");
            Tensor gv = vae_out_.backward(*grad_recon);
            for (int j = L - 1; j >= 0; --j) {
                gv = vae_up_conv_[static_cast<std::size_t>(j)].backward(gv);
                gv = vae_up_[static_cast<std::size_t>(j)].backward(gv);
            }
            gv.reshape({static_cast<int>(gv.size())});
            Tensor gz = vae_fc_dec_.backward(gv);

            const int latent = cfg_.latent_dim;
            Tensor g2l({2 * latent});
            for (int i = 0; i < latent; ++i) {
                float gm = (*grad_mu)[i] + gz[i];  // z = mu + std*eps (or z = mu in val mode)
                float gl = (*grad_logvar)[i];
                if (!saved_eps_.empty())
                    gl += gz[i] * saved_eps_[i] * 0.5f * saved_std_[i];
                g2l[i] = gm;
                g2l[latent + i] = gl;
            }
            gz.release();
            Tensor gflat = vae_fc_enc_.backward(g2l);
            gflat.reshape(vae_pre_flat_shape_);
            Tensor gd = vae_conv_.backward(gflat);
            gflat.release();
            gd = vae_lr_.backward(gd);
            gd = vae_gn_.backward(gd);
            add_inplace(g, gd);
        }

        // ---- encoder ----
        for (int i = L - 1; i >= 0; --i) {
            g = enc_res_[static_cast<std::size_t>(i)].backward(g);
            if (i > 0) {
                g = enc_down_[static_cast<std::size_t>(i - 1)].backward(g);
                add_inplace(g, skip_grads[static_cast<std::size_t>(i - 1)]);
                skip_grads[static_cast<std::size_t>(i - 1)].release();
            }
        }
        (void)init_conv_.backward(g);  // gradient w.r.t. the input patch is discarded
    }

    void backward(const CombinedLoss& loss) {
        backward(loss.grad_seg, loss.grad_recon.empty() ? nullptr : &loss.grad_recon,
                 loss.grad_mu.empty() ? nullptr : &loss.grad_mu,
                 loss.grad_logvar.empty() ? nullptr : &loss.grad_logvar);
    }

    template <typename Fn>
    void for_each_param(Fn&& fn) {
        init_conv_.visit(fn);
        for (auto& r : enc_res_) r.visit(fn);
        for (auto& d : enc_down_) d.visit(fn);
        for (auto& d : dec_reduce_) d.visit(fn);
        for (auto& r : dec_res_) r.visit(fn);
        head_.visit(fn);
        vae_gn_.visit(fn);
        vae_conv_.visit(fn);
        vae_fc_enc_.visit(fn);
        vae_fc_dec_.visit(fn);
        for (auto& c : vae_up_conv_) c.visit(fn);
        vae_out_.visit(fn);
    }

    void zero_grads() {
        for_each_param([](const std::string&, model_detail::Param& p) {
            if (p.grad.empty())
                p.grad = Tensor::zeros_like(p.value);
            else
                p.grad.fill(0.0f);
        });
    }

    void adam_update(float lr, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f) {
        for_each_param([&](const std::string&, model_detail::Param& p) {
            if (p.grad.empty()) throw StateError("model: adam_update before backward");
            adam_step(p.value, p.grad, p.adam, lr, beta1, beta2, eps);
        });
    }

    /// Drops all training activations (saved inputs, stats, skip state).
    void clear_saved() {
        init_conv_.clear_saved();
        for (auto& r : enc_res_) r.clear_saved();
        for (auto& d : enc_down_) d.clear_saved();
        for (auto& d : dec_reduce_) d.clear_saved();
        for (auto& r : dec_res_) r.clear_saved();
        head_.clear_saved();
        head_sig_.clear_saved();
        vae_gn_.clear_saved();
        vae_lr_.clear_saved();
        vae_conv_.clear_saved();
        vae_fc_enc_.clear_saved();
        vae_fc_dec_.clear_saved();
        for (auto& c : vae_up_conv_) c.clear_saved();
        vae_out_.clear_saved();
        saved_eps_ = Tensor();
        saved_std_ = Tensor();
        have_forward_ = false;
    }

    [[nodiscard]] std::int64_t param_count() {
        std::int64_t n = 0;
        for_each_param([&](const std::string&, model_detail::Param& p) { n += p.value.size(); });
        return n;
    }

    /// Copies of all parameter values in registration order.
    [[nodiscard]] std::vector<Tensor> snapshot_params() {
        std::vector<Tensor> snap;
        for_each_param([&](const std::string&, model_detail::Param& p) { snap.push_back(p.value); });
        return snap;
    }

    void restore_params(const std::vector<Tensor>& snap) {
        std::size_t i = 0;
        for_each_param([&](const std::string&, model_detail::Param& p) {
            if (i >= snap.size() || !same_shape(snap[i], p.value))
                throw StateError("model: parameter snapshot does not match this architecture");
            p.value = snap[i++];
        });
        if (i != snap.size()) throw StateError("model: parameter snapshot does not match this architecture");
    }

    [[nodiscard]] std::uint64_t seed() const { return seed_; }

private:
    [[nodiscard]] Index3 vae_spatial() const {
        // tensor-order [z, y, x] dims after the VAE stride-2 conv
        const int L = cfg_.levels;
        return {cfg_.patch[2] >> L, cfg_.patch[1] >> L, cfg_.patch[0] >> L};
    }

    ModelConfig cfg_;
    std::uint64_t seed_ = 0;

    model_detail::Conv3dLayer init_conv_;
    std::vector<model_detail::ResBlock> enc_res_;
    std::vector<model_detail::Conv3dLayer> enc_down_;
    std::vector<model_detail::UpsampleLayer> dec_up_;
    std::vector<model_detail::Conv3dLayer> dec_reduce_;
    std::vector<model_detail::ResBlock> dec_res_;
    model_detail::Conv3dLayer head_;
    model_detail::SigmoidLayer head_sig_;
    model_detail::GroupNormLayer vae_gn_;
    model_detail::LeakyReluLayer vae_lr_;
    model_detail::Conv3dLayer vae_conv_;
    model_detail::DenseLayer vae_fc_enc_;
    model_detail::DenseLayer vae_fc_dec_;
    std::vector<model_detail::UpsampleLayer> vae_up_;
    std::vector<model_detail::Conv3dLayer> vae_up_conv_;
    model_detail::Conv3dLayer vae_out_;

    Tensor saved_eps_, saved_std_;
    std::vector<int> vae_pre_flat_shape_;
    ForwardMode last_mode_ = ForwardMode::infer;
    bool have_forward_ = false;
};

/// Combined loss of a forward result against the stacked region targets
/// [3, patch] (channel order wt, tc, et). kl_divisor 0 selects the default
/// in_channels · patch-voxel divisor.
[[nodiscard]] inline CombinedLoss model_loss(const ModelOutput& out, const Tensor& x,
                                             const Tensor& region_targets, const LossWeights& w,
                                             std::int64_t kl_divisor = 0) {
    const std::int64_t divisor = kl_divisor > 0 ? kl_divisor : x.size();
    if (out.has_vae())
        return combined_loss(out.seg_probs, region_targets, &out.recon, &x, &out.mu, &out.logvar, w,
                             divisor);
    return combined_loss(out.seg_probs, region_targets, nullptr, nullptr, nullptr, nullptr, w,
                         divisor);
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------
//
// Layout: magic "SEGVAE01", version u32, u32-length-prefixed UTF-8 config
// block (key=value lines), then per parameter in registration order:
// name length u32, name UTF-8, ndim u32, dims u32[], float32 LE payload.

namespace model_detail {

constexpr char checkpoint_magic[8] = {'S', 'E', 'G', 'V', 'A', 'E', '0', '1'};
constexpr std::uint32_t checkpoint_version = 1;

template <typename T>
void write_pod(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f, const char* what) {
    T v;
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw FormatError(std::string("checkpoint: truncated while reading ") + what);
    return v;
}

}  // namespace model_detail

inline void save_checkpoint(Model& model, const std::filesystem::path& path) {
    using namespace model_detail;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(checkpoint_magic, sizeof(checkpoint_magic));
    write_pod(f, checkpoint_version);
    const std::string cfg = model.config().serialize();
    write_pod(f, static_cast<std::uint32_t>(cfg.size()));
    f.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    model.for_each_param([&](const std::string& name, model_detail::Param& p) {
        write_pod(f, static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod(f, static_cast<std::uint32_t>(p.value.rank()));
        for (int d = 0; d < p.value.rank(); ++d)
            write_pod(f, static_cast<std::uint32_t>(p.value.dim(d)));
        f.write(reinterpret_cast<const char*>(p.value.data()),
                static_cast<std::streamsize>(p.value.size()) * 4);
    });
    if (!f) throw IoError("cannot write " + path.string());
}

[[nodiscard]] inline Model load_checkpoint(const std::filesystem::path& path) {
    using namespace model_detail;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());

    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, checkpoint_magic, sizeof(magic)) != 0)
        throw FormatError("checkpoint: bad magic, not a SEGVAE01 file");
    const auto version = read_pod<std::uint32_t>(f, "version");
    if (version != checkpoint_version)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));

    const auto cfg_len = read_pod<std::uint32_t>(f, "config length");
    std::string blob(cfg_len, '\0');
    f.read(blob.data(), static_cast<std::streamsize>(cfg_len));
    if (!f) throw FormatError("checkpoint: truncated while reading config block");
    const ModelConfig cfg = ModelConfig::parse(blob);

    Model model = Model::build(cfg, 0);
    model.for_each_param([&](const std::string& name, model_detail::Param& p) {
        const auto name_len = read_pod<std::uint32_t>(f, "parameter name length");
        std::string got(name_len, '\0');
        f.read(got.data(), static_cast<std::streamsize>(name_len));
        if (!f) throw FormatError("checkpoint: truncated while reading parameter name");
        if (got != name)
            throw FormatError("checkpoint: parameter table mismatch, expected '" + name + "', got '" +
                              got + "'");
        const auto ndim = read_pod<std::uint32_t>(f, "parameter rank");
        if (static_cast<int>(ndim) != p.value.rank())
            throw FormatError("checkpoint: rank mismatch for '" + name + "'");
        for (int d = 0; d < p.value.rank(); ++d) {
            const auto dim = read_pod<std::uint32_t>(f, "parameter dim");
            if (static_cast<int>(dim) != p.value.dim(d))
                throw FormatError("checkpoint: shape mismatch for '" + name + "'");
        }
        f.read(reinterpret_cast<char*>(p.value.data()),
               static_cast<std::streamsize>(p.value.size()) * 4);
        if (!f) throw FormatError("checkpoint: truncated while reading payload of '" + name + "'");
    });
    // Exactly the registered parameter set must be present.
    f.peek();
    if (!f.eof()) throw FormatError("checkpoint: trailing bytes after the last parameter");
    return model;
}

}  // namespace segvae
