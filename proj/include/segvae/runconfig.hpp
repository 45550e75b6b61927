#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "segvae/errors.hpp"
#include "segvae/inference.hpp"
#include "segvae/model.hpp"
#include "segvae/nifti.hpp"
#include "segvae/trainer.hpp"

namespace segvae {

// ---------------------------------------------------------------------------
// Flat key=value run configuration
// ---------------------------------------------------------------------------

/// Every tunable default in one place: model architecture, training
/// protocol, LR schedule, loss weights, thresholds, and the memory budget.
/// The text form is one `key=value` per line with `#` comments; unknown keys
/// are rejected by name.
struct RunConfig {
    ModelConfig model{};
    TrainConfig train{};
    Thresholds thresholds{};
    std::int64_t budget_bytes = 0;  ///< 0 → derive from a one-patch probe
};

namespace runconfig_detail {

[[nodiscard]] inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[nodiscard]] inline long long parse_ll(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long long x = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
}

[[nodiscard]] inline double parse_d(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

[[nodiscard]] inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= v.size()) {
        const std::size_t comma = v.find(',', pos);
        const std::string item = trim(v.substr(pos, comma == std::string::npos ? comma : comma - pos));
        if (!item.empty()) out.push_back(item);
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

/// Walks `key=value` lines (`#` starts a comment, blank lines skipped) and
/// calls fn(key, value) for each. Malformed lines are configuration errors.
template <typename Fn>
inline void for_each_kv(const std::string& text, Fn&& fn) {
    std::size_t pos = 0;
    int lineno = 0;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        std::string line = text.substr(pos, nl == std::string::npos ? nl : nl - pos);
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (!line.empty()) {
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value: '" +
                                  line + "'");
            }
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty()) {
                throw ConfigError("config: line " + std::to_string(lineno) + " has an empty key");
            }
            fn(key, value);
        }
        if (nl == std::string::npos) break;
        pos = nl + 1;
    }
}

}  // namespace runconfig_detail

/// Applies one key=value pair; unknown keys are configuration errors naming
/// the key. Returns true when the key sets the LR horizon explicitly (so the
/// caller knows not to mirror `epochs` into it).
inline bool runconfig_apply(RunConfig& rc, const std::string& key, const std::string& value) {
    using runconfig_detail::parse_d;
    using runconfig_detail::parse_ll;
    // Model architecture.
    if (key == "in_channels") rc.model.in_channels = static_cast<int>(parse_ll(key, value));
    else if (key == "base_filters") rc.model.base_filters = static_cast<int>(parse_ll(key, value));
    else if (key == "filter_ratio") rc.model.filter_ratio = static_cast<int>(parse_ll(key, value));
    else if (key == "levels") rc.model.levels = static_cast<int>(parse_ll(key, value));
    else if (key == "patch_x") rc.model.patch[0] = static_cast<int>(parse_ll(key, value));
    else if (key == "patch_y") rc.model.patch[1] = static_cast<int>(parse_ll(key, value));
    else if (key == "patch_z") rc.model.patch[2] = static_cast<int>(parse_ll(key, value));
    else if (key == "latent_dim") rc.model.latent_dim = static_cast<int>(parse_ll(key, value));
    else if (key == "groupnorm_groups") rc.model.groupnorm_groups = static_cast<int>(parse_ll(key, value));
    else if (key == "leaky_slope") rc.model.leaky_slope = static_cast<float>(parse_d(key, value));
    // Training protocol.
    else if (key == "epochs") rc.train.epochs = static_cast<int>(parse_ll(key, value));
    else if (key == "samples_per_epoch") rc.train.samples_per_epoch = static_cast<int>(parse_ll(key, value));
    else if (key == "patience") rc.train.patience = static_cast<int>(parse_ll(key, value));
    else if (key == "p_pos") rc.train.p_pos = parse_d(key, value);
    else if (key == "seed") rc.train.seed = static_cast<std::uint64_t>(parse_ll(key, value));
    else if (key == "val_cases") rc.train.val_case_ids = runconfig_detail::split_list(value);
    else if (key == "val_patches_per_case") rc.train.val_patches_per_case = static_cast<int>(parse_ll(key, value));
    else if (key == "kl_divisor") rc.train.kl_divisor = parse_ll(key, value);
    // LR schedule.
    else if (key == "lr_alpha0") rc.train.schedule.alpha0 = parse_d(key, value);
    else if (key == "lr_exponent") rc.train.schedule.exponent = parse_d(key, value);
    else if (key == "lr_total_epochs") {
        rc.train.schedule.total_epochs = static_cast<int>(parse_ll(key, value));
        return true;
    }
    // Loss weights.
    else if (key == "w_l2") rc.train.weights.w_l2 = static_cast<float>(parse_d(key, value));
    else if (key == "w_kl") rc.train.weights.w_kl = static_cast<float>(parse_d(key, value));
    else if (key == "w_dice") rc.train.weights.w_dice = static_cast<float>(parse_d(key, value));
    else if (key == "dice_smooth") rc.train.weights.smooth_s = static_cast<float>(parse_d(key, value));
    // Inference thresholds and memory budget.
    else if (key == "thr_wt") rc.thresholds.wt = static_cast<float>(parse_d(key, value));
    else if (key == "thr_tc") rc.thresholds.tc = static_cast<float>(parse_d(key, value));
    else if (key == "thr_et") rc.thresholds.et = static_cast<float>(parse_d(key, value));
    else if (key == "budget_bytes") rc.budget_bytes = parse_ll(key, value);
    else throw ConfigError("config: unknown key '" + key + "'");
    return false;
}

/// Parses the flat key=value text (\n-separated, `#` comments). The LR
/// horizon follows `epochs` unless `lr_total_epochs` is set explicitly.
[[nodiscard]] inline RunConfig parse_runconfig(const std::string& text) {
    RunConfig rc;
    bool lr_total_set = false;
    runconfig_detail::for_each_kv(text, [&](const std::string& key, const std::string& value) {
        lr_total_set = runconfig_apply(rc, key, value) || lr_total_set;
    });
    if (!lr_total_set) rc.train.schedule.total_epochs = rc.train.epochs;
    return rc;
}

[[nodiscard]] inline RunConfig load_runconfig(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return parse_runconfig(std::string(bytes.begin(), bytes.end()));
}

/// Full listing of every key at its current value — the documented-defaults
/// contract in executable form (parse_runconfig(serialize_runconfig(rc))
/// round-trips).
[[nodiscard]] inline std::string serialize_runconfig(const RunConfig& rc) {
    char buf[64];
    const auto num = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.9g", v);
        return std::string(buf);
    };
    std::string s;
    s += "# model architecture\n";
    s += "in_channels=" + std::to_string(rc.model.in_channels) + "\n";
    s += "base_filters=" + std::to_string(rc.model.base_filters) + "\n";
    s += "filter_ratio=" + std::to_string(rc.model.filter_ratio) + "\n";
    s += "levels=" + std::to_string(rc.model.levels) + "\n";
    s += "patch_x=" + std::to_string(rc.model.patch[0]) + "\n";
    s += "patch_y=" + std::to_string(rc.model.patch[1]) + "\n";
    s += "patch_z=" + std::to_string(rc.model.patch[2]) + "\n";
    s += "latent_dim=" + std::to_string(rc.model.latent_dim) + "\n";
    s += "groupnorm_groups=" + std::to_string(rc.model.groupnorm_groups) + "\n";
    s += "leaky_slope=" + num(rc.model.leaky_slope) + "\n";
    s += "# training protocol\n";
    s += "epochs=" + std::to_string(rc.train.epochs) + "\n";
    s += "samples_per_epoch=" + std::to_string(rc.train.samples_per_epoch) + "\n";
    s += "patience=" + std::to_string(rc.train.patience) + "\n";
    s += "p_pos=" + num(rc.train.p_pos) + "\n";
    s += "seed=" + std::to_string(rc.train.seed) + "\n";
    std::string ids;
    for (const std::string& id : rc.train.val_case_ids) {
        if (!ids.empty()) ids += ',';
        ids += id;
    }
    s += "val_cases=" + ids + "\n";
    s += "val_patches_per_case=" + std::to_string(rc.train.val_patches_per_case) + "\n";
    s += "kl_divisor=" + std::to_string(rc.train.kl_divisor) + "\n";
    s += "# learning-rate schedule\n";
    s += "lr_alpha0=" + num(rc.train.schedule.alpha0) + "\n";
    s += "lr_exponent=" + num(rc.train.schedule.exponent) + "\n";
    s += "lr_total_epochs=" + std::to_string(rc.train.schedule.total_epochs) + "\n";
    s += "# loss weights\n";
    s += "w_l2=" + num(rc.train.weights.w_l2) + "\n";
    s += "w_kl=" + num(rc.train.weights.w_kl) + "\n";
    s += "w_dice=" + num(rc.train.weights.w_dice) + "\n";
    s += "dice_smooth=" + num(rc.train.weights.smooth_s) + "\n";
    s += "# inference\n";
    s += "thr_wt=" + num(rc.thresholds.wt) + "\n";
    s += "thr_tc=" + num(rc.thresholds.tc) + "\n";
    s += "thr_et=" + num(rc.thresholds.et) + "\n";
    s += "budget_bytes=" + std::to_string(rc.budget_bytes) + "\n";
    return s;
}

}  // namespace segvae
