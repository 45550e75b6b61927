#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "segvae/errors.hpp"
#include "segvae/pipeline.hpp"
#include "segvae/volume.hpp"

namespace segvae {

namespace metrics_detail {

inline void require_same_grid(const char* op, const Volume& a, const Volume& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": grids differ: " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    }
}

[[nodiscard]] inline bool set_at(const Volume& v, std::int64_t i) noexcept { return v.data()[i] != 0.0f; }

}  // namespace metrics_detail

// ---------------------------------------------------------------------------
// Overlap metrics
// ---------------------------------------------------------------------------

/// Dice coefficient 2|P∩T| / (|P|+|T|). Both masks empty → 1.0 (perfect
/// agreement on absence); exactly one empty → 0.0.
[[nodiscard]] inline double dice_score(const Volume& pred, const Volume& truth) {
    metrics_detail::require_same_grid("dice_score", pred, truth);
    std::int64_t p = 0, t = 0, both = 0;
    const std::int64_t n = pred.size();
    for (std::int64_t i = 0; i < n; ++i) {
        const bool bp = metrics_detail::set_at(pred, i);
        const bool bt = metrics_detail::set_at(truth, i);
        p += bp;
        t += bt;
        both += bp && bt;
    }
    if (p + t == 0) return 1.0;
    if (p == 0 || t == 0) return 0.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(p + t);
}

/// (sensitivity, specificity) = (TP/(TP+FN), TN/(TN+FP)); an empty truth
/// yields sensitivity 1.0 and a full truth yields specificity 1.0 (nothing to
/// miss / nothing to spare).
[[nodiscard]] inline std::pair<double, double> sensitivity_specificity(const Volume& pred,
                                                                       const Volume& truth) {
    metrics_detail::require_same_grid("sensitivity_specificity", pred, truth);
    std::int64_t tp = 0, fn = 0, fp = 0, tn = 0;
    const std::int64_t n = pred.size();
    for (std::int64_t i = 0; i < n; ++i) {
        const bool bp = metrics_detail::set_at(pred, i);
        const bool bt = metrics_detail::set_at(truth, i);
        tp += bp && bt;
        fn += !bp && bt;
        fp += bp && !bt;
        tn += !bp && !bt;
    }
    const double sens = (tp + fn == 0) ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    const double spec = (tn + fp == 0) ? 1.0 : static_cast<double>(tn) / static_cast<double>(tn + fp);
    return {sens, spec};
}

// ---------------------------------------------------------------------------
// Hausdorff95
// ---------------------------------------------------------------------------

namespace metrics_detail {

/// Surface voxels: mask voxels with at least one of the 6 face-neighbors
/// outside the mask; the volume boundary counts as outside.
[[nodiscard]] inline std::vector<Index3> surface_voxels(const Volume& mask) {
    const Index3& s = mask.shape();
    std::vector<Index3> out;
    for (int z = 0; z < s[2]; ++z) {
        for (int y = 0; y < s[1]; ++y) {
            for (int x = 0; x < s[0]; ++x) {
                if (!set_at(mask, mask.index(x, y, z))) continue;
                const bool surf = x == 0 || !set_at(mask, mask.index(x - 1, y, z)) ||    //
                                  x == s[0] - 1 || !set_at(mask, mask.index(x + 1, y, z)) ||  //
                                  y == 0 || !set_at(mask, mask.index(x, y - 1, z)) ||    //
                                  y == s[1] - 1 || !set_at(mask, mask.index(x, y + 1, z)) ||  //
                                  z == 0 || !set_at(mask, mask.index(x, y, z - 1)) ||    //
                                  z == s[2] - 1 || !set_at(mask, mask.index(x, y, z + 1));
                if (surf) out.push_back({x, y, z});
            }
        }
    }
    return out;
}

/// 95th-percentile (nearest-rank, index ceil(0.95·n), 1-based) of the
/// directed min-distance multiset from each voxel of `from` to `to`, in mm.
[[nodiscard]] inline double directed_p95(const std::vector<Index3>& from, const std::vector<Index3>& to,
                                         const Float3& sp) {
    std::vector<double> dists;
    dists.reserve(from.size());
    for (const Index3& a : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const Index3& b : to) {
            const double dx = (a[0] - b[0]) * static_cast<double>(sp[0]);
            const double dy = (a[1] - b[1]) * static_cast<double>(sp[1]);
            const double dz = (a[2] - b[2]) * static_cast<double>(sp[2]);
            best = std::min(best, dx * dx + dy * dy + dz * dz);
        }
        dists.push_back(best);
    }
    const std::size_t rank = static_cast<std::size_t>(
        std::ceil(0.95 * static_cast<double>(dists.size())));
    std::nth_element(dists.begin(), dists.begin() + (rank - 1), dists.end());
    return std::sqrt(dists[rank - 1]);
}

}  // namespace metrics_detail

/// Symmetric 95th-percentile Hausdorff distance over mask surfaces, in mm.
/// Either mask empty → std::nullopt (undefined; excluded from aggregates).
[[nodiscard]] inline std::optional<double> hausdorff95(const Volume& pred, const Volume& truth) {
    metrics_detail::require_same_grid("hausdorff95", pred, truth);
    const std::vector<Index3> sp = metrics_detail::surface_voxels(pred);
    const std::vector<Index3> st = metrics_detail::surface_voxels(truth);
    if (sp.empty() || st.empty()) return std::nullopt;
    const Float3& spacing = pred.spacing_mm();
    return std::max(metrics_detail::directed_p95(sp, st, spacing),
                    metrics_detail::directed_p95(st, sp, spacing));
}

// ---------------------------------------------------------------------------
// Per-case metrics and aggregation
// ---------------------------------------------------------------------------

struct RegionMetrics {
    double dice = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    std::optional<double> hausdorff95_mm;
};

struct CaseMetrics {
    std::string case_id;
    RegionMetrics et, wt, tc;
};

[[nodiscard]] inline RegionMetrics region_metrics(const Volume& pred, const Volume& truth) {
    RegionMetrics r;
    r.dice = dice_score(pred, truth);
    const auto [sens, spec] = sensitivity_specificity(pred, truth);
    r.sensitivity = sens;
    r.specificity = spec;
    r.hausdorff95_mm = hausdorff95(pred, truth);
    return r;
}

[[nodiscard]] inline CaseMetrics case_metrics(const std::string& case_id, const RegionMasks& pred,
                                              const RegionMasks& truth) {
    CaseMetrics m;
    m.case_id = case_id;
    m.et = region_metrics(pred.et, truth.et);
    m.wt = region_metrics(pred.wt, truth.wt);
    m.tc = region_metrics(pred.tc, truth.tc);
    return m;
}

/// metrics.csv column order after case_id.
inline constexpr std::array<const char*, 12> metric_columns{
    "dice_et", "dice_wt", "dice_tc", "sens_et", "sens_wt", "sens_tc",
    "spec_et", "spec_wt", "spec_tc", "hd95_et", "hd95_wt", "hd95_tc"};

/// Values of one case row in metric_columns order; HD95 cells may be absent.
[[nodiscard]] inline std::array<std::optional<double>, 12> metric_row(const CaseMetrics& m) {
    return {m.et.dice,        m.wt.dice,        m.tc.dice,        m.et.sensitivity,
            m.wt.sensitivity, m.tc.sensitivity, m.et.specificity, m.wt.specificity,
            m.tc.specificity, m.et.hausdorff95_mm, m.wt.hausdorff95_mm, m.tc.hausdorff95_mm};
}

/// Mean, sample standard deviation (n−1 denominator; 0 when n=1), and median
/// (mean of the middle two for even n) of one metric column. n counts the
/// defined values; excluded counts undefined HD95 entries left out.
struct ColumnStats {
    double mean = 0.0;
    double stdev = 0.0;
    double median = 0.0;
    int n = 0;
    int excluded = 0;
};

struct AggregateReport {
    std::vector<CaseMetrics> cases;
    std::array<ColumnStats, 12> columns{};
};

[[nodiscard]] inline ColumnStats column_stats(std::vector<double> vals, int excluded) {
    ColumnStats s;
    s.n = static_cast<int>(vals.size());
    s.excluded = excluded;
    if (vals.empty()) return s;
    double sum = 0.0;
    for (double v : vals) sum += v;
    s.mean = sum / static_cast<double>(vals.size());
    if (vals.size() > 1) {
        double ss = 0.0;
        for (double v : vals) ss += (v - s.mean) * (v - s.mean);
        s.stdev = std::sqrt(ss / static_cast<double>(vals.size() - 1));
    }
    std::sort(vals.begin(), vals.end());
    const std::size_t h = vals.size() / 2;
    s.median = vals.size() % 2 == 1 ? vals[h] : 0.5 * (vals[h - 1] + vals[h]);
    return s;
}

[[nodiscard]] inline AggregateReport aggregate(std::vector<CaseMetrics> cases) {
    if (cases.empty()) throw ConfigError("aggregate: no case metrics");
    AggregateReport rep;
    rep.cases = std::move(cases);
    for (std::size_t col = 0; col < 12; ++col) {
        std::vector<double> vals;
        int excluded = 0;
        for (const CaseMetrics& c : rep.cases) {
            const auto row = metric_row(c);
            if (row[col].has_value()) {
                vals.push_back(*row[col]);
            } else {
                ++excluded;
            }
        }
        rep.columns[col] = column_stats(std::move(vals), excluded);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// metrics.csv
// ---------------------------------------------------------------------------

namespace metrics_detail {

[[nodiscard]] inline std::string format_cell(const std::optional<double>& v) {
    if (!v.has_value()) return "NA";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", *v);
    return buf;
}

}  // namespace metrics_detail

/// Renders the report in the documented CSV layout: header, one row per
/// case, then aggregate rows labeled mean, std, median. Undefined HD95 cells
/// are written as NA; aggregate HD95 cells are NA when every case was
/// undefined, and excluded counts are noted in a trailing comment line.
[[nodiscard]] inline std::string write_metrics_csv(const AggregateReport& rep) {
    std::string out = "case_id";
    for (const char* col : metric_columns) {
        out += ',';
        out += col;
    }
    out += '\n';
    for (const CaseMetrics& c : rep.cases) {
        out += c.case_id;
        for (const auto& cell : metric_row(c)) {
            out += ',';
            out += metrics_detail::format_cell(cell);
        }
        out += '\n';
    }
    const auto agg_row = [&](const char* name, auto pick) {
        out += name;
        for (const ColumnStats& s : rep.columns) {
            out += ',';
            out += metrics_detail::format_cell(s.n > 0 ? std::optional<double>(pick(s)) : std::nullopt);
        }
        out += '\n';
    };
    agg_row("mean", [](const ColumnStats& s) { return s.mean; });
    agg_row("std", [](const ColumnStats& s) { return s.stdev; });
    agg_row("median", [](const ColumnStats& s) { return s.median; });
    int total_excluded = 0;
    for (const ColumnStats& s : rep.columns) total_excluded += s.excluded;
    if (total_excluded > 0) {
        out += "# hd95 undefined (excluded from aggregates): et=" +
               std::to_string(rep.columns[9].excluded) + " wt=" + std::to_string(rep.columns[10].excluded) +
               " tc=" + std::to_string(rep.columns[11].excluded) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Voxelwise error map
// ---------------------------------------------------------------------------

/// Per-voxel mean over cases of |pred − truth| — the voxelwise disagreement
/// rate. All volumes must share one grid.
[[nodiscard]] inline Volume error_map(const std::vector<std::pair<Volume, Volume>>& cases) {
    if (cases.empty()) throw ConfigError("error_map: no cases");
    const Index3 shape = cases[0].first.shape();
    Volume out(shape, cases[0].first.spacing_mm(), cases[0].first.origin_mm());
    const std::int64_t n = out.size();
    for (const auto& [pred, truth] : cases) {
        metrics_detail::require_same_grid("error_map", pred, truth);
        if (pred.shape() != shape) {
            throw ShapeError("error_map: case grid " + to_string(pred.shape()) + " differs from " +
                             to_string(shape));
        }
        const float* p = pred.data();
        const float* t = truth.data();
        float* dst = out.data();
        for (std::int64_t i = 0; i < n; ++i) dst[i] += std::abs(p[i] - t[i]);
    }
    const float inv = 1.0f / static_cast<float>(cases.size());
    float* dst = out.data();
    for (std::int64_t i = 0; i < n; ++i) dst[i] *= inv;
    return out;
}

}  // namespace segvae
