#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "segvae/metrics.hpp"

using namespace segvae;

namespace {

Volume single_voxel_mask(Index3 shape, Index3 at) {
    Volume v(shape, {1, 1, 1});
    v.at(at[0], at[1], at[2]) = 1.0f;
    return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Overlap metrics against set arithmetic
// ---------------------------------------------------------------------------

TEST_CASE("dice, sensitivity, specificity equal their set-arithmetic definitions") {
    Rng rng(4040);
    for (int rep = 0; rep < 50; ++rep) {
        const Index3 shape{int(4 + rng.uniform_index(9)), int(4 + rng.uniform_index(9)),
                           int(4 + rng.uniform_index(9))};
        const Volume pred = oracle::random_mask(rng, shape, {1, 1, 1});
        const Volume truth = oracle::random_mask(rng, shape, {1, 1, 1});
        const oracle::Counts c = oracle::count_sets(pred, truth);

        const double dice_ref =
            2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
        const double sens_ref = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
        const double spec_ref = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);

        // random_mask is never empty, so the guarded branches don't trigger and
        // the quotients must match bit for bit.
        REQUIRE(c.tp + c.fn > 0);
        CHECK(dice_score(pred, truth) == dice_ref);
        const auto [sens, spec] = sensitivity_specificity(pred, truth);
        CHECK(sens == sens_ref);
        if (c.tn + c.fp > 0) CHECK(spec == spec_ref);
    }
}

TEST_CASE("empty-mask conventions") {
    const Index3 shape{6, 6, 6};
    Volume empty(shape, {1, 1, 1});
    Volume full(shape, {1, 1, 1});
    for (std::int64_t i = 0; i < full.size(); ++i) full.data()[i] = 1.0f;
    Rng rng(11);
    const Volume some = oracle::random_mask(rng, shape, {1, 1, 1});

    CHECK(dice_score(empty, empty) == 1.0);   // agree on absence
    CHECK(dice_score(some, empty) == 0.0);    // exactly one empty
    CHECK(dice_score(empty, some) == 0.0);

    // Empty truth: nothing to miss.
    CHECK(sensitivity_specificity(some, empty).first == 1.0);
    // Full truth: nothing to spare.
    CHECK(sensitivity_specificity(some, full).second == 1.0);
    CHECK_THROWS_AS((void)dice_score(empty, Volume({5, 6, 6}, {1, 1, 1})), ShapeError);
}

// ---------------------------------------------------------------------------
// Hausdorff95
// ---------------------------------------------------------------------------

TEST_CASE("hausdorff95 of a (3,4,0) voxel pair is exactly 5") {
    const Index3 shape{8, 8, 4};
    const Volume a = single_voxel_mask(shape, {1, 1, 1});
    const Volume b = single_voxel_mask(shape, {4, 5, 1});
    const auto d = hausdorff95(a, b);
    REQUIRE(d.has_value());
    CHECK(*d == 5.0);
}

TEST_CASE("hausdorff95 is undefined when either mask is empty") {
    const Index3 shape{6, 6, 6};
    Volume empty(shape, {1, 1, 1});
    const Volume one = single_voxel_mask(shape, {2, 2, 2});
    CHECK(!hausdorff95(empty, one).has_value());
    CHECK(!hausdorff95(one, empty).has_value());
    CHECK(!hausdorff95(empty, empty).has_value());
}

TEST_CASE("hausdorff95 matches the brute-force oracle on 100 seeded mask pairs") {
    Rng rng(90210);
    int defined = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const Index3 shape{int(5 + rng.uniform_index(8)), int(5 + rng.uniform_index(8)),
                           int(5 + rng.uniform_index(8))};
        const Float3 spacing = rep % 3 == 0 ? Float3{1.2f, 0.9f, 1.5f} : Float3{1, 1, 1};
        const Volume a = oracle::random_mask(rng, shape, spacing);
        const Volume b = oracle::random_mask(rng, shape, spacing);
        const auto got = hausdorff95(a, b);
        const auto want = oracle::hd95_brute(a, b);
        REQUIRE(got.has_value() == want.has_value());
        if (got.has_value()) {
            // Same distance multiset, same nearest-rank selection: bit-equal.
            REQUIRE(*got == *want);
            ++defined;
        }
    }
    CHECK(defined == 100);  // random_mask never produces an empty mask
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

TEST_CASE("column_stats hand cases") {
    SUBCASE("odd count") {
        const ColumnStats s = column_stats({3.0, 1.0, 2.0}, 0);
        CHECK(s.n == 3);
        CHECK(s.mean == doctest::Approx(2.0));
        CHECK(s.stdev == doctest::Approx(1.0));  // sample stdev of {1,2,3}
        CHECK(s.median == doctest::Approx(2.0));
    }
    SUBCASE("even count: median is the mean of the middle two") {
        const ColumnStats s = column_stats({4.0, 1.0, 3.0, 2.0}, 1);
        CHECK(s.n == 4);
        CHECK(s.excluded == 1);
        CHECK(s.mean == doctest::Approx(2.5));
        CHECK(s.median == doctest::Approx(2.5));
        CHECK(s.stdev == doctest::Approx(std::sqrt(5.0 / 3.0)));
    }
    SUBCASE("single value has zero stdev") {
        const ColumnStats s = column_stats({7.5}, 0);
        CHECK(s.n == 1);
        CHECK(s.stdev == 0.0);
        CHECK(s.mean == 7.5);
        CHECK(s.median == 7.5);
    }
    SUBCASE("empty column") {
        const ColumnStats s = column_stats({}, 3);
        CHECK(s.n == 0);
        CHECK(s.excluded == 3);
        CHECK(s.mean == 0.0);
    }
}

namespace {

CaseMetrics hand_case(const std::string& id, double base, std::optional<double> hd_et) {
    CaseMetrics m;
    m.case_id = id;
    m.et.dice = base;
    m.wt.dice = base + 0.1;
    m.tc.dice = base + 0.05;
    m.et.sensitivity = m.wt.sensitivity = m.tc.sensitivity = base;
    m.et.specificity = m.wt.specificity = m.tc.specificity = 0.99;
    m.et.hausdorff95_mm = hd_et;
    m.wt.hausdorff95_mm = 4.0;
    m.tc.hausdorff95_mm = 6.0;
    return m;
}

}  // namespace

TEST_CASE("aggregate computes per-column stats and tracks excluded HD95 cells") {
    std::vector<CaseMetrics> cases{hand_case("a", 0.6, 2.0), hand_case("b", 0.8, std::nullopt),
                                   hand_case("c", 0.7, 10.0)};
    const AggregateReport rep = aggregate(cases);
    // dice_et column: {0.6, 0.8, 0.7}
    CHECK(rep.columns[0].n == 3);
    CHECK(rep.columns[0].mean == doctest::Approx(0.7));
    CHECK(rep.columns[0].median == doctest::Approx(0.7));
    CHECK(rep.columns[0].stdev == doctest::Approx(0.1));
    // hd95_et column: {2, 10}, one excluded
    CHECK(rep.columns[9].n == 2);
    CHECK(rep.columns[9].excluded == 1);
    CHECK(rep.columns[9].mean == doctest::Approx(6.0));
    CHECK(rep.columns[9].median == doctest::Approx(6.0));
    // hd95_wt column defined everywhere
    CHECK(rep.columns[10].n == 3);
    CHECK(rep.columns[10].excluded == 0);
    CHECK_THROWS_AS((void)aggregate({}), ConfigError);
}

// ---------------------------------------------------------------------------
// metrics.csv
// ---------------------------------------------------------------------------

TEST_CASE("write_metrics_csv layout, NA policy, and recomputable aggregates") {
    std::vector<CaseMetrics> cases{hand_case("case_00", 0.61, 3.5),
                                   hand_case("case_01", 0.72, std::nullopt),
                                   hand_case("case_02", 0.83, 1.25)};
    const AggregateReport rep = aggregate(cases);
    const std::string csv = write_metrics_csv(rep);

    const oracle::CsvTable table = oracle::parse_csv(csv);
    REQUIRE(table.header.size() == 13);
    CHECK(table.header[0] == "case_id");
    for (int i = 0; i < 12; ++i) CHECK(table.header[i + 1] == metric_columns[i]);

    // 3 case rows + mean + std + median.
    REQUIRE(table.rows.size() == 6);
    CHECK(table.rows[3][0] == "mean");
    CHECK(table.rows[4][0] == "std");
    CHECK(table.rows[5][0] == "median");

    // The undefined HD95 cell prints as NA; defined cells parse back exactly.
    CHECK(table.rows[1][10] == "NA");
    CHECK(oracle::csv_cell(table.rows[0][10]) == 3.5);

    // Recompute every aggregate column from the per-case rows.
    for (int col = 0; col < 12; ++col) {
        std::vector<double> vals;
        for (int r = 0; r < 3; ++r) {
            const auto v = oracle::csv_cell(table.rows[r][col + 1]);
            if (v.has_value()) vals.push_back(*v);
        }
        const auto mean_cell = oracle::csv_cell(table.rows[3][col + 1]);
        const auto std_cell = oracle::csv_cell(table.rows[4][col + 1]);
        const auto med_cell = oracle::csv_cell(table.rows[5][col + 1]);
        if (vals.empty()) {
            CHECK(!mean_cell.has_value());
            continue;
        }
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= static_cast<double>(vals.size());
        double stdev = 0.0;
        if (vals.size() > 1) {
            double ss = 0.0;
            for (double v : vals) ss += (v - mean) * (v - mean);
            stdev = std::sqrt(ss / static_cast<double>(vals.size() - 1));
        }
        std::sort(vals.begin(), vals.end());
        const std::size_t h = vals.size() / 2;
        const double median = vals.size() % 2 == 1 ? vals[h] : 0.5 * (vals[h - 1] + vals[h]);
        REQUIRE(mean_cell.has_value());
        REQUIRE(std_cell.has_value());
        REQUIRE(med_cell.has_value());
        CHECK(std::abs(*mean_cell - mean) <= 1e-9);
        CHECK(std::abs(*std_cell - stdev) <= 1e-9);
        CHECK(std::abs(*med_cell - median) <= 1e-9);
    }

    // One undefined et cell -> trailing comment with per-region counts.
    CHECK(csv.find("# hd95 undefined (excluded from aggregates): et=1 wt=0 tc=0") != std::string::npos);
}

TEST_CASE("write_metrics_csv omits the exclusion comment when every HD95 is defined") {
    const AggregateReport rep = aggregate({hand_case("x", 0.5, 2.0)});
    const std::string csv = write_metrics_csv(rep);
    CHECK(csv.find('#') == std::string::npos);
    // %.17g cells survive a parse round trip bit-for-bit.
    const oracle::CsvTable table = oracle::parse_csv(csv);
    CHECK(oracle::csv_cell(table.rows[0][1]) == 0.5);
    CHECK(oracle::csv_cell(table.rows[0][2]) == 0.6);
}

TEST_CASE("case_metrics wires regions into the row in column order") {
    const Index3 shape{8, 8, 8};
    Rng rng(77);
    RegionMasks pred{oracle::random_mask(rng, shape, {1, 1, 1}),
                     oracle::random_mask(rng, shape, {1, 1, 1}),
                     oracle::random_mask(rng, shape, {1, 1, 1})};
    RegionMasks truth{oracle::random_mask(rng, shape, {1, 1, 1}),
                      oracle::random_mask(rng, shape, {1, 1, 1}),
                      oracle::random_mask(rng, shape, {1, 1, 1})};
    const CaseMetrics m = case_metrics("c0", pred, truth);
    CHECK(m.case_id == "c0");
    CHECK(m.wt.dice == dice_score(pred.wt, truth.wt));
    CHECK(m.et.dice == dice_score(pred.et, truth.et));
    const auto row = metric_row(m);
    CHECK(row[0] == m.et.dice);
    CHECK(row[1] == m.wt.dice);
    CHECK(row[2] == m.tc.dice);
    CHECK(row[11] == m.tc.hausdorff95_mm);
}

// ---------------------------------------------------------------------------
// Error map
// ---------------------------------------------------------------------------

TEST_CASE("error_map averages voxelwise absolute disagreement") {
    const Index3 shape{2, 1, 1};
    auto mk = [&](float a, float b) {
        Volume v(shape, {1, 1, 1});
        v.data()[0] = a;
        v.data()[1] = b;
        return v;
    };
    // case 1: |1-0|=1, |0-0|=0; case 2: |0-1|=1, |1-1|=0
    const Volume m = error_map({{mk(1, 0), mk(0, 0)}, {mk(0, 1), mk(1, 1)}});
    CHECK(m.data()[0] == doctest::Approx(1.0));
    CHECK(m.data()[1] == doctest::Approx(0.0));
    CHECK_THROWS_AS((void)error_map({}), ConfigError);
    CHECK_THROWS_AS((void)error_map({{mk(0, 0), Volume({3, 1, 1}, {1, 1, 1})}}), ShapeError);
}
