#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "oracles.hpp"
#include "segvae/nifti.hpp"
#include "segvae/rng.hpp"
#include "segvae/volume.hpp"

using namespace segvae;

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------

TEST_CASE("rng: identical seeds replay, distinct streams diverge") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng s1 = Rng::stream(7, "train", 0, 3);
    Rng s1b = Rng::stream(7, "train", 0, 3);
    Rng s2 = Rng::stream(7, "train", 0, 4);
    Rng s3 = Rng::stream(7, "val", 0, 3);
    CHECK(s1.next_u64() == s1b.next_u64());
    CHECK(s1.next_u64() != s2.next_u64());
    CHECK(s2.next_u64() != s3.next_u64());
}

TEST_CASE("rng: uniform stays in [0,1) and uniform(lo,hi) in [lo,hi)") {
    Rng r(1);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform(-3.0, 2.0);
        CHECK(u >= -3.0);
        CHECK(u < 2.0);
    }
}

TEST_CASE("rng: uniform_index passes a chi-square uniformity test over 10k draws") {
    // 16 bins, 10000 draws, expected 625 per bin. dof = 15; the chi-square
    // critical value at p = 0.01 is 30.578 -- the statistic must stay below it.
    Rng r(1234);
    std::array<int, 16> counts{};
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) counts[r.uniform_index(16)]++;
    const double expected = draws / 16.0;
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    CHECK(chi2 < 30.578);
}

TEST_CASE("rng: normal draws have mean ~0 and variance ~1") {
    Rng r(99);
    double sum = 0.0, sum2 = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double v = r.normal();
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.03);
    CHECK(std::abs(var - 1.0) < 0.05);
}

// ---------------------------------------------------------------------------
// Volume layout, crop, z-score
// ---------------------------------------------------------------------------

TEST_CASE("volume: x is the fastest-varying axis") {
    Volume v({4, 3, 2}, {1, 1, 1});
    v.at(1, 0, 0) = 10.0f;
    v.at(0, 1, 0) = 20.0f;
    v.at(0, 0, 1) = 30.0f;
    CHECK(v.data()[1] == 10.0f);
    CHECK(v.data()[4] == 20.0f);
    CHECK(v.data()[12] == 30.0f);
    CHECK(v.index(3, 2, 1) == v.size() - 1);
}

TEST_CASE("volume: crop copies the window and shifts the origin") {
    Volume v({6, 5, 4}, {1.0f, 2.0f, 3.0f}, {10.0f, 20.0f, 30.0f});
    for (std::int64_t i = 0; i < v.size(); ++i) v.data()[i] = static_cast<float>(i);

    const Index3 off{1, 2, 1};
    const Index3 cs{3, 2, 2};
    const Volume c = crop(v, off, cs);
    CHECK(c.shape() == cs);
    for (int z = 0; z < cs[2]; ++z)
        for (int y = 0; y < cs[1]; ++y)
            for (int x = 0; x < cs[0]; ++x)
                CHECK(c.at(x, y, z) == v.at(off[0] + x, off[1] + y, off[2] + z));
    CHECK(c.origin_mm()[0] == doctest::Approx(10.0f + 1 * 1.0f));
    CHECK(c.origin_mm()[1] == doctest::Approx(20.0f + 2 * 2.0f));
    CHECK(c.origin_mm()[2] == doctest::Approx(30.0f + 1 * 3.0f));

    CHECK_THROWS_AS((void)crop(v, {4, 0, 0}, cs), BoundsError);
    CHECK_THROWS_AS((void)crop(v, {-1, 0, 0}, cs), BoundsError);
}

TEST_CASE("volume: zscore normalizes nonzero voxels and keeps zeros exact") {
    Volume v({8, 8, 8}, {1, 1, 1});
    Rng rng(5);
    for (std::int64_t i = 0; i < v.size(); i += 2) v.data()[i] = static_cast<float>(rng.uniform(1.0, 5.0));
    const Volume z = zscore_normalize(v);

    double sum = 0.0, sum2 = 0.0;
    std::int64_t n = 0;
    for (std::int64_t i = 0; i < z.size(); ++i) {
        if (v.data()[i] == 0.0f) {
            CHECK(z.data()[i] == 0.0f);
        } else {
            sum += z.data()[i];
            sum2 += static_cast<double>(z.data()[i]) * z.data()[i];
            ++n;
        }
    }
    CHECK(std::abs(sum / n) < 1e-5);
    CHECK(std::abs(sum2 / n - 1.0) < 1e-4);

    Volume zeros({4, 4, 4}, {1, 1, 1});
    CHECK_THROWS_AS((void)zscore_normalize(zeros), DataError);
    Volume constant({4, 4, 4}, {1, 1, 1});
    constant.fill(3.0f);
    CHECK_THROWS_AS((void)zscore_normalize(constant), DataError);
}

// ---------------------------------------------------------------------------
// NIfTI
// ---------------------------------------------------------------------------

TEST_CASE("nifti: volume write/read round-trips payload and geometry bit-exactly") {
    Volume v({7, 5, 3}, {1.5f, 2.0f, 2.5f}, {-4.0f, 3.0f, 9.5f});
    Rng rng(11);
    for (std::int64_t i = 0; i < v.size(); ++i) v.data()[i] = static_cast<float>(rng.normal());

    const auto bytes = write_nifti(v);
    const Volume r = read_nifti_volume(bytes);
    CHECK(r.shape() == v.shape());
    CHECK(r.spacing_mm() == v.spacing_mm());
    CHECK(r.origin_mm() == v.origin_mm());
    CHECK(std::memcmp(r.data(), v.data(), static_cast<std::size_t>(v.size()) * 4) == 0);
    REQUIRE(r.raw_header.has_value());

    // Re-serializing a loaded volume preserves the raw header bytes.
    const auto bytes2 = write_nifti(r);
    CHECK(std::memcmp(bytes2.data(), bytes.data(), 348) == 0);
}

TEST_CASE("nifti: label write/read round-trips and rejects illegal labels") {
    LabelVolume lv({4, 4, 4}, {1, 1, 1});
    lv.at(0, 0, 0) = 1;
    lv.at(1, 0, 0) = 2;
    lv.at(2, 0, 0) = 4;
    const auto bytes = write_nifti(lv);
    const LabelVolume r = read_nifti_labels(bytes);
    CHECK(std::memcmp(r.data(), lv.data(), static_cast<std::size_t>(lv.size())) == 0);

    auto bad = bytes;
    bad[352] = 3;  // label 3 is not in {0, 1, 2, 4}
    CHECK_THROWS_AS((void)read_nifti_labels(bad), DataError);
}

TEST_CASE("nifti: int16 data with scl_slope/scl_inter is rescaled") {
    // Hand-build an int16 file: header + payload, slope 0.5, inter 10.
    Volume proto({2, 2, 2}, {1, 1, 1});
    auto bytes = write_nifti(proto);  // float32 template; rewrite the fields
    auto put16 = [&](std::size_t off, std::int16_t v) { std::memcpy(bytes.data() + off, &v, 2); };
    auto putf = [&](std::size_t off, float v) { std::memcpy(bytes.data() + off, &v, 4); };
    put16(70, 4);   // datatype int16
    put16(72, 16);  // bitpix
    putf(112, 0.5f);
    putf(116, 10.0f);
    bytes.resize(352 + 8 * 2);
    const std::int16_t raw[8] = {0, 2, 4, -6, 100, 50, 8, 1};
    std::memcpy(bytes.data() + 352, raw, sizeof(raw));

    const Volume v = read_nifti_volume(bytes);
    for (int i = 0; i < 8; ++i) CHECK(v.data()[i] == doctest::Approx(0.5f * raw[i] + 10.0f));
}

TEST_CASE("nifti: malformed inputs raise typed errors") {
    Volume v({3, 3, 3}, {1, 1, 1});
    const auto good = write_nifti(v);

    SUBCASE("truncated payload") {
        auto bad = good;
        bad.resize(bad.size() - 5);
        CHECK_THROWS_AS((void)read_nifti_volume(bad), FormatError);
    }
    SUBCASE("bad magic") {
        auto bad = good;
        bad[344] = 'x';
        CHECK_THROWS_AS((void)read_nifti_volume(bad), FormatError);
    }
    SUBCASE("gzip stream") {
        std::vector<std::uint8_t> gz{0x1f, 0x8b, 0x08, 0x00};
        gz.resize(400, 0);
        CHECK_THROWS_AS((void)read_nifti_volume(gz), UnsupportedError);
    }
    SUBCASE("4D image") {
        auto bad = good;
        const std::int16_t four = 4;
        std::memcpy(bad.data() + 40, &four, 2);
        CHECK_THROWS_AS((void)read_nifti_volume(bad), FormatError);
    }
    SUBCASE("non-finite voxel") {
        auto bad = good;
        const float nan = std::nanf("");
        std::memcpy(bad.data() + 352, &nan, 4);
        CHECK_THROWS_AS((void)read_nifti_volume(bad), DataError);
    }
    SUBCASE("unsupported datatype") {
        auto bad = good;
        const std::int16_t dt = 64;  // float64
        std::memcpy(bad.data() + 70, &dt, 2);
        CHECK_THROWS_AS((void)read_nifti_volume(bad), UnsupportedError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS((void)read_volume_file("/nonexistent/path/file.nii"), IoError);
    }
}
