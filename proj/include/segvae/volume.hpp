#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "segvae/errors.hpp"
#include "segvae/memory.hpp"

namespace segvae {

using Index3 = std::array<int, 3>;
using Float3 = std::array<float, 3>;

inline std::string to_string(const Index3& v) {
    return "(" + std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]) + ")";
}

[[nodiscard]] inline std::int64_t voxel_count(const Index3& shape) noexcept {
    return static_cast<std::int64_t>(shape[0]) * shape[1] * shape[2];
}

// ---------------------------------------------------------------------------
// Volume -- single-channel 3D scalar grid, x fastest-varying
// ---------------------------------------------------------------------------

class Volume {
public:
    Volume() = default;
    Volume(Index3 shape, Float3 spacing_mm, Float3 origin_mm = {0, 0, 0})
        : shape_(shape), spacing_(spacing_mm), origin_(origin_mm) {
        validate_geometry();
        data_.assign(static_cast<std::size_t>(voxel_count(shape_)), 0.0f);
    }

    [[nodiscard]] const Index3& shape() const noexcept { return shape_; }
    [[nodiscard]] const Float3& spacing_mm() const noexcept { return spacing_; }
    [[nodiscard]] const Float3& origin_mm() const noexcept { return origin_; }
    [[nodiscard]] std::int64_t size() const noexcept { return static_cast<std::int64_t>(data_.size()); }

    [[nodiscard]] float* data() noexcept { return data_.data(); }
    [[nodiscard]] const float* data() const noexcept { return data_.data(); }

    [[nodiscard]] std::int64_t index(int x, int y, int z) const noexcept {
        return x + static_cast<std::int64_t>(shape_[0]) * (y + static_cast<std::int64_t>(shape_[1]) * z);
    }
    [[nodiscard]] float at(int x, int y, int z) const noexcept { return data_[index(x, y, z)]; }
    float& at(int x, int y, int z) noexcept { return data_[index(x, y, z)]; }

    void set_origin(Float3 o) noexcept { origin_ = o; }

    /// Raw 348-byte header preserved from file load; opaque, never interpreted.
    std::optional<std::array<char, 348>> raw_header;

private:
    void validate_geometry() const {
        for (int a = 0; a < 3; ++a) {
            if (shape_[a] <= 0) throw DataError("volume shape must be positive, got " + to_string(shape_));
            if (!(spacing_[a] > 0.0f)) throw DataError("voxel spacing must be positive");
        }
    }

    Index3 shape_{0, 0, 0};
    Float3 spacing_{1, 1, 1};
    Float3 origin_{0, 0, 0};
    tracked_floats data_;
};

// ---------------------------------------------------------------------------
// LabelVolume -- segmentation labels restricted to {0, 1, 2, 4}
// ---------------------------------------------------------------------------

inline bool is_legal_label(std::uint8_t v) noexcept { return v == 0 || v == 1 || v == 2 || v == 4; }

class LabelVolume {
public:
    LabelVolume() = default;
    LabelVolume(Index3 shape, Float3 spacing_mm, Float3 origin_mm = {0, 0, 0})
        : shape_(shape), spacing_(spacing_mm), origin_(origin_mm) {
        for (int a = 0; a < 3; ++a) {
            if (shape_[a] <= 0) throw DataError("label volume shape must be positive");
            if (!(spacing_[a] > 0.0f)) throw DataError("voxel spacing must be positive");
        }
        labels_.assign(static_cast<std::size_t>(voxel_count(shape_)), 0);
    }

    [[nodiscard]] const Index3& shape() const noexcept { return shape_; }
    [[nodiscard]] const Float3& spacing_mm() const noexcept { return spacing_; }
    [[nodiscard]] const Float3& origin_mm() const noexcept { return origin_; }
    [[nodiscard]] std::int64_t size() const noexcept { return static_cast<std::int64_t>(labels_.size()); }

    [[nodiscard]] std::uint8_t* data() noexcept { return labels_.data(); }
    [[nodiscard]] const std::uint8_t* data() const noexcept { return labels_.data(); }

    [[nodiscard]] std::int64_t index(int x, int y, int z) const noexcept {
        return x + static_cast<std::int64_t>(shape_[0]) * (y + static_cast<std::int64_t>(shape_[1]) * z);
    }
    [[nodiscard]] std::uint8_t at(int x, int y, int z) const noexcept { return labels_[index(x, y, z)]; }
    std::uint8_t& at(int x, int y, int z) noexcept { return labels_[index(x, y, z)]; }

    void set_origin(Float3 o) noexcept { origin_ = o; }

    std::optional<std::array<char, 348>> raw_header;

private:
    Index3 shape_{0, 0, 0};
    Float3 spacing_{1, 1, 1};
    Float3 origin_{0, 0, 0};
    tracked_bytes labels_;
};

// ---------------------------------------------------------------------------
// Cropping
// ---------------------------------------------------------------------------

namespace detail {

template <typename Vol>
Vol crop_impl(const Vol& v, Index3 offset, Index3 shape) {
    for (int a = 0; a < 3; ++a) {
        if (offset[a] < 0 || shape[a] <= 0 || offset[a] + shape[a] > v.shape()[a]) {
            throw BoundsError("crop window offset=" + to_string(offset) + " shape=" + to_string(shape) +
                              " outside volume " + to_string(v.shape()));
        }
    }
    Float3 origin = v.origin_mm();
    for (int a = 0; a < 3; ++a) origin[a] += static_cast<float>(offset[a]) * v.spacing_mm()[a];
    Vol out(shape, v.spacing_mm(), origin);
    const auto* src = v.data();
    auto* dst = out.data();
    const std::int64_t row = shape[0];
    for (int z = 0; z < shape[2]; ++z) {
        for (int y = 0; y < shape[1]; ++y) {
            const std::int64_t s = v.index(offset[0], offset[1] + y, offset[2] + z);
            const std::int64_t d = out.index(0, y, z);
            for (std::int64_t x = 0; x < row; ++x) dst[d + x] = src[s + x];
        }
    }
    return out;
}

}  // namespace detail

/// Sub-grid copy; origin_mm shifts by offset * spacing.
[[nodiscard]] inline Volume crop(const Volume& v, Index3 offset, Index3 shape) {
    return detail::crop_impl(v, offset, shape);
}
[[nodiscard]] inline LabelVolume crop(const LabelVolume& v, Index3 offset, Index3 shape) {
    return detail::crop_impl(v, offset, shape);
}

// ---------------------------------------------------------------------------
// Intensity normalization
// ---------------------------------------------------------------------------

/// Z-scores the nonzero voxels (the implicit foreground mask) to mean 0,
/// population stdev 1; zero voxels stay exactly zero.
[[nodiscard]] inline Volume zscore_normalize(const Volume& v) {
    const float* src = v.data();
    const std::int64_t n = v.size();
    double sum = 0.0, sum2 = 0.0;
    std::int64_t count = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        if (src[i] != 0.0f) {
            sum += src[i];
            sum2 += static_cast<double>(src[i]) * src[i];
            ++count;
        }
    }
    if (count == 0) throw DataError("zscore_normalize: all-zero volume");
    const double mean = sum / static_cast<double>(count);
    const double var = sum2 / static_cast<double>(count) - mean * mean;
    if (var <= 1e-20) throw DataError("zscore_normalize: constant nonzero intensities (stdev 0)");
    const double inv_std = 1.0 / std::sqrt(var);

    Volume out(v.shape(), v.spacing_mm(), v.origin_mm());
    out.raw_header = v.raw_header;
    float* dst = out.data();
    for (std::int64_t i = 0; i < n; ++i) {
        dst[i] = src[i] == 0.0f ? 0.0f : static_cast<float>((src[i] - mean) * inv_std);
    }
    return out;
}

}  // namespace segvae
