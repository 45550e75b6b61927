#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "segvae/errors.hpp"
#include "segvae/nifti.hpp"
#include "segvae/rng.hpp"
#include "segvae/tensor.hpp"
#include "segvae/volume.hpp"

namespace segvae {

// ---------------------------------------------------------------------------
// Region masks
// ---------------------------------------------------------------------------

/// Binary tumor-region masks (0/1 floats) on one grid.
/// Invariant: et ⊆ tc ⊆ wt voxelwise (whole tumor ⊇ tumor core ⊇ enhancing).
struct RegionMasks {
    Volume wt, tc, et;
};

/// Maps labels to nested region masks: wt = {1,2,4}, tc = {1,4}, et = {4}.
[[nodiscard]] inline RegionMasks region_encode(const LabelVolume& labels) {
    RegionMasks m{Volume(labels.shape(), labels.spacing_mm(), labels.origin_mm()),
                  Volume(labels.shape(), labels.spacing_mm(), labels.origin_mm()),
                  Volume(labels.shape(), labels.spacing_mm(), labels.origin_mm())};
    const std::uint8_t* src = labels.data();
    const std::int64_t n = labels.size();
    float* wt = m.wt.data();
    float* tc = m.tc.data();
    float* et = m.et.data();
    for (std::int64_t i = 0; i < n; ++i) {
        switch (src[i]) {
            case 0: break;
            case 1: wt[i] = 1.0f; tc[i] = 1.0f; break;
            case 2: wt[i] = 1.0f; break;
            case 4: wt[i] = 1.0f; tc[i] = 1.0f; et[i] = 1.0f; break;
            default:
                throw DataError("region_encode: illegal label " + std::to_string(int(src[i])) +
                                " at voxel " + std::to_string(i) + " (expected 0, 1, 2, or 4)");
        }
    }
    return m;
}

/// Inverse of region_encode. Nesting is repaired first by union (et→tc→wt),
/// then each voxel decodes to 4 if et, else 1 if tc, else 2 if wt, else 0.
[[nodiscard]] inline LabelVolume region_decode(const RegionMasks& m) {
    if (m.wt.shape() != m.tc.shape() || m.wt.shape() != m.et.shape()) {
        throw ShapeError("region_decode: mask grids differ: wt " + to_string(m.wt.shape()) +
                         " tc " + to_string(m.tc.shape()) + " et " + to_string(m.et.shape()));
    }
    LabelVolume out(m.wt.shape(), m.wt.spacing_mm(), m.wt.origin_mm());
    const float* wt = m.wt.data();
    const float* tc = m.tc.data();
    const float* et = m.et.data();
    std::uint8_t* dst = out.data();
    const std::int64_t n = out.size();
    for (std::int64_t i = 0; i < n; ++i) {
        const bool e = et[i] != 0.0f;
        const bool t = e || tc[i] != 0.0f;
        const bool w = t || wt[i] != 0.0f;
        dst[i] = e ? 4 : t ? 1 : w ? 2 : 0;
    }
    return out;
}

/// Stacks the masks into a float tensor [3, z, y, x] in the loss channel
/// order (wt, tc, et).
[[nodiscard]] inline Tensor to_region_targets(const RegionMasks& m) {
    const Index3 s = m.wt.shape();
    Tensor t({3, s[2], s[1], s[0]});
    const std::int64_t chan = m.wt.size();
    std::memcpy(t.data(), m.wt.data(), static_cast<std::size_t>(chan) * sizeof(float));
    std::memcpy(t.data() + chan, m.tc.data(), static_cast<std::size_t>(chan) * sizeof(float));
    std::memcpy(t.data() + 2 * chan, m.et.data(), static_cast<std::size_t>(chan) * sizeof(float));
    return t;
}

// ---------------------------------------------------------------------------
// Average tumor template and crop selection
// ---------------------------------------------------------------------------

/// Voxelwise mean of binary masks; values land in [0, 1].
[[nodiscard]] inline Volume average_tumor_template(const std::vector<Volume>& masks) {
    if (masks.empty()) throw ConfigError("average_tumor_template: empty mask list");
    const Index3 shape = masks[0].shape();
    for (const Volume& m : masks) {
        if (m.shape() != shape) {
            throw ShapeError("average_tumor_template: mask grid " + to_string(m.shape()) +
                             " differs from " + to_string(shape));
        }
    }
    Volume out(shape, masks[0].spacing_mm(), masks[0].origin_mm());
    const std::int64_t n = out.size();
    const double inv = 1.0 / static_cast<double>(masks.size());
    float* dst = out.data();
    for (const Volume& m : masks) {
        const float* src = m.data();
        for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
    }
    for (std::int64_t i = 0; i < n; ++i) dst[i] = static_cast<float>(dst[i] * inv);
    return out;
}

namespace pipeline_detail {

/// Summed-volume table with a one-cell zero border: S[x][y][z] holds the sum
/// of v over the box [0,x) × [0,y) × [0,z).
class SummedVolume {
public:
    explicit SummedVolume(const Volume& v) : nx_(v.shape()[0] + 1), ny_(v.shape()[1] + 1), nz_(v.shape()[2] + 1) {
        table_.assign(static_cast<std::size_t>(nx_) * ny_ * nz_, 0.0);
        for (int z = 1; z < nz_; ++z) {
            for (int y = 1; y < ny_; ++y) {
                for (int x = 1; x < nx_; ++x) {
                    at(x, y, z) = static_cast<double>(v.at(x - 1, y - 1, z - 1)) + at(x - 1, y, z) +
                                  at(x, y - 1, z) + at(x, y, z - 1) - at(x - 1, y - 1, z) -
                                  at(x - 1, y, z - 1) - at(x, y - 1, z - 1) + at(x - 1, y - 1, z - 1);
                }
            }
        }
    }

    /// Sum of v over the window [off, off + shape).
    [[nodiscard]] double window_sum(Index3 off, Index3 shape) const {
        const int x0 = off[0], y0 = off[1], z0 = off[2];
        const int x1 = x0 + shape[0], y1 = y0 + shape[1], z1 = z0 + shape[2];
        return at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0) + at(x0, y0, z1) +
               at(x0, y1, z0) + at(x1, y0, z0) - at(x0, y0, z0);
    }

private:
    [[nodiscard]] double at(int x, int y, int z) const noexcept {
        return table_[x + static_cast<std::size_t>(nx_) * (y + static_cast<std::size_t>(ny_) * z)];
    }
    [[nodiscard]] double& at(int x, int y, int z) noexcept {
        return table_[x + static_cast<std::size_t>(nx_) * (y + static_cast<std::size_t>(ny_) * z)];
    }

    int nx_, ny_, nz_;
    std::vector<double> table_;
};

}  // namespace pipeline_detail

/// Offset of the crop window holding the most template mass, searched
/// exhaustively at stride 1 via a summed-volume table. Ties break toward the
/// lexicographically smallest (x, y, z) offset.
[[nodiscard]] inline Index3 select_crop(const Volume& tmpl, Index3 crop_shape) {
    for (int a = 0; a < 3; ++a) {
        if (crop_shape[a] <= 0 || crop_shape[a] > tmpl.shape()[a]) {
            throw BoundsError("select_crop: crop " + to_string(crop_shape) + " does not fit volume " +
                              to_string(tmpl.shape()));
        }
    }
    const pipeline_detail::SummedVolume svt(tmpl);
    Index3 best{0, 0, 0};
    double best_sum = svt.window_sum(best, crop_shape);
    for (int x = 0; x <= tmpl.shape()[0] - crop_shape[0]; ++x) {
        for (int y = 0; y <= tmpl.shape()[1] - crop_shape[1]; ++y) {
            for (int z = 0; z <= tmpl.shape()[2] - crop_shape[2]; ++z) {
                const Index3 off{x, y, z};
                const double s = svt.window_sum(off, crop_shape);
                if (s > best_sum) {
                    best_sum = s;
                    best = off;
                }
            }
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Patch grid
// ---------------------------------------------------------------------------

/// Sliding-window plan: patch shape plus the list of in-bounds patch origins
/// whose union covers the volume.
struct PatchPlan {
    Index3 patch_shape{};
    std::vector<Index3> offsets;
};

/// Evenly spaced patch origins along one axis: n = ceil((dim − patch)/patch) + 1
/// positions at round(i·(dim − patch)/(n − 1)); {0} when dim == patch.
[[nodiscard]] inline std::vector<int> axis_patch_offsets(int dim, int patch) {
    if (patch <= 0 || patch > dim) {
        throw BoundsError("patch_grid: patch extent " + std::to_string(patch) +
                          " does not fit axis of size " + std::to_string(dim));
    }
    if (dim == patch) return {0};
    const int span = dim - patch;
    const int n = (span + patch - 1) / patch + 1;
    std::vector<int> offs(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        offs[i] = static_cast<int>(std::llround(static_cast<double>(i) * span / (n - 1)));
    }
    return offs;
}

/// Full 3D sliding-window plan; offsets enumerate the per-axis grids with x
/// fastest-varying.
[[nodiscard]] inline PatchPlan patch_grid(Index3 volume_shape, Index3 patch = {80, 80, 80}) {
    const std::vector<int> xs = axis_patch_offsets(volume_shape[0], patch[0]);
    const std::vector<int> ys = axis_patch_offsets(volume_shape[1], patch[1]);
    const std::vector<int> zs = axis_patch_offsets(volume_shape[2], patch[2]);
    PatchPlan plan;
    plan.patch_shape = patch;
    plan.offsets.reserve(xs.size() * ys.size() * zs.size());
    for (int z : zs) {
        for (int y : ys) {
            for (int x : xs) plan.offsets.push_back({x, y, z});
        }
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Cases and patch extraction
// ---------------------------------------------------------------------------

/// One subject: image channels (modalities first, then any derived channels)
/// sharing a grid, plus region masks when a segmentation is available.
struct Case {
    std::string id;
    std::vector<Volume> channels;
    std::optional<RegionMasks> regions;
};

/// One training example: channel stack and region masks restricted to a patch.
struct CaseSample {
    Tensor channels;      // [C, pz, py, px]
    RegionMasks regions;  // on the patch grid
    Index3 offset{};      // provenance: patch origin in the case volume
};

/// Copies the window [offset, offset + patch) of every channel into a
/// [C, pz, py, px] tensor.
[[nodiscard]] inline Tensor extract_patch(const std::vector<Volume>& channels, Index3 offset, Index3 patch) {
    if (channels.empty()) throw ConfigError("extract_patch: no channels");
    const int c = static_cast<int>(channels.size());
    Tensor t({c, patch[2], patch[1], patch[0]});
    const std::int64_t chan = static_cast<std::int64_t>(patch[0]) * patch[1] * patch[2];
    for (int ci = 0; ci < c; ++ci) {
        const Volume& v = channels[static_cast<std::size_t>(ci)];
        for (int a = 0; a < 3; ++a) {
            if (offset[a] < 0 || offset[a] + patch[a] > v.shape()[a]) {
                throw BoundsError("extract_patch: window offset=" + to_string(offset) + " patch=" +
                                  to_string(patch) + " outside volume " + to_string(v.shape()));
            }
        }
        float* dst = t.data() + ci * chan;
        for (int z = 0; z < patch[2]; ++z) {
            for (int y = 0; y < patch[1]; ++y) {
                const std::int64_t s = v.index(offset[0], offset[1] + y, offset[2] + z);
                std::memcpy(dst, v.data() + s, static_cast<std::size_t>(patch[0]) * sizeof(float));
                dst += patch[0];
            }
        }
    }
    return t;
}

/// Indices into plan.offsets whose window contains at least one wt voxel.
[[nodiscard]] inline std::vector<int> positive_offsets(const Volume& wt, const PatchPlan& plan) {
    const pipeline_detail::SummedVolume svt(wt);
    std::vector<int> out;
    for (std::size_t i = 0; i < plan.offsets.size(); ++i) {
        if (svt.window_sum(plan.offsets[i], plan.patch_shape) > 0.5) out.push_back(static_cast<int>(i));
    }
    return out;
}

/// Draws one patch: with probability p_pos uniformly among tumor-containing
/// offsets (uniform over all offsets when none exist), otherwise uniformly
/// over the whole plan. Consumes exactly two rng draws.
[[nodiscard]] inline CaseSample sample_patch(const Case& c, const PatchPlan& plan,
                                             const std::vector<int>& positive, Rng& rng, double p_pos) {
    if (p_pos < 0.0 || p_pos > 1.0) {
        throw ConfigError("sample_patch: p_pos must lie in [0,1], got " + std::to_string(p_pos));
    }
    if (!c.regions) throw StateError("sample_patch: case '" + c.id + "' has no segmentation");
    if (plan.offsets.empty()) throw ConfigError("sample_patch: empty patch plan");
    const bool biased = rng.bernoulli(p_pos);
    std::size_t idx;
    if (biased && !positive.empty()) {
        idx = static_cast<std::size_t>(positive[rng.uniform_index(positive.size())]);
    } else {
        idx = rng.uniform_index(plan.offsets.size());
    }
    const Index3 off = plan.offsets[idx];
    CaseSample s;
    s.offset = off;
    s.channels = extract_patch(c.channels, off, plan.patch_shape);
    s.regions = RegionMasks{crop(c.regions->wt, off, plan.patch_shape),
                            crop(c.regions->tc, off, plan.patch_shape),
                            crop(c.regions->et, off, plan.patch_shape)};
    return s;
}

[[nodiscard]] inline CaseSample sample_patch(const Case& c, const PatchPlan& plan, Rng& rng, double p_pos) {
    if (!c.regions) throw StateError("sample_patch: case '" + c.id + "' has no segmentation");
    return sample_patch(c, plan, positive_offsets(c.regions->wt, plan), rng, p_pos);
}

// ---------------------------------------------------------------------------
// Flips and augmentations
// ---------------------------------------------------------------------------

/// Reverses a rank-4 [C, z, y, x] tensor along the spatial axes selected by
/// flips (indexed x, y, z to match Index3).
[[nodiscard]] inline Tensor flip_tensor(const Tensor& t, std::array<bool, 3> flips) {
    if (t.shape().size() != 4) {
        throw ShapeError("flip_tensor: expected rank-4 [C,z,y,x] tensor, got rank " +
                         std::to_string(t.shape().size()));
    }
    const int c = t.shape()[0], dz = t.shape()[1], dy = t.shape()[2], dx = t.shape()[3];
    Tensor out(t.shape());
    const float* src = t.data();
    float* dst = out.data();
    const std::int64_t plane = static_cast<std::int64_t>(dy) * dx;
    const std::int64_t chan = static_cast<std::int64_t>(dz) * plane;
    for (int ci = 0; ci < c; ++ci) {
        for (int z = 0; z < dz; ++z) {
            const int sz = flips[2] ? dz - 1 - z : z;
            for (int y = 0; y < dy; ++y) {
                const int sy = flips[1] ? dy - 1 - y : y;
                const float* row = src + ci * chan + sz * plane + static_cast<std::int64_t>(sy) * dx;
                float* drow = dst + ci * chan + z * plane + static_cast<std::int64_t>(y) * dx;
                if (flips[0]) {
                    for (int x = 0; x < dx; ++x) drow[x] = row[dx - 1 - x];
                } else {
                    std::memcpy(drow, row, static_cast<std::size_t>(dx) * sizeof(float));
                }
            }
        }
    }
    return out;
}

/// Reverses a volume along the axes selected by flips (indexed x, y, z).
[[nodiscard]] inline Volume flip_volume(const Volume& v, std::array<bool, 3> flips) {
    Volume out(v.shape(), v.spacing_mm(), v.origin_mm());
    const Index3 s = v.shape();
    for (int z = 0; z < s[2]; ++z) {
        const int sz = flips[2] ? s[2] - 1 - z : z;
        for (int y = 0; y < s[1]; ++y) {
            const int sy = flips[1] ? s[1] - 1 - y : y;
            for (int x = 0; x < s[0]; ++x) {
                out.at(x, y, z) = v.at(flips[0] ? s[0] - 1 - x : x, sy, sz);
            }
        }
    }
    return out;
}

[[nodiscard]] inline RegionMasks flip_masks(const RegionMasks& m, std::array<bool, 3> flips) {
    return RegionMasks{flip_volume(m.wt, flips), flip_volume(m.tc, flips), flip_volume(m.et, flips)};
}

/// Mirrors each axis independently with probability 0.5; channels and masks
/// flip together. Consumes exactly three rng draws (axes x, y, z in order).
[[nodiscard]] inline CaseSample augment_flip(CaseSample s, Rng& rng) {
    const std::array<bool, 3> flips{rng.bernoulli(0.5), rng.bernoulli(0.5), rng.bernoulli(0.5)};
    if (!flips[0] && !flips[1] && !flips[2]) return s;
    s.channels = flip_tensor(s.channels, flips);
    s.regions = flip_masks(s.regions, flips);
    return s;
}

/// Multiplies all image-channel intensities by one factor f ~ U[0.9, 1.1];
/// masks are untouched. Consumes exactly one rng draw.
[[nodiscard]] inline CaseSample augment_scale(CaseSample s, Rng& rng) {
    const float f = static_cast<float>(rng.uniform(0.9, 1.1));
    float* p = s.channels.data();
    const std::int64_t n = s.channels.size();
    for (std::int64_t i = 0; i < n; ++i) p[i] *= f;
    return s;
}

/// Extracts the patch at the x-axis-mirrored offset (x' = dim_x − offset_x −
/// patch_x, clamped into bounds), then flips it along x so it aligns
/// voxel-for-voxel with the patch at `offset`.
[[nodiscard]] inline Tensor mirrored_patch(const std::vector<Volume>& volumes, Index3 offset, Index3 patch) {
    if (volumes.empty()) throw ConfigError("mirrored_patch: no channels");
    const int dim_x = volumes[0].shape()[0];
    Index3 m = offset;
    m[0] = std::clamp(dim_x - offset[0] - patch[0], 0, dim_x - patch[0]);
    return flip_tensor(extract_patch(volumes, m, patch), {true, false, false});
}

// ---------------------------------------------------------------------------
// Synthetic phantom cases
// ---------------------------------------------------------------------------

/// Modality file-name order used by the case directory layout.
inline constexpr std::array<const char*, 4> modality_names{"t1", "t1ce", "t2", "flair"};

/// Additive intensity offsets per tumor region, one row per modality in
/// modality_names order, columns (edema, core, enhancing). Fixed, documented
/// constants so phantoms are reproducible across builds.
inline constexpr std::array<std::array<float, 3>, 4> phantom_contrast{{
    {-0.10f, -0.25f, 0.30f},  // t1
    {-0.05f, -0.20f, 0.60f},  // t1ce
    {0.45f, 0.25f, 0.10f},    // t2
    {0.55f, 0.30f, 0.15f},    // flair
}};

struct PhantomCase {
    std::array<Volume, 4> modalities;  // modality_names order
    LabelVolume seg;
};

namespace pipeline_detail {

struct Ellipsoid {
    std::array<double, 3> center;  // voxel units
    std::array<double, 3> semi;    // voxel units

    [[nodiscard]] bool contains(int x, int y, int z) const noexcept {
        const double dx = (x - center[0]) / semi[0];
        const double dy = (y - center[1]) / semi[1];
        const double dz = (z - center[2]) / semi[2];
        return dx * dx + dy * dy + dz * dz <= 1.0;
    }
};

}  // namespace pipeline_detail

/// Generates one synthetic case: a noisy intensity-1 brain ellipsoid on an
/// exactly-zero background, carrying nested tumor ellipsoids edema (label 2)
/// ⊃ core (label 1) ⊃ enhancing (label 4) with the documented per-modality
/// contrast offsets. Geometry keeps the whole tumor inside the brain and its
/// volume fraction within roughly 2–9% of brain voxels. Deterministic in rng.
[[nodiscard]] inline PhantomCase make_phantom(Rng& rng, Index3 shape, Float3 spacing = {1, 1, 1}) {
    for (int a = 0; a < 3; ++a) {
        if (shape[a] < 32) {
            throw ConfigError("make_phantom: shape " + to_string(shape) + " below the 32^3 minimum");
        }
    }
    using pipeline_detail::Ellipsoid;
    // Geometry draws, in order: brain semi-axes, edema center offset, edema
    // semi-axes, core/enhancing per-axis shrink factors and center offsets.
    Ellipsoid brain, edema, core, enh;
    for (int a = 0; a < 3; ++a) brain.center[a] = (shape[a] - 1) / 2.0;
    for (int a = 0; a < 3; ++a) brain.semi[a] = rng.uniform(0.39, 0.44) * shape[a];
    for (int a = 0; a < 3; ++a) edema.center[a] = brain.center[a] + rng.uniform(-0.15, 0.15) * shape[a];
    for (int a = 0; a < 3; ++a) edema.semi[a] = rng.uniform(0.13, 0.175) * shape[a];
    for (int a = 0; a < 3; ++a) core.semi[a] = edema.semi[a] * rng.uniform(0.55, 0.80);
    for (int a = 0; a < 3; ++a) core.center[a] = edema.center[a] + rng.uniform(-0.03, 0.03) * shape[a];
    for (int a = 0; a < 3; ++a) enh.semi[a] = core.semi[a] * rng.uniform(0.50, 0.75);
    for (int a = 0; a < 3; ++a) enh.center[a] = core.center[a] + rng.uniform(-0.02, 0.02) * shape[a];

    PhantomCase pc{{Volume(shape, spacing), Volume(shape, spacing), Volume(shape, spacing),
                    Volume(shape, spacing)},
                   LabelVolume(shape, spacing)};

    // Labels: innermost region wins; membership is intersected with the
    // enclosing region so nesting holds by construction.
    std::uint8_t* seg = pc.seg.data();
    for (int z = 0; z < shape[2]; ++z) {
        for (int y = 0; y < shape[1]; ++y) {
            for (int x = 0; x < shape[0]; ++x) {
                if (!brain.contains(x, y, z)) continue;
                const bool in_edema = edema.contains(x, y, z);
                const bool in_core = in_edema && core.contains(x, y, z);
                const bool in_enh = in_core && enh.contains(x, y, z);
                const std::int64_t i = pc.seg.index(x, y, z);
                seg[i] = in_enh ? 4 : in_core ? 1 : in_edema ? 2 : 0;
            }
        }
    }

    // Intensities: modality by modality, raster order, one noise draw per
    // brain voxel; background stays exactly zero.
    for (std::size_t mi = 0; mi < 4; ++mi) {
        float* img = pc.modalities[mi].data();
        for (int z = 0; z < shape[2]; ++z) {
            for (int y = 0; y < shape[1]; ++y) {
                for (int x = 0; x < shape[0]; ++x) {
                    if (!brain.contains(x, y, z)) continue;
                    const std::int64_t i = pc.seg.index(x, y, z);
                    float v = 1.0f;
                    switch (seg[i]) {
                        case 2: v += phantom_contrast[mi][0]; break;
                        case 1: v += phantom_contrast[mi][1]; break;
                        case 4: v += phantom_contrast[mi][2]; break;
                        default: break;
                    }
                    img[i] = v + static_cast<float>(rng.normal() * 0.05);
                }
            }
        }
    }
    return pc;
}

// ---------------------------------------------------------------------------
// Case directory I/O: <root>/<case_id>/{t1,t1ce,t2,flair,seg}.nii
// ---------------------------------------------------------------------------

[[nodiscard]] inline std::filesystem::path case_dir(const std::filesystem::path& root, const std::string& id) {
    return root / id;
}

inline void write_case(const std::filesystem::path& root, const std::string& id,
                       const std::array<Volume, 4>& modalities, const LabelVolume* seg) {
    const std::filesystem::path dir = case_dir(root, id);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("write_case: cannot create " + dir.string() + ": " + ec.message());
    for (std::size_t mi = 0; mi < 4; ++mi) {
        const auto bytes = write_nifti(modalities[mi]);
        write_file_bytes(dir / (std::string(modality_names[mi]) + ".nii"), bytes);
    }
    if (seg != nullptr) {
        const auto bytes = write_nifti(*seg);
        write_file_bytes(dir / "seg.nii", bytes);
    }
}

inline void write_case(const std::filesystem::path& root, const std::string& id, const PhantomCase& pc) {
    write_case(root, id, pc.modalities, &pc.seg);
}

struct CaseLoadOptions {
    bool require_seg = true;  ///< missing seg.nii is a data error when set
    bool normalize = true;    ///< z-score nonzero voxels of each modality
};

/// Loads the four modalities (and seg when present) from a case directory.
/// All files must share one grid. Missing files are data errors naming the
/// case; unreadable or malformed files surface as I/O or format errors.
[[nodiscard]] inline Case load_case(const std::filesystem::path& root, const std::string& id,
                                    CaseLoadOptions opts = {}) {
    const std::filesystem::path dir = case_dir(root, id);
    Case c;
    c.id = id;
    c.channels.reserve(4);
    for (const char* name : modality_names) {
        const std::filesystem::path p = dir / (std::string(name) + ".nii");
        if (!std::filesystem::exists(p)) {
            throw DataError("case '" + id + "': missing " + std::string(name) + ".nii");
        }
        Volume v = read_volume_file(p);
        c.channels.push_back(opts.normalize ? zscore_normalize(v) : std::move(v));
    }
    const Index3 shape = c.channels[0].shape();
    for (const Volume& v : c.channels) {
        if (v.shape() != shape) {
            throw ShapeError("case '" + id + "': modality grids differ: " + to_string(v.shape()) +
                             " vs " + to_string(shape));
        }
    }
    const std::filesystem::path segp = dir / "seg.nii";
    if (std::filesystem::exists(segp)) {
        LabelVolume seg = read_labels_file(segp);
        if (seg.shape() != shape) {
            throw ShapeError("case '" + id + "': seg grid " + to_string(seg.shape()) +
                             " differs from modalities " + to_string(shape));
        }
        c.regions = region_encode(seg);
    } else if (opts.require_seg) {
        throw DataError("case '" + id + "': missing seg.nii");
    }
    return c;
}

/// Sorted case ids: the subdirectories of root containing a t1.nii.
[[nodiscard]] inline std::vector<std::string> list_cases(const std::filesystem::path& root) {
    if (!std::filesystem::is_directory(root)) {
        throw IoError("list_cases: not a directory: " + root.string());
    }
    std::vector<std::string> ids;
    for (const auto& entry : std::filesystem::directory_iterator(root)) {
        if (entry.is_directory() && std::filesystem::exists(entry.path() / "t1.nii")) {
            ids.push_back(entry.path().filename().string());
        }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

}  // namespace segvae
