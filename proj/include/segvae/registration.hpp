#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "segvae/errors.hpp"
#include "segvae/parallel.hpp"
#include "segvae/volume.hpp"

namespace segvae {

// ---------------------------------------------------------------------------
// Affine transforms
// ---------------------------------------------------------------------------

/// 9-DOF affine map between mm spaces. Forward model, applied to a moving-
/// space point p about the moving volume's center c:
///     q = Rz·Ry·Rx · (scale ⊙ (p − c)) + c + translation
struct AffineTransform {
    Float3 translation_mm{0, 0, 0};
    Float3 rotation_rad{0, 0, 0};  // Euler angles, applied x, then y, then z
    Float3 scale{1, 1, 1};

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            if (scale[a] < 0.5f || scale[a] > 2.0f) {
                throw ConfigError("AffineTransform: scale component " + std::to_string(scale[a]) +
                                  " outside [0.5, 2.0]");
            }
        }
    }
};

/// Output-grid geometry for resampling.
struct GridSpec {
    Index3 shape{};
    Float3 spacing{1, 1, 1};
    Float3 origin{0, 0, 0};
};

[[nodiscard]] inline GridSpec grid_of(const Volume& v) {
    return GridSpec{v.shape(), v.spacing_mm(), v.origin_mm()};
}

namespace reg_detail {

using Mat3 = std::array<std::array<double, 3>, 3>;

[[nodiscard]] inline Mat3 rotation_matrix(const Float3& r) {
    const double cx = std::cos(r[0]), sx = std::sin(r[0]);
    const double cy = std::cos(r[1]), sy = std::sin(r[1]);
    const double cz = std::cos(r[2]), sz = std::sin(r[2]);
    // R = Rz * Ry * Rx
    return Mat3{{{cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx},
                 {sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx},
                 {-sy, cy * sx, cy * cx}}};
}

/// Voxel-center of the volume's midpoint in mm.
[[nodiscard]] inline std::array<double, 3> center_mm(const Volume& v) {
    std::array<double, 3> c{};
    for (int a = 0; a < 3; ++a) {
        c[a] = v.origin_mm()[a] + v.spacing_mm()[a] * (v.shape()[a] - 1) / 2.0;
    }
    return c;
}

/// Zero-padded trilinear sample of v at continuous voxel coordinates u.
[[nodiscard]] inline float sample_trilinear(const Volume& v, double ux, double uy, double uz) {
    const Index3& s = v.shape();
    const int x0 = static_cast<int>(std::floor(ux));
    const int y0 = static_cast<int>(std::floor(uy));
    const int z0 = static_cast<int>(std::floor(uz));
    const double fx = ux - x0, fy = uy - y0, fz = uz - z0;
    double acc = 0.0;
    for (int dz = 0; dz < 2; ++dz) {
        const int z = z0 + dz;
        if (z < 0 || z >= s[2]) continue;
        const double wz = dz ? fz : 1.0 - fz;
        for (int dy = 0; dy < 2; ++dy) {
            const int y = y0 + dy;
            if (y < 0 || y >= s[1]) continue;
            const double wy = dy ? fy : 1.0 - fy;
            for (int dx = 0; dx < 2; ++dx) {
                const int x = x0 + dx;
                if (x < 0 || x >= s[0]) continue;
                const double wx = dx ? fx : 1.0 - fx;
                acc += wz * wy * wx * v.at(x, y, z);
            }
        }
    }
    return static_cast<float>(acc);
}

/// Pearson correlation of two equal-length float arrays (double accumulation).
/// Returns 0 when either variance underflows.
[[nodiscard]] inline double pearson(const float* a, const float* b, std::int64_t n) {
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double x = a[i], y = b[i];
        sa += x;
        sb += y;
        saa += x * x;
        sbb += y * y;
        sab += x * y;
    }
    const double inv = 1.0 / static_cast<double>(n);
    const double va = saa * inv - sa * inv * sa * inv;
    const double vb = sbb * inv - sb * inv * sb * inv;
    if (va < 1e-12 || vb < 1e-12) return 0.0;
    const double cov = sab * inv - sa * inv * sb * inv;
    const double r = cov / std::sqrt(va * vb);
    return std::clamp(r, -1.0, 1.0);
}

[[nodiscard]] inline bool is_constant(const Volume& v) {
    const float* p = v.data();
    for (std::int64_t i = 1; i < v.size(); ++i) {
        if (p[i] != p[0]) return false;
    }
    return true;
}

}  // namespace reg_detail

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Pulls v onto out_grid through t: each output voxel center is mapped by t⁻¹
/// into v's mm space and sampled trilinearly; points outside v read 0.
[[nodiscard]] inline Volume resample(const Volume& v, const AffineTransform& t, const GridSpec& out_grid) {
    t.validate();
    const reg_detail::Mat3 r = reg_detail::rotation_matrix(t.rotation_rad);
    const std::array<double, 3> c = reg_detail::center_mm(v);
    const std::array<double, 3> inv_scale{1.0 / t.scale[0], 1.0 / t.scale[1], 1.0 / t.scale[2]};

    Volume out(out_grid.shape, out_grid.spacing, out_grid.origin);
    const Index3& os = out_grid.shape;
    parallel_blocks(os[2], [&](int z0, int z1) {
        for (int z = z0; z < z1; ++z) {
            for (int y = 0; y < os[1]; ++y) {
                for (int x = 0; x < os[0]; ++x) {
                    // q − c − translation, then apply Rᵀ, S⁻¹, and re-anchor at c.
                    const double qx = out_grid.origin[0] + out_grid.spacing[0] * x - c[0] - t.translation_mm[0];
                    const double qy = out_grid.origin[1] + out_grid.spacing[1] * y - c[1] - t.translation_mm[1];
                    const double qz = out_grid.origin[2] + out_grid.spacing[2] * z - c[2] - t.translation_mm[2];
                    const double px = c[0] + inv_scale[0] * (r[0][0] * qx + r[1][0] * qy + r[2][0] * qz);
                    const double py = c[1] + inv_scale[1] * (r[0][1] * qx + r[1][1] * qy + r[2][1] * qz);
                    const double pz = c[2] + inv_scale[2] * (r[0][2] * qx + r[1][2] * qy + r[2][2] * qz);
                    const double ux = (px - v.origin_mm()[0]) / v.spacing_mm()[0];
                    const double uy = (py - v.origin_mm()[1]) / v.spacing_mm()[1];
                    const double uz = (pz - v.origin_mm()[2]) / v.spacing_mm()[2];
                    out.at(x, y, z) = reg_detail::sample_trilinear(v, ux, uy, uz);
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Affine registration
// ---------------------------------------------------------------------------

struct RegistrationResult {
    AffineTransform transform;
    double correlation = 0.0;
};

namespace reg_detail {

[[nodiscard]] inline double score(const Volume& moving, const Volume& fixed, const GridSpec& grid,
                                  const AffineTransform& t) {
    const Volume warped = resample(moving, t, grid);
    return pearson(warped.data(), fixed.data(), fixed.size());
}

/// Keeps `best` if no strictly better candidate exists; earlier candidates in
/// the deterministic scan order win ties.
inline void consider(const Volume& moving, const Volume& fixed, const GridSpec& grid,
                     const AffineTransform& t, RegistrationResult& best) {
    const double s = score(moving, fixed, grid, t);
    if (s > best.correlation) {
        best.correlation = s;
        best.transform = t;
    }
}

}  // namespace reg_detail

/// 9-DOF registration of `moving` onto `fixed` by deterministic coarse-to-fine
/// grid search maximizing global Pearson correlation: translations ±20 mm
/// (step 4 → 2 → 1 mm), then rotations ±0.2 rad (step 0.05 → 0.025 → 0.0125),
/// then isotropic scale 0.9–1.1 (step 0.05 → 0.025 → 0.0125), then per-axis
/// anisotropic scale refinement (step 0.025 → 0.0125), then one final
/// translation polish at 1 mm.
[[nodiscard]] inline RegistrationResult affine_register(const Volume& moving, const Volume& fixed) {
    if (reg_detail::is_constant(moving) || reg_detail::is_constant(fixed)) {
        throw DataError("affine_register: constant (degenerate) input volume");
    }
    const GridSpec grid = grid_of(fixed);
    RegistrationResult best;
    best.correlation = reg_detail::score(moving, fixed, grid, best.transform);

    // Translation: full ±20 mm grid at 4 mm, then ±1-step neighborhoods at 2 and 1 mm.
    {
        AffineTransform t = best.transform;
        for (double tx = -20; tx <= 20; tx += 4) {
            for (double ty = -20; ty <= 20; ty += 4) {
                for (double tz = -20; tz <= 20; tz += 4) {
                    t.translation_mm = {float(tx), float(ty), float(tz)};
                    reg_detail::consider(moving, fixed, grid, t, best);
                }
            }
        }
    }
    for (double step : {2.0, 1.0}) {
        const Float3 base = best.transform.translation_mm;
        AffineTransform t = best.transform;
        for (int dx = -1; dx <= 1; ++dx) {
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dz = -1; dz <= 1; ++dz) {
                    t.translation_mm = {float(base[0] + step * dx), float(base[1] + step * dy),
                                        float(base[2] + step * dz)};
                    reg_detail::consider(moving, fixed, grid, t, best);
                }
            }
        }
    }

    // Rotation: full ±0.2 rad grid at 0.05, then neighborhoods at 0.025 and 0.0125.
    {
        AffineTransform t = best.transform;
        for (double rx = -0.2; rx <= 0.2001; rx += 0.05) {
            for (double ry = -0.2; ry <= 0.2001; ry += 0.05) {
                for (double rz = -0.2; rz <= 0.2001; rz += 0.05) {
                    t.rotation_rad = {float(rx), float(ry), float(rz)};
                    reg_detail::consider(moving, fixed, grid, t, best);
                }
            }
        }
    }
    for (double step : {0.025, 0.0125}) {
        const Float3 base = best.transform.rotation_rad;
        AffineTransform t = best.transform;
        for (int dx = -1; dx <= 1; ++dx) {
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dz = -1; dz <= 1; ++dz) {
                    t.rotation_rad = {float(base[0] + step * dx), float(base[1] + step * dy),
                                      float(base[2] + step * dz)};
                    reg_detail::consider(moving, fixed, grid, t, best);
                }
            }
        }
    }

    // Isotropic scale: 0.9–1.1 at 0.05, refined at 0.025 and 0.0125.
    {
        AffineTransform t = best.transform;
        for (double f = 0.9; f <= 1.1001; f += 0.05) {
            t.scale = {float(f), float(f), float(f)};
            reg_detail::consider(moving, fixed, grid, t, best);
        }
        for (double step : {0.025, 0.0125}) {
            const double base = best.transform.scale[0];
            for (int d = -1; d <= 1; ++d) {
                const double f = base + step * d;
                t.scale = {float(f), float(f), float(f)};
                reg_detail::consider(moving, fixed, grid, t, best);
            }
        }
    }

    // Anisotropic scale: joint per-axis neighborhoods at 0.025 and 0.0125.
    for (double step : {0.025, 0.0125}) {
        const Float3 base = best.transform.scale;
        AffineTransform t = best.transform;
        for (int dx = -1; dx <= 1; ++dx) {
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dz = -1; dz <= 1; ++dz) {
                    t.scale = {float(base[0] + step * dx), float(base[1] + step * dy),
                               float(base[2] + step * dz)};
                    reg_detail::consider(moving, fixed, grid, t, best);
                }
            }
        }
    }

    // Final translation polish at 1 mm.
    {
        const Float3 base = best.transform.translation_mm;
        AffineTransform t = best.transform;
        for (int dx = -1; dx <= 1; ++dx) {
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dz = -1; dz <= 1; ++dz) {
                    t.translation_mm = {float(base[0] + dx), float(base[1] + dy), float(base[2] + dz)};
                    reg_detail::consider(moving, fixed, grid, t, best);
                }
            }
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Searchlight Pearson similarity
// ---------------------------------------------------------------------------

/// Per-voxel Pearson correlation of a and b over the sphere of voxel centers
/// within radius_mm (inclusive). Either local variance < 1e-12 → 0. Output
/// values lie in [−1, 1].
[[nodiscard]] inline Volume searchlight_pearson(const Volume& a, const Volume& b, float radius_mm = 7.0f) {
    if (a.shape() != b.shape() || a.spacing_mm() != b.spacing_mm()) {
        throw ShapeError("searchlight_pearson: grids differ: " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    }
    const Index3& s = a.shape();
    const Float3& sp = a.spacing_mm();

    // Precompute the sphere's integer offsets once.
    struct Offset {
        int dx, dy, dz;
    };
    std::vector<Offset> sphere;
    const double r2 = static_cast<double>(radius_mm) * radius_mm;
    const int rx = static_cast<int>(std::floor(radius_mm / sp[0]));
    const int ry = static_cast<int>(std::floor(radius_mm / sp[1]));
    const int rz = static_cast<int>(std::floor(radius_mm / sp[2]));
    for (int dz = -rz; dz <= rz; ++dz) {
        for (int dy = -ry; dy <= ry; ++dy) {
            for (int dx = -rx; dx <= rx; ++dx) {
                const double d2 = double(dx * sp[0]) * (dx * sp[0]) + double(dy * sp[1]) * (dy * sp[1]) +
                                  double(dz * sp[2]) * (dz * sp[2]);
                if (d2 <= r2) sphere.push_back({dx, dy, dz});
            }
        }
    }

    Volume out(s, sp, a.origin_mm());
    parallel_blocks(s[2], [&](int z0, int z1) {
        for (int z = z0; z < z1; ++z) {
            for (int y = 0; y < s[1]; ++y) {
                for (int x = 0; x < s[0]; ++x) {
                    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
                    int n = 0;
                    for (const Offset& o : sphere) {
                        const int px = x + o.dx, py = y + o.dy, pz = z + o.dz;
                        if (px < 0 || px >= s[0] || py < 0 || py >= s[1] || pz < 0 || pz >= s[2]) continue;
                        const double va = a.at(px, py, pz);
                        const double vb = b.at(px, py, pz);
                        sa += va;
                        sb += vb;
                        saa += va * va;
                        sbb += vb * vb;
                        sab += va * vb;
                        ++n;
                    }
                    double r = 0.0;
                    if (n > 0) {
                        const double inv = 1.0 / n;
                        const double var_a = saa * inv - sa * inv * sa * inv;
                        const double var_b = sbb * inv - sb * inv * sb * inv;
                        if (var_a >= 1e-12 && var_b >= 1e-12) {
                            const double cov = sab * inv - sa * inv * sb * inv;
                            r = std::clamp(cov / std::sqrt(var_a * var_b), -1.0, 1.0);
                        }
                    }
                    out.at(x, y, z) = static_cast<float>(r);
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Map normalization
// ---------------------------------------------------------------------------

/// Min-max rescales m to [0, 1]. A constant map has no defined rescaling.
[[nodiscard]] inline Volume normalize_map(const Volume& m) {
    const float* p = m.data();
    float lo = p[0], hi = p[0];
    for (std::int64_t i = 1; i < m.size(); ++i) {
        lo = std::min(lo, p[i]);
        hi = std::max(hi, p[i]);
    }
    if (!(hi > lo)) throw DataError("normalize_map: constant (degenerate) map");
    Volume out(m.shape(), m.spacing_mm(), m.origin_mm());
    const float inv = 1.0f / (hi - lo);
    float* dst = out.data();
    for (std::int64_t i = 0; i < m.size(); ++i) dst[i] = (p[i] - lo) * inv;
    return out;
}

}  // namespace segvae
