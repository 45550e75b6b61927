#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "segvae/errors.hpp"
#include "segvae/parallel.hpp"
#include "segvae/tensor.hpp"

namespace segvae {

// ---------------------------------------------------------------------------
// Differentiable primitives
// ---------------------------------------------------------------------------
//
// Spatial tensors are [C, Z, Y, X] with X fastest; spatial triples here
// (kernel, stride, padding) follow the same [z, y, x] axis order. Every
// reduction uses a fixed-association strip-mined accumulation so results are
// identical for any worker count; parallel loops only ever write disjoint
// output ranges.

namespace nn_detail {

// ---- strip-mined reductions (fixed association) ----

inline float dot_strip(const float* a, const float* b, std::int64_t n) {
    float lane[16] = {};
    std::int64_t i = 0;
    for (; i + 16 <= n; i += 16) {
        for (int j = 0; j < 16; ++j) lane[j] += a[i + j] * b[i + j];
    }
    float tail = 0.0f;
    for (; i < n; ++i) tail += a[i] * b[i];
    const float s0 = (lane[0] + lane[1]) + (lane[2] + lane[3]);
    const float s1 = (lane[4] + lane[5]) + (lane[6] + lane[7]);
    const float s2 = (lane[8] + lane[9]) + (lane[10] + lane[11]);
    const float s3 = (lane[12] + lane[13]) + (lane[14] + lane[15]);
    return ((s0 + s1) + (s2 + s3)) + tail;
}

inline double dsum(const float* a, std::int64_t n) {
    double lane[8] = {};
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (int j = 0; j < 8; ++j) lane[j] += static_cast<double>(a[i + j]);
    }
    double tail = 0.0;
    for (; i < n; ++i) tail += static_cast<double>(a[i]);
    const double s0 = (lane[0] + lane[1]) + (lane[2] + lane[3]);
    const double s1 = (lane[4] + lane[5]) + (lane[6] + lane[7]);
    return (s0 + s1) + tail;
}

inline double ddot(const float* a, const float* b, std::int64_t n) {
    double lane[8] = {};
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (int j = 0; j < 8; ++j)
            lane[j] += static_cast<double>(a[i + j]) * static_cast<double>(b[i + j]);
    }
    double tail = 0.0;
    for (; i < n; ++i) tail += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    const double s0 = (lane[0] + lane[1]) + (lane[2] + lane[3]);
    const double s1 = (lane[4] + lane[5]) + (lane[6] + lane[7]);
    return (s0 + s1) + tail;
}

inline double dsum_sqdiff(const float* a, double mean, std::int64_t n) {
    double lane[8] = {};
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (int j = 0; j < 8; ++j) {
            const double d = static_cast<double>(a[i + j]) - mean;
            lane[j] += d * d;
        }
    }
    double tail = 0.0;
    for (; i < n; ++i) {
        const double d = static_cast<double>(a[i]) - mean;
        tail += d * d;
    }
    const double s0 = (lane[0] + lane[1]) + (lane[2] + lane[3]);
    const double s1 = (lane[4] + lane[5]) + (lane[6] + lane[7]);
    return (s0 + s1) + tail;
}

/// y += alpha * x
inline void axpy(float* y, float alpha, const float* x, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace nn_detail

// ---------------------------------------------------------------------------
// Elementwise helpers
// ---------------------------------------------------------------------------

inline void add_inplace(Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    float* pa = a.data();
    const float* pb = b.data();
    const std::int64_t n = a.size();
    for (std::int64_t i = 0; i < n; ++i) pa[i] += pb[i];
}

inline void scale_inplace(Tensor& a, float s) {
    float* pa = a.data();
    const std::int64_t n = a.size();
    for (std::int64_t i = 0; i < n; ++i) pa[i] *= s;
}

// ---------------------------------------------------------------------------
// 3D convolution (cross-correlation)
// ---------------------------------------------------------------------------

/// Geometry of one convolution; spatial triples in [z, y, x] axis order.
struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    std::array<int, 3> kernel{1, 1, 1};
    std::array<int, 3> stride{1, 1, 1};
    std::array<int, 3> padding{0, 0, 0};

    /// "Same" padding: odd cubic kernel, padding k/2 per axis.
    [[nodiscard]] static ConvSpec same(int in_ch, int out_ch, int k, int s) {
        if (k % 2 == 0) throw ConfigError("conv3d: same padding requires an odd kernel, got " +
                                          std::to_string(k));
        ConvSpec spec;
        spec.in_channels = in_ch;
        spec.out_channels = out_ch;
        spec.kernel = {k, k, k};
        spec.stride = {s, s, s};
        spec.padding = {k / 2, k / 2, k / 2};
        return spec;
    }
};

struct Conv3dGrads {
    Tensor grad_x, grad_w, grad_b;
};

namespace nn_detail {

inline int conv_out_dim(int in, int k, int s, int p, const char* axis) {
    const int span = in + 2 * p - k;
    if (span < 0)
        throw ShapeError(std::string("conv3d: kernel exceeds padded input on axis ") + axis);
    return span / s + 1;
}

/// Inclusive output-coordinate range for which stride*o + tap - pad stays
/// inside [0, in_dim).
struct TapRange {
    int lo, hi;
};

inline TapRange tap_range(int in_dim, int out_dim, int stride, int tap, int pad) {
    int lo = 0;
    while (lo < out_dim && stride * lo + tap - pad < 0) ++lo;
    int hi = out_dim - 1;
    while (hi >= 0 && stride * hi + tap - pad > in_dim - 1) --hi;
    return {lo, hi};
}

/// Copies [C,D,H,W] into a zero-initialized [C,D+2,H+2,W+2] border-padded buffer.
inline Tensor pad1(const Tensor& x) {
    const int C = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor xp({C, D + 2, H + 2, W + 2});
    const std::int64_t PH = H + 2, PW = W + 2;
    parallel_blocks(C, [&](std::int64_t c0, std::int64_t c1) {
        for (std::int64_t c = c0; c < c1; ++c) {
            for (int z = 0; z < D; ++z) {
                for (int y = 0; y < H; ++y) {
                    float* dst = xp.data() + ((c * (D + 2) + (z + 1)) * PH + (y + 1)) * PW + 1;
                    const float* src = x.data() + ((c * D + z) * static_cast<std::int64_t>(H) + y) * W;
                    std::memcpy(dst, src, static_cast<std::size_t>(W) * sizeof(float));
                }
            }
        }
    });
    return xp;
}

/// 3^3 stride-1 core over a pre-padded input: out[co] = bias[co] + sum_ci stencil.
/// `w` is [Co][Ci][27] flat; `bias` may be null for a zero bias.
inline void conv3_s1_core(const float* xp, const float* w, const float* bias, float* out, int Ci,
                          int Co, int D, int H, int W) {
    const std::int64_t PH = H + 2, PW = W + 2;
    const std::int64_t chan = static_cast<std::int64_t>(D + 2) * PH * PW;
    const std::int64_t oslab = static_cast<std::int64_t>(D) * H * W;
    parallel_blocks(Co, [&](std::int64_t co0, std::int64_t co1) {
        for (std::int64_t co = co0; co < co1; ++co) {
            float* ybase = out + co * oslab;
            std::fill(ybase, ybase + oslab, bias ? bias[co] : 0.0f);
            for (int ci = 0; ci < Ci; ++ci) {
                const float* xc = xp + ci * chan;
                const float* k = w + (co * Ci + ci) * 27;
                const float k0 = k[0], k1 = k[1], k2 = k[2], k3 = k[3], k4 = k[4], k5 = k[5],
                            k6 = k[6], k7 = k[7], k8 = k[8], k9 = k[9], k10 = k[10], k11 = k[11],
                            k12 = k[12], k13 = k[13], k14 = k[14], k15 = k[15], k16 = k[16],
                            k17 = k[17], k18 = k[18], k19 = k[19], k20 = k[20], k21 = k[21],
                            k22 = k[22], k23 = k[23], k24 = k[24], k25 = k[25], k26 = k[26];
                for (int z = 0; z < D; ++z) {
                    for (int yy = 0; yy < H; ++yy) {
                        const float* r0 = xc + (z + 0) * PH * PW + (yy + 0) * PW;
                        const float* r1 = xc + (z + 0) * PH * PW + (yy + 1) * PW;
                        const float* r2 = xc + (z + 0) * PH * PW + (yy + 2) * PW;
                        const float* r3 = xc + (z + 1) * PH * PW + (yy + 0) * PW;
                        const float* r4 = xc + (z + 1) * PH * PW + (yy + 1) * PW;
                        const float* r5 = xc + (z + 1) * PH * PW + (yy + 2) * PW;
                        const float* r6 = xc + (z + 2) * PH * PW + (yy + 0) * PW;
                        const float* r7 = xc + (z + 2) * PH * PW + (yy + 1) * PW;
                        const float* r8 = xc + (z + 2) * PH * PW + (yy + 2) * PW;
                        float* orow = ybase + (static_cast<std::int64_t>(z) * H + yy) * W;
                        for (int xo = 0; xo < W; ++xo) {
                            const float s = k0 * r0[xo] + k1 * r0[xo + 1] + k2 * r0[xo + 2] +
                                            k3 * r1[xo] + k4 * r1[xo + 1] + k5 * r1[xo + 2] +
                                            k6 * r2[xo] + k7 * r2[xo + 1] + k8 * r2[xo + 2] +
                                            k9 * r3[xo] + k10 * r3[xo + 1] + k11 * r3[xo + 2] +
                                            k12 * r4[xo] + k13 * r4[xo + 1] + k14 * r4[xo + 2] +
                                            k15 * r5[xo] + k16 * r5[xo + 1] + k17 * r5[xo + 2] +
                                            k18 * r6[xo] + k19 * r6[xo + 1] + k20 * r6[xo + 2] +
                                            k21 * r7[xo] + k22 * r7[xo + 1] + k23 * r7[xo + 2] +
                                            k24 * r8[xo] + k25 * r8[xo + 1] + k26 * r8[xo + 2];
                            orow[xo] += s;
                        }
                    }
                }
            }
        }
    });
}

inline bool is_k3_s1_same(const ConvSpec& s) {
    return s.kernel == std::array<int, 3>{3, 3, 3} && s.stride == std::array<int, 3>{1, 1, 1} &&
           s.padding == std::array<int, 3>{1, 1, 1};
}

inline bool is_k1_s1(const ConvSpec& s) {
    return s.kernel == std::array<int, 3>{1, 1, 1} && s.stride == std::array<int, 3>{1, 1, 1} &&
           s.padding == std::array<int, 3>{0, 0, 0};
}

}  // namespace nn_detail

/// Cross-correlation of x [C_in,D,H,W] with w [C_out,C_in,kz,ky,kx] plus bias.
[[nodiscard]] inline Tensor conv3d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                                           const ConvSpec& spec) {
    using namespace nn_detail;
    if (x.rank() != 4 || x.dim(0) != spec.in_channels)
        throw ShapeError("conv3d: expected input [" + std::to_string(spec.in_channels) +
                         ", D, H, W], got " + shape_string(x.shape()));
    require_shape("conv3d weight", w,
                  {spec.out_channels, spec.in_channels, spec.kernel[0], spec.kernel[1], spec.kernel[2]});
    require_shape("conv3d bias", b, {spec.out_channels});

    const int Ci = spec.in_channels, Co = spec.out_channels;
    const int D = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Do = conv_out_dim(D, spec.kernel[0], spec.stride[0], spec.padding[0], "z");
    const int Ho = conv_out_dim(H, spec.kernel[1], spec.stride[1], spec.padding[1], "y");
    const int Wo = conv_out_dim(W, spec.kernel[2], spec.stride[2], spec.padding[2], "x");
    Tensor y({Co, Do, Ho, Wo});

    if (is_k3_s1_same(spec)) {
        const Tensor xp = pad1(x);
        conv3_s1_core(xp.data(), w.data(), b.data(), y.data(), Ci, Co, D, H, W);
    } else if (is_k1_s1(spec)) {
        const std::int64_t n = static_cast<std::int64_t>(D) * H * W;
        parallel_blocks(Co, [&](std::int64_t co0, std::int64_t co1) {
            for (std::int64_t co = co0; co < co1; ++co) {
                float* yc = y.data() + co * n;
                std::fill(yc, yc + n, b[co]);
                for (int ci = 0; ci < Ci; ++ci) axpy(yc, w[co * Ci + ci], x.data() + ci * n, n);
            }
        });
    } else {
        const int kz = spec.kernel[0], ky = spec.kernel[1], kx = spec.kernel[2];
        const int sz = spec.stride[0], sy = spec.stride[1], sx = spec.stride[2];
        const int pz = spec.padding[0], py = spec.padding[1], px = spec.padding[2];
        const std::int64_t oslab = static_cast<std::int64_t>(Do) * Ho * Wo;
        parallel_blocks(Co, [&](std::int64_t co0, std::int64_t co1) {
            for (std::int64_t co = co0; co < co1; ++co) {
                float* ybase = y.data() + co * oslab;
                std::fill(ybase, ybase + oslab, b[co]);
                for (int ci = 0; ci < Ci; ++ci) {
                    const float* xc = x.data() + ci * static_cast<std::int64_t>(D) * H * W;
                    for (int dz = 0; dz < kz; ++dz) {
                        const TapRange rz = tap_range(D, Do, sz, dz, pz);
                        for (int dy = 0; dy < ky; ++dy) {
                            const TapRange ry = tap_range(H, Ho, sy, dy, py);
                            for (int dx = 0; dx < kx; ++dx) {
                                const TapRange rx = tap_range(W, Wo, sx, dx, px);
                                const float wv =
                                    w[(((co * Ci + ci) * kz + dz) * ky + dy) * kx + dx];
                                for (int zo = rz.lo; zo <= rz.hi; ++zo) {
                                    const int iz = sz * zo + dz - pz;
                                    for (int yo = ry.lo; yo <= ry.hi; ++yo) {
                                        const int iy = sy * yo + dy - py;
                                        float* orow = ybase + (static_cast<std::int64_t>(zo) * Ho + yo) * Wo;
                                        const float* xrow =
                                            xc + (static_cast<std::int64_t>(iz) * H + iy) * W;
                                        for (int xo = rx.lo; xo <= rx.hi; ++xo)
                                            orow[xo] += wv * xrow[sx * xo + dx - px];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    detail::check_finite("conv3d_forward", y);
    return y;
}

/// Exact gradients of conv3d_forward w.r.t. input, weight, and bias.
[[nodiscard]] inline Conv3dGrads conv3d_backward(const Tensor& grad_y, const Tensor& x,
                                                 const Tensor& w, const ConvSpec& spec) {
    using namespace nn_detail;
    const int Ci = spec.in_channels, Co = spec.out_channels;
    const int D = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Do = conv_out_dim(D, spec.kernel[0], spec.stride[0], spec.padding[0], "z");
    const int Ho = conv_out_dim(H, spec.kernel[1], spec.stride[1], spec.padding[1], "y");
    const int Wo = conv_out_dim(W, spec.kernel[2], spec.stride[2], spec.padding[2], "x");
    require_shape("conv3d grad_out", grad_y, {Co, Do, Ho, Wo});

    Conv3dGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({Co})};
    const std::int64_t oslab = static_cast<std::int64_t>(Do) * Ho * Wo;
    const std::int64_t islab = static_cast<std::int64_t>(D) * H * W;

    // grad_b[co] = sum of grad_y[co]
    for (int co = 0; co < Co; ++co)
        g.grad_b[co] = static_cast<float>(dsum(grad_y.data() + co * oslab, oslab));

    if (is_k3_s1_same(spec)) {
        // grad_x: correlate padded grad_y with the channel-transposed,
        // tap-flipped kernel — the exact adjoint of the forward stencil.
        Tensor wt({Ci, Co, 3, 3, 3});
        for (int co = 0; co < Co; ++co)
            for (int ci = 0; ci < Ci; ++ci)
                for (int t = 0; t < 27; ++t)
                    wt[(static_cast<std::int64_t>(ci) * Co + co) * 27 + t] =
                        w[(static_cast<std::int64_t>(co) * Ci + ci) * 27 + (26 - t)];
        {
            const Tensor gyp = pad1(grad_y);
            conv3_s1_core(gyp.data(), wt.data(), nullptr, g.grad_x.data(), Co, Ci, D, H, W);
        }
        wt.release();

        // grad_w[co][ci][t] = sum over rows of dot(grad_y row, padded-x row at
        // tap offset). Each tap accumulates into 16 fixed float lanes that
        // flush to a double per z-slab: the association is fixed (so the
        // result is reproducible) and the inner loop is a single FMA strip —
        // the same shape the forward stencil vectorizes to, with none of the
        // per-strip reduction epilogue a 27-dot formulation pays.
        const Tensor xp = pad1(x);
        const std::int64_t PH = H + 2, PW = W + 2;
        const std::int64_t pchan = static_cast<std::int64_t>(D + 2) * PH * PW;
        parallel_blocks(static_cast<std::int64_t>(Co) * Ci, [&](std::int64_t i0, std::int64_t i1) {
            for (std::int64_t idx = i0; idx < i1; ++idx) {
                const std::int64_t co = idx / Ci, ci = idx % Ci;
                const float* xc = xp.data() + ci * pchan;
                double acc[27] = {};
                float lanes[27][16];
                for (int z = 0; z < D; ++z) {
                    std::memset(lanes, 0, sizeof(lanes));
                    for (int yy = 0; yy < H; ++yy) {
                        const float* grow = grad_y.data() +
                                            (co * D + z) * static_cast<std::int64_t>(H) * W +
                                            static_cast<std::int64_t>(yy) * W;
                        for (int dz = 0; dz < 3; ++dz) {
                            for (int dy = 0; dy < 3; ++dy) {
                                const float* xrow = xc + (z + dz) * PH * PW + (yy + dy) * PW;
                                for (int dx = 0; dx < 3; ++dx) {
                                    float* ln = lanes[(dz * 3 + dy) * 3 + dx];
                                    const float* xr = xrow + dx;
                                    int xo = 0;
                                    for (; xo + 16 <= W; xo += 16)
                                        for (int j = 0; j < 16; ++j) ln[j] += grow[xo + j] * xr[xo + j];
                                    for (; xo < W; ++xo) ln[xo & 15] += grow[xo] * xr[xo];
                                }
                            }
                        }
                    }
                    for (int t = 0; t < 27; ++t)
                        for (int j = 0; j < 16; ++j) acc[t] += static_cast<double>(lanes[t][j]);
                }
                float* wrow = g.grad_w.data() + idx * 27;
                for (int t = 0; t < 27; ++t) wrow[t] = static_cast<float>(acc[t]);
            }
        });
    } else if (is_k1_s1(spec)) {
        parallel_blocks(Ci, [&](std::int64_t c0, std::int64_t c1) {
            for (std::int64_t ci = c0; ci < c1; ++ci) {
                float* gx = g.grad_x.data() + ci * islab;
                for (int co = 0; co < Co; ++co)
                    axpy(gx, w[static_cast<std::int64_t>(co) * Ci + ci], grad_y.data() + co * islab, islab);
            }
        });
        parallel_blocks(static_cast<std::int64_t>(Co) * Ci, [&](std::int64_t i0, std::int64_t i1) {
            for (std::int64_t idx = i0; idx < i1; ++idx) {
                const std::int64_t co = idx / Ci, ci = idx % Ci;
                g.grad_w[idx] = static_cast<float>(
                    ddot(grad_y.data() + co * oslab, x.data() + ci * islab, islab));
            }
        });
    } else {
        const int kz = spec.kernel[0], ky = spec.kernel[1], kx = spec.kernel[2];
        const int sz = spec.stride[0], sy = spec.stride[1], sx = spec.stride[2];
        const int pz = spec.padding[0], py = spec.padding[1], px = spec.padding[2];

        // grad_x: per input channel, sweep every (co, tap) over its valid range.
        parallel_blocks(Ci, [&](std::int64_t c0, std::int64_t c1) {
            for (std::int64_t ci = c0; ci < c1; ++ci) {
                float* gx = g.grad_x.data() + ci * islab;
                for (int co = 0; co < Co; ++co) {
                    const float* gy = grad_y.data() + co * oslab;
                    for (int dz = 0; dz < kz; ++dz) {
                        const TapRange rz = tap_range(D, Do, sz, dz, pz);
                        for (int dy = 0; dy < ky; ++dy) {
                            const TapRange ry = tap_range(H, Ho, sy, dy, py);
                            for (int dx = 0; dx < kx; ++dx) {
                                const TapRange rx = tap_range(W, Wo, sx, dx, px);
                                const float wv = w[(((co * Ci + ci) * kz + dz) * ky + dy) * kx + dx];
                                for (int zo = rz.lo; zo <= rz.hi; ++zo) {
                                    const int iz = sz * zo + dz - pz;
                                    for (int yo = ry.lo; yo <= ry.hi; ++yo) {
                                        const int iy = sy * yo + dy - py;
                                        const float* grow = gy + (static_cast<std::int64_t>(zo) * Ho + yo) * Wo;
                                        float* xrow = gx + (static_cast<std::int64_t>(iz) * H + iy) * W;
                                        for (int xo = rx.lo; xo <= rx.hi; ++xo)
                                            xrow[sx * xo + dx - px] += wv * grow[xo];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });

        // grad_w: per (co, ci, tap), a double-accumulated strided dot.
        parallel_blocks(static_cast<std::int64_t>(Co) * Ci, [&](std::int64_t i0, std::int64_t i1) {
            for (std::int64_t idx = i0; idx < i1; ++idx) {
                const std::int64_t co = idx / Ci, ci = idx % Ci;
                const float* gy = grad_y.data() + co * oslab;
                const float* xc = x.data() + ci * islab;
                for (int dz = 0; dz < kz; ++dz) {
                    const TapRange rz = tap_range(D, Do, sz, dz, pz);
                    for (int dy = 0; dy < ky; ++dy) {
                        const TapRange ry = tap_range(H, Ho, sy, dy, py);
                        for (int dx = 0; dx < kx; ++dx) {
                            const TapRange rx = tap_range(W, Wo, sx, dx, px);
                            // Eight independent double lanes, summed in fixed
                            // order: reproducible, and free of the serial
                            // add-latency chain a single accumulator pays.
                            double lane[8] = {};
                            const int n = rx.hi - rx.lo + 1;
                            for (int zo = rz.lo; zo <= rz.hi; ++zo) {
                                const int iz = sz * zo + dz - pz;
                                for (int yo = ry.lo; yo <= ry.hi; ++yo) {
                                    const int iy = sy * yo + dy - py;
                                    const float* grow = gy + (static_cast<std::int64_t>(zo) * Ho + yo) * Wo + rx.lo;
                                    const float* xr = xc + (static_cast<std::int64_t>(iz) * H + iy) * W +
                                                      static_cast<std::int64_t>(sx) * rx.lo + dx - px;
                                    int k = 0;
                                    for (; k + 8 <= n; k += 8)
                                        for (int j = 0; j < 8; ++j)
                                            lane[j] += static_cast<double>(grow[k + j]) *
                                                       static_cast<double>(xr[static_cast<std::int64_t>(sx) * (k + j)]);
                                    for (; k < n; ++k)
                                        lane[k & 7] += static_cast<double>(grow[k]) *
                                                       static_cast<double>(xr[static_cast<std::int64_t>(sx) * k]);
                                }
                            }
                            double acc = 0.0;
                            for (int j = 0; j < 8; ++j) acc += lane[j];
                            g.grad_w[(((co * Ci + ci) * kz + dz) * ky + dy) * kx + dx] =
                                static_cast<float>(acc);
                        }
                    }
                }
            }
        });
    }
    detail::check_finite("conv3d_backward/x", g.grad_x);
    detail::check_finite("conv3d_backward/w", g.grad_w);
    return g;
}

// ---------------------------------------------------------------------------
// Group normalization
// ---------------------------------------------------------------------------

/// Per-group statistics saved by the forward pass for the backward pass.
struct GroupNormCtx {
    std::vector<double> mean, rstd;
};

/// Normalizes x [C, ...spatial] per group of channels: (x − mean)/sqrt(var + eps)
/// scaled by gamma and shifted by beta (both per channel).
[[nodiscard]] inline Tensor group_norm_forward(const Tensor& x, int groups, const Tensor& gamma,
                                               const Tensor& beta, float eps,
                                               GroupNormCtx* ctx = nullptr) {
    using namespace nn_detail;
    if (x.rank() < 2) throw ShapeError("group_norm: expected [C, ...spatial], got " + shape_string(x.shape()));
    const int C = x.dim(0);
    if (groups < 1 || C % groups != 0)
        throw ConfigError("group_norm: channels " + std::to_string(C) + " not divisible by groups " +
                          std::to_string(groups));
    require_shape("group_norm gamma", gamma, {C});
    require_shape("group_norm beta", beta, {C});

    const std::int64_t S = x.size() / C;
    const int cpg = C / groups;
    const std::int64_t n = static_cast<std::int64_t>(cpg) * S;
    Tensor y(x.shape());
    if (ctx) {
        ctx->mean.assign(static_cast<std::size_t>(groups), 0.0);
        ctx->rstd.assign(static_cast<std::size_t>(groups), 0.0);
    }
    std::vector<double> means(static_cast<std::size_t>(groups)), rstds(static_cast<std::size_t>(groups));
    parallel_blocks(groups, [&](std::int64_t g0, std::int64_t g1) {
        for (std::int64_t g = g0; g < g1; ++g) {
            const float* xg = x.data() + g * n;
            const double mean = dsum(xg, n) / static_cast<double>(n);
            const double var = dsum_sqdiff(xg, mean, n) / static_cast<double>(n);
            const double rstd = 1.0 / std::sqrt(var + static_cast<double>(eps));
            means[static_cast<std::size_t>(g)] = mean;
            rstds[static_cast<std::size_t>(g)] = rstd;
            for (int c = static_cast<int>(g) * cpg; c < (static_cast<int>(g) + 1) * cpg; ++c) {
                const double scale = static_cast<double>(gamma[c]) * rstd;
                const double shift = static_cast<double>(beta[c]) - mean * scale;
                const float fs = static_cast<float>(scale), fh = static_cast<float>(shift);
                const float* xr = x.data() + c * S;
                float* yr = y.data() + c * S;
                for (std::int64_t i = 0; i < S; ++i) yr[i] = xr[i] * fs + fh;
            }
        }
    });
    if (ctx) {
        ctx->mean = std::move(means);
        ctx->rstd = std::move(rstds);
    }
    detail::check_finite("group_norm_forward", y);
    return y;
}

struct GroupNormGrads {
    Tensor grad_x, grad_gamma, grad_beta;
};

[[nodiscard]] inline GroupNormGrads group_norm_backward(const Tensor& grad_y, const Tensor& x,
                                                        int groups, const Tensor& gamma,
                                                        const GroupNormCtx& ctx) {
    using namespace nn_detail;
    require_same_shape("group_norm backward", x, grad_y);
    const int C = x.dim(0);
    const std::int64_t S = x.size() / C;
    const int cpg = C / groups;
    const std::int64_t n = static_cast<std::int64_t>(cpg) * S;
    if (static_cast<int>(ctx.mean.size()) != groups)
        throw StateError("group_norm: backward called without saved forward statistics");

    GroupNormGrads g{Tensor(x.shape()), Tensor({C}), Tensor({C})};
    parallel_blocks(groups, [&](std::int64_t g0, std::int64_t g1) {
        for (std::int64_t grp = g0; grp < g1; ++grp) {
            const double mean = ctx.mean[static_cast<std::size_t>(grp)];
            const double rstd = ctx.rstd[static_cast<std::size_t>(grp)];
            double sum1 = 0.0, sum2 = 0.0;  // sums of gy·gamma and gy·gamma·xhat over the group
            for (int c = static_cast<int>(grp) * cpg; c < (static_cast<int>(grp) + 1) * cpg; ++c) {
                const float* gyr = grad_y.data() + c * S;
                const float* xr = x.data() + c * S;
                const double sum_gy = dsum(gyr, S);
                const double dot_gyx = ddot(gyr, xr, S);
                const double ggamma = rstd * (dot_gyx - mean * sum_gy);
                g.grad_gamma[c] = static_cast<float>(ggamma);
                g.grad_beta[c] = static_cast<float>(sum_gy);
                sum1 += static_cast<double>(gamma[c]) * sum_gy;
                sum2 += static_cast<double>(gamma[c]) * ggamma;
            }
            const double inv_n = 1.0 / static_cast<double>(n);
            // grad_x = rstd·(gamma·gy − sum1/n − xhat·sum2/n), rewritten per
            // channel as c1·gy + c2·x + c3 with group constants c2, c3.
            const double c2 = -rstd * rstd * sum2 * inv_n;
            for (int c = static_cast<int>(grp) * cpg; c < (static_cast<int>(grp) + 1) * cpg; ++c) {
                const double c1 = rstd * static_cast<double>(gamma[c]);
                const double c3 = -rstd * sum1 * inv_n - mean * c2;
                const float f1 = static_cast<float>(c1), f2 = static_cast<float>(c2),
                            f3 = static_cast<float>(c3);
                const float* gyr = grad_y.data() + c * S;
                const float* xr = x.data() + c * S;
                float* gxr = g.grad_x.data() + c * S;
                for (std::int64_t i = 0; i < S; ++i) gxr[i] = f1 * gyr[i] + f2 * xr[i] + f3;
            }
        }
    });
    detail::check_finite("group_norm_backward", g.grad_x);
    return g;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

[[nodiscard]] inline Tensor leaky_relu_forward(const Tensor& x, float slope) {
    Tensor y(x.shape());
    const float* px = x.data();
    float* py = y.data();
    const std::int64_t n = x.size();
    for (std::int64_t i = 0; i < n; ++i) py[i] = px[i] >= 0.0f ? px[i] : slope * px[i];
    return y;
}

[[nodiscard]] inline Tensor leaky_relu_backward(const Tensor& grad_y, const Tensor& x, float slope) {
    require_same_shape("leaky_relu backward", x, grad_y);
    Tensor gx(x.shape());
    const float* pg = grad_y.data();
    const float* px = x.data();
    float* pd = gx.data();
    const std::int64_t n = x.size();
    for (std::int64_t i = 0; i < n; ++i) pd[i] = px[i] >= 0.0f ? pg[i] : slope * pg[i];
    return gx;
}

[[nodiscard]] inline Tensor sigmoid_forward(const Tensor& x) {
    Tensor y(x.shape());
    const float* px = x.data();
    float* py = y.data();
    const std::int64_t n = x.size();
    for (std::int64_t i = 0; i < n; ++i) {
        const float v = px[i];
        if (v >= 0.0f) {
            py[i] = 1.0f / (1.0f + std::exp(-v));
        } else {
            const float e = std::exp(v);
            py[i] = e / (1.0f + e);
        }
    }
    return y;
}

/// Backward through sigmoid given the saved output y.
[[nodiscard]] inline Tensor sigmoid_backward(const Tensor& grad_y, const Tensor& y) {
    require_same_shape("sigmoid backward", y, grad_y);
    Tensor gx(y.shape());
    const float* pg = grad_y.data();
    const float* py = y.data();
    float* pd = gx.data();
    const std::int64_t n = y.size();
    for (std::int64_t i = 0; i < n; ++i) pd[i] = pg[i] * py[i] * (1.0f - py[i]);
    return gx;
}

// ---------------------------------------------------------------------------
// Trilinear 2x upsampling
// ---------------------------------------------------------------------------
//
// Output voxel o samples input coordinate (o + 0.5)/2 − 0.5 per axis with
// edge clamping; realized as three separable axis passes. Per axis that is
// out[2j] = 0.25·in[j−1] + 0.75·in[j] and out[2j+1] = 0.75·in[j] + 0.25·in[j+1]
// with exact copies at the two boundary outputs.

namespace nn_detail {

struct AxisMap {
    std::vector<int> i0, i1;
    std::vector<float> w0, w1;
};

inline AxisMap upsample2x_map(int n) {
    AxisMap m;
    const int out = 2 * n;
    m.i0.resize(static_cast<std::size_t>(out));
    m.i1.resize(static_cast<std::size_t>(out));
    m.w0.resize(static_cast<std::size_t>(out));
    m.w1.resize(static_cast<std::size_t>(out));
    for (int o = 0; o < out; ++o) {
        int i0, i1;
        float w0, w1;
        if (o == 0) {
            i0 = i1 = 0, w0 = 1.0f, w1 = 0.0f;
        } else if (o == out - 1) {
            i0 = i1 = n - 1, w0 = 1.0f, w1 = 0.0f;
        } else if (o % 2 == 0) {
            i0 = o / 2 - 1, i1 = o / 2, w0 = 0.25f, w1 = 0.75f;
        } else {
            i0 = o / 2, i1 = o / 2 + 1, w0 = 0.75f, w1 = 0.25f;
        }
        m.i0[static_cast<std::size_t>(o)] = i0;
        m.i1[static_cast<std::size_t>(o)] = i1;
        m.w0[static_cast<std::size_t>(o)] = w0;
        m.w1[static_cast<std::size_t>(o)] = w1;
    }
    return m;
}

/// One axis pass: [outer][n][inner] → [outer][2n][inner].
inline void upsample_axis(const float* in, float* out, std::int64_t outer, int n, std::int64_t inner,
                          const AxisMap& m) {
    const int on = 2 * n;
    if (inner == 1) {
        parallel_blocks(outer, [&](std::int64_t u0, std::int64_t u1) {
            for (std::int64_t u = u0; u < u1; ++u) {
                const float* s = in + u * n;
                float* d = out + u * on;
                for (int o = 0; o < on; ++o) d[o] = m.w0[static_cast<std::size_t>(o)] * s[m.i0[static_cast<std::size_t>(o)]] +
                                                    m.w1[static_cast<std::size_t>(o)] * s[m.i1[static_cast<std::size_t>(o)]];
            }
        });
    } else {
        parallel_blocks(outer * on, [&](std::int64_t r0, std::int64_t r1) {
            for (std::int64_t r = r0; r < r1; ++r) {
                const std::int64_t u = r / on;
                const int o = static_cast<int>(r % on);
                const float* a = in + (u * n + m.i0[static_cast<std::size_t>(o)]) * inner;
                const float* b = in + (u * n + m.i1[static_cast<std::size_t>(o)]) * inner;
                float* d = out + r * inner;
                const float w0 = m.w0[static_cast<std::size_t>(o)], w1 = m.w1[static_cast<std::size_t>(o)];
                for (std::int64_t i = 0; i < inner; ++i) d[i] = w0 * a[i] + w1 * b[i];
            }
        });
    }
}

/// Adjoint of upsample_axis: scatters [outer][2n][inner] into a zeroed
/// [outer][n][inner]; serial per outer block so writes stay deterministic.
inline void upsample_axis_backward(const float* gout, float* gin, std::int64_t outer, int n,
                                   std::int64_t inner, const AxisMap& m) {
    const int on = 2 * n;
    parallel_blocks(outer, [&](std::int64_t u0, std::int64_t u1) {
        for (std::int64_t u = u0; u < u1; ++u) {
            for (int o = 0; o < on; ++o) {
                const float* g = gout + (u * on + o) * inner;
                const float w0 = m.w0[static_cast<std::size_t>(o)], w1 = m.w1[static_cast<std::size_t>(o)];
                axpy(gin + (u * n + m.i0[static_cast<std::size_t>(o)]) * inner, w0, g, inner);
                if (w1 != 0.0f) axpy(gin + (u * n + m.i1[static_cast<std::size_t>(o)]) * inner, w1, g, inner);
            }
        }
    });
}

}  // namespace nn_detail

[[nodiscard]] inline Tensor trilinear_upsample2x(const Tensor& x) {
    using namespace nn_detail;
    if (x.rank() != 4) throw ShapeError("trilinear_upsample2x: expected [C, D, H, W], got " + shape_string(x.shape()));
    const int C = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
    const AxisMap mz = upsample2x_map(D), my = upsample2x_map(H), mx = upsample2x_map(W);
    Tensor t1({C, 2 * D, H, W});
    upsample_axis(x.data(), t1.data(), C, D, static_cast<std::int64_t>(H) * W, mz);
    Tensor t2({C, 2 * D, 2 * H, W});
    upsample_axis(t1.data(), t2.data(), static_cast<std::int64_t>(C) * 2 * D, H, W, my);
    t1.release();
    Tensor y({C, 2 * D, 2 * H, 2 * W});
    upsample_axis(t2.data(), y.data(), static_cast<std::int64_t>(C) * 2 * D * 2 * H, W, 1, mx);
    return y;
}

[[nodiscard]] inline Tensor trilinear_upsample2x_backward(const Tensor& grad_y,
                                                          const std::vector<int>& in_shape) {
    using namespace nn_detail;
    const int C = in_shape[0], D = in_shape[1], H = in_shape[2], W = in_shape[3];
    require_shape("trilinear backward grad", grad_y, {C, 2 * D, 2 * H, 2 * W});
    const AxisMap mz = upsample2x_map(D), my = upsample2x_map(H), mx = upsample2x_map(W);
    Tensor g2({C, 2 * D, 2 * H, W});
    upsample_axis_backward(grad_y.data(), g2.data(), static_cast<std::int64_t>(C) * 2 * D * 2 * H, W, 1, mx);
    Tensor g1({C, 2 * D, H, W});
    upsample_axis_backward(g2.data(), g1.data(), static_cast<std::int64_t>(C) * 2 * D, H, W, my);
    g2.release();
    Tensor gx({C, D, H, W});
    upsample_axis_backward(g1.data(), gx.data(), C, D, static_cast<std::int64_t>(H) * W, mz);
    return gx;
}

// ---------------------------------------------------------------------------
// Dense layer
// ---------------------------------------------------------------------------

[[nodiscard]] inline Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
    using namespace nn_detail;
    if (x.rank() != 1) throw ShapeError("dense: expected rank-1 input, got " + shape_string(x.shape()));
    const int n = x.dim(0);
    if (w.rank() != 2 || w.dim(1) != n)
        throw ShapeError("dense: weight " + shape_string(w.shape()) + " does not match input length " +
                         std::to_string(n));
    const int m = w.dim(0);
    require_shape("dense bias", b, {m});
    Tensor y({m});
    for (int o = 0; o < m; ++o)
        y[o] = b[o] + dot_strip(w.data() + static_cast<std::int64_t>(o) * n, x.data(), n);
    detail::check_finite("dense_forward", y);
    return y;
}

struct DenseGrads {
    Tensor grad_x, grad_w, grad_b;
};

[[nodiscard]] inline DenseGrads dense_backward(const Tensor& grad_y, const Tensor& x, const Tensor& w) {
    using namespace nn_detail;
    const int m = w.dim(0), n = w.dim(1);
    require_shape("dense grad_out", grad_y, {m});
    DenseGrads g{Tensor({n}), Tensor({m, n}), Tensor({m})};
    for (int o = 0; o < m; ++o) {
        const float gv = grad_y[o];
        g.grad_b[o] = gv;
        axpy(g.grad_x.data(), gv, w.data() + static_cast<std::int64_t>(o) * n, n);
        float* wrow = g.grad_w.data() + static_cast<std::int64_t>(o) * n;
        const float* px = x.data();
        for (int i = 0; i < n; ++i) wrow[i] = gv * px[i];
    }
    return g;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
    Tensor m, v;
    int t = 0;
};

/// One bias-corrected Adam update; m/v are allocated lazily on first use.
inline void adam_step(Tensor& param, const Tensor& grad, AdamState& st, float lr, float beta1,
                      float beta2, float eps) {
    require_same_shape("adam_step", param, grad);
    if (st.m.empty()) {
        st.m = Tensor::zeros_like(param);
        st.v = Tensor::zeros_like(param);
    }
    require_same_shape("adam_step state", param, st.m);
    st.t += 1;
    const float c1 = static_cast<float>(1.0 - std::pow(static_cast<double>(beta1), st.t));
    const float c2 = static_cast<float>(1.0 - std::pow(static_cast<double>(beta2), st.t));
    float* p = param.data();
    const float* gd = grad.data();
    float* pm = st.m.data();
    float* pv = st.v.data();
    const std::int64_t n = param.size();
    for (std::int64_t i = 0; i < n; ++i) {
        const float g = gd[i];
        pm[i] = beta1 * pm[i] + (1.0f - beta1) * g;
        pv[i] = beta2 * pv[i] + (1.0f - beta2) * g * g;
        const float mhat = pm[i] / c1;
        const float vhat = pv[i] / c2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    detail::check_finite("adam_step", param);
}

}  // namespace segvae
