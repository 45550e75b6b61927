#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace segvae {

namespace detail {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Rng -- small deterministic generator with splittable streams
// ---------------------------------------------------------------------------
//
// Streams are derived by hashing (seed, key parts...), so any worker can
// reconstruct the stream for a given (case, draw) pair without shared state.

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(detail::splitmix64(seed ^ 0x5851f42d4c957f2dull)) {}

    /// Derives an independent stream keyed by integers and/or strings.
    template <typename... Parts>
    [[nodiscard]] static Rng stream(std::uint64_t seed, const Parts&... parts) {
        std::uint64_t h = detail::splitmix64(seed);
        ((h = mix(h, parts)), ...);
        Rng r(0);
        r.state_ = h != 0 ? h : 0x9e3779b97f4a7c15ull;
        return r;
    }

    std::uint64_t next_u64() noexcept {
        state_ += 0x9e3779b97f4a7c15ull;
        return detail::splitmix64(state_);
    }

    /// Uniform double in [0, 1).
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_index(std::uint64_t n) noexcept { return next_u64() % n; }

    /// Standard normal draw via Box-Muller. Two uniforms per call, no caching,
    /// so the draw count per sample is fixed and streams stay reproducible.
    double normal() noexcept {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    bool bernoulli(double p) noexcept { return uniform() < p; }

private:
    static std::uint64_t mix(std::uint64_t h, std::uint64_t v) noexcept {
        return detail::splitmix64(h ^ detail::splitmix64(v + 0x9e3779b97f4a7c15ull));
    }
    static std::uint64_t mix(std::uint64_t h, int v) noexcept {
        return mix(h, static_cast<std::uint64_t>(v));
    }
    static std::uint64_t mix(std::uint64_t h, std::string_view s) noexcept {
        return mix(h, detail::fnv1a64(s));
    }
    static std::uint64_t mix(std::uint64_t h, const std::string& s) noexcept {
        return mix(h, std::string_view(s));
    }
    static std::uint64_t mix(std::uint64_t h, const char* s) noexcept {
        return mix(h, std::string_view(s));
    }

    std::uint64_t state_;
};

}  // namespace segvae
