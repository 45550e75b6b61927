#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <thread>
#include <vector>

namespace segvae {

/// Process-wide worker count. 1 is reference mode; results are bitwise
/// identical for every fixed worker count because all parallel loops write
/// disjoint outputs with a fixed per-element accumulation order.
inline int& worker_count() {
    static int n = [] {
        if (const char* env = std::getenv("SEGVAE_WORKERS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        unsigned hw = std::thread::hardware_concurrency();
        return static_cast<int>(std::clamp(hw, 1u, 4u));
    }();
    return n;
}

inline void set_worker_count(int n) { worker_count() = std::max(1, n); }

/// Runs fn(begin, end) over contiguous blocks of [0, n).
template <typename Fn>
void parallel_blocks(std::int64_t n, Fn&& fn) {
    const int workers = std::min<std::int64_t>(worker_count(), n > 0 ? n : 1);
    if (workers <= 1 || n <= 1) {
        if (n > 0) fn(std::int64_t(0), n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::int64_t chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const std::int64_t b = w * chunk;
        const std::int64_t e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    for (auto& t : pool) t.join();
}

/// Runs fn(i) for each i in [0, n), split across workers.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
    parallel_blocks(n, [&fn](std::int64_t b, std::int64_t e) {
        for (std::int64_t i = b; i < e; ++i) fn(i);
    });
}

}  // namespace segvae
