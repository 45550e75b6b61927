#pragma once

#include <atomic>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "segvae/errors.hpp"

namespace segvae {

// ---------------------------------------------------------------------------
// Live-byte accounting for tensors and volumes
// ---------------------------------------------------------------------------
//
// Every Tensor/Volume payload is allocated through TrackingAllocator, so the
// tracker always knows the live tensor bytes of the process. Inference
// installs a budget; an allocation pushing live bytes past it throws
// BudgetError naming the active allocation scope.

class MemTracker {
public:
    static MemTracker& instance() {
        static MemTracker t;
        return t;
    }

    /// Optional per-scope byte tally, used by tests to prove which code paths
    /// allocate (e.g. that infer-mode forward never touches the VAE branch).
    struct ScopeRecorder {
        std::mutex mu;
        std::map<std::string, std::int64_t> bytes;
    };

    void set_recorder(ScopeRecorder* r) noexcept { recorder_.store(r); }

    void on_alloc(std::int64_t bytes) {
        const std::int64_t now = live_.fetch_add(bytes) + bytes;
        std::int64_t p = peak_.load(std::memory_order_relaxed);
        while (now > p && !peak_.compare_exchange_weak(p, now)) {
        }
        if (ScopeRecorder* r = recorder_.load(std::memory_order_relaxed)) {
            const std::lock_guard<std::mutex> lock(r->mu);
            r->bytes[scope_label()] += bytes;
        }
        if (now > budget_.load(std::memory_order_relaxed)) {
            live_.fetch_sub(bytes);
            throw BudgetError("live bytes " + std::to_string(now) + " exceed budget " +
                              std::to_string(budget_.load()) + " at " + scope_label());
        }
    }

    void on_free(std::int64_t bytes) noexcept { live_.fetch_sub(bytes); }

    [[nodiscard]] std::int64_t live_bytes() const noexcept { return live_.load(); }
    [[nodiscard]] std::int64_t peak_bytes() const noexcept { return peak_.load(); }

    /// Resets the peak to the current live count.
    void reset_peak() noexcept { peak_.store(live_.load()); }

    void set_budget(std::int64_t bytes) noexcept { budget_.store(bytes); }
    [[nodiscard]] std::int64_t budget() const noexcept { return budget_.load(); }
    static constexpr std::int64_t unlimited = std::numeric_limits<std::int64_t>::max();

    static const char*& scope_ref() {
        thread_local const char* scope = "tensor";
        return scope;
    }
    static std::string scope_label() { return scope_ref(); }

private:
    std::atomic<std::int64_t> live_{0};
    std::atomic<std::int64_t> peak_{0};
    std::atomic<std::int64_t> budget_{unlimited};
    std::atomic<ScopeRecorder*> recorder_{nullptr};
};

/// Labels allocations made on this thread while alive, for budget messages.
class MemScope {
public:
    explicit MemScope(const char* site) : prev_(MemTracker::scope_ref()) {
        MemTracker::scope_ref() = site;
    }
    ~MemScope() { MemTracker::scope_ref() = prev_; }
    MemScope(const MemScope&) = delete;
    MemScope& operator=(const MemScope&) = delete;

private:
    const char* prev_;
};

/// Installs a live-byte budget for its lifetime and restores the prior one.
class BudgetGuard {
public:
    explicit BudgetGuard(std::int64_t bytes) : prev_(MemTracker::instance().budget()) {
        MemTracker::instance().set_budget(bytes);
    }
    ~BudgetGuard() { MemTracker::instance().set_budget(prev_); }
    BudgetGuard(const BudgetGuard&) = delete;
    BudgetGuard& operator=(const BudgetGuard&) = delete;

private:
    std::int64_t prev_;
};

template <typename T>
class TrackingAllocator {
public:
    using value_type = T;
    TrackingAllocator() noexcept = default;
    template <typename U>
    TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) {
        MemTracker::instance().on_alloc(static_cast<std::int64_t>(n * sizeof(T)));
        return static_cast<T*>(::operator new(n * sizeof(T)));
    }
    void deallocate(T* p, std::size_t n) noexcept {
        MemTracker::instance().on_free(static_cast<std::int64_t>(n * sizeof(T)));
        ::operator delete(p);
    }
    template <typename U>
    bool operator==(const TrackingAllocator<U>&) const noexcept {
        return true;
    }
};

using tracked_floats = std::vector<float, TrackingAllocator<float>>;
using tracked_bytes = std::vector<std::uint8_t, TrackingAllocator<std::uint8_t>>;

}  // namespace segvae
