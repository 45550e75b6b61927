#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "segvae/errors.hpp"
#include "segvae/memory.hpp"

namespace segvae {

[[nodiscard]] inline std::string shape_string(const std::vector<int>& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(shape[i]);
    }
    out += "]";
    return out;
}

/// Dense N-d float32 array with an optional same-shape gradient buffer.
/// Layout is row-major with the last axis fastest; spatial tensors use
/// [C, Z, Y, X] so a single-channel tensor aliases Volume memory directly.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<std::size_t>(checked_size(shape_)), 0.0f);
    }

    [[nodiscard]] static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    [[nodiscard]] static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

    [[nodiscard]] const std::vector<int>& shape() const { return shape_; }
    [[nodiscard]] int rank() const { return static_cast<int>(shape_.size()); }
    [[nodiscard]] int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    [[nodiscard]] std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    [[nodiscard]] float* data() { return data_.data(); }
    [[nodiscard]] const float* data() const { return data_.data(); }
    [[nodiscard]] float& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    [[nodiscard]] float operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

    /// Reinterprets the buffer under a new shape of identical element count.
    void reshape(std::vector<int> new_shape) {
        if (checked_size(new_shape) != size())
            throw ShapeError("tensor: cannot reshape " + shape_string(shape_) + " to " +
                             shape_string(new_shape));
        shape_ = std::move(new_shape);
    }

    /// Releases the payload (the shape is kept); used for eager freeing of
    /// consumed activations so the memory accounting reflects the live set.
    void release() {
        tracked_floats().swap(data_);
        tracked_floats().swap(grad_);
    }

    // ---- gradient buffer ----
    [[nodiscard]] bool has_grad() const { return !grad_.empty(); }
    void alloc_grad() { grad_.assign(data_.size(), 0.0f); }
    void zero_grad() {
        if (has_grad()) std::fill(grad_.begin(), grad_.end(), 0.0f);
    }
    void free_grad() { tracked_floats().swap(grad_); }
    [[nodiscard]] float* grad() {
        if (!has_grad()) throw StateError("tensor: gradient buffer not allocated");
        return grad_.data();
    }
    [[nodiscard]] const float* grad() const {
        if (!has_grad()) throw StateError("tensor: gradient buffer not allocated");
        return grad_.data();
    }

private:
    static std::int64_t checked_size(const std::vector<int>& shape) {
        std::int64_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw ShapeError("tensor: nonpositive dim in shape " + shape_string(shape));
            n *= d;
        }
        return n;
    }

    std::vector<int> shape_;
    tracked_floats data_;
    tracked_floats grad_;
};

[[nodiscard]] inline bool same_shape(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape();
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b))
        throw ShapeError(std::string(op) + ": shape mismatch, expected " + shape_string(a.shape()) +
                         ", got " + shape_string(b.shape()));
}

inline void require_shape(const char* op, const Tensor& t, const std::vector<int>& expected) {
    if (t.shape() != expected)
        throw ShapeError(std::string(op) + ": expected shape " + shape_string(expected) + ", got " +
                         shape_string(t.shape()));
}

namespace detail {

/// Debug-build guard: every forward/backward result must be finite.
inline void check_finite(const char* op, const Tensor& t) {
#ifndef NDEBUG
    const float* p = t.data();
    for (std::int64_t i = 0; i < t.size(); ++i) {
        if (!std::isfinite(p[i]))
            throw StateError(std::string(op) + ": non-finite value at flat index " + std::to_string(i));
    }
#else
    (void)op;
    (void)t;
#endif
}

}  // namespace detail

}  // namespace segvae
