#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "hytrec/error.hpp"

namespace hytrec {

namespace detail {

// Byte accounting for all tensor storage; the benchmark reports the
// high-water mark as its peak-memory estimate.
struct TensorBytes {
    static std::atomic<int64_t> live;
    static std::atomic<int64_t> peak;

    static void track(int64_t bytes) {
        int64_t now = live.fetch_add(bytes, std::memory_order_relaxed) + bytes;
        int64_t prev = peak.load(std::memory_order_relaxed);
        while (now > prev && !peak.compare_exchange_weak(prev, now, std::memory_order_relaxed)) {
        }
    }
    static void untrack(int64_t bytes) { live.fetch_sub(bytes, std::memory_order_relaxed); }
};

template <typename T>
struct CountingAllocator {
    using value_type = T;

    CountingAllocator() = default;
    template <typename U>
    CountingAllocator(const CountingAllocator<U>&) {}

    T* allocate(size_t n) {
        TensorBytes::track(static_cast<int64_t>(n * sizeof(T)));
        return static_cast<T*>(::operator new(n * sizeof(T)));
    }
    void deallocate(T* p, size_t n) {
        TensorBytes::untrack(static_cast<int64_t>(n * sizeof(T)));
        ::operator delete(p);
    }
    bool operator==(const CountingAllocator&) const { return true; }
};

}  // namespace detail

// Dense row-major n-dimensional array of doubles. Contiguous storage, no
// views or strides; copies are fine at the scale this library targets.
class Tensor {
public:
    using Storage = std::vector<double, detail::CountingAllocator<double>>;

    Tensor() = default;

    // Zero-initialized tensor of the given shape.
    explicit Tensor(std::vector<int64_t> shape);

    static Tensor scalar(double v);
    static Tensor from(std::vector<int64_t> shape, std::vector<double> values);

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    // 2-D accessors; throw on other ranks.
    int64_t rows() const;
    int64_t cols() const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    // Unchecked fast access.
    double& operator()(int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator()(int64_t i) const { return data_[static_cast<size_t>(i)]; }
    double& operator()(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols_ + c)]; }
    double operator()(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols_ + c)]; }

    // Bounds-checked access for tests and cold paths.
    double& at(int64_t i);
    double at(int64_t i) const;
    double& at(int64_t r, int64_t c);
    double at(int64_t r, int64_t c) const;

    void fill(double v);
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    // Throws NumericError naming `what` if any element is NaN/Inf.
    void ensure_finite(const char* what) const;

    auto begin() { return data_.begin(); }
    auto end() { return data_.end(); }
    auto begin() const { return data_.begin(); }
    auto end() const { return data_.end(); }

    static int64_t live_bytes() { return detail::TensorBytes::live.load(std::memory_order_relaxed); }
    static int64_t peak_bytes() { return detail::TensorBytes::peak.load(std::memory_order_relaxed); }
    static void reset_peak_bytes() {
        detail::TensorBytes::peak.store(live_bytes(), std::memory_order_relaxed);
    }

private:
    std::vector<int64_t> shape_;
    int64_t cols_ = 0;  // stride of the last dimension's parent, cached for 2-D access
    Storage data_;
};

// Standard matrix product; throws ShapeError when inner dims disagree.
Tensor matmul(const Tensor& a, const Tensor& b);

// a' * b and a * b' without forming the transpose.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);

}  // namespace hytrec
