// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor with an optional, lazily allocated gradient buffer.

#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace logitlab::nn {

using Shape = std::vector<std::size_t>;

/// Allocates on 64-byte boundaries. Vectorized kernels peel unaligned leading
/// elements into scalar code, so a fixed alignment keeps results bitwise
/// reproducible from one allocation to the next.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlignment{64};

    AlignedAllocator() noexcept = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

    template <typename U>
    friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
        return true;
    }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{0});
    Tensor(Shape shape, std::vector<T> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    /// Trailing dimension; 1 for a scalar.
    std::size_t cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }
    /// Product of all leading dimensions.
    std::size_t rows() const noexcept { return cols() == 0 ? 0 : size() / cols(); }

    std::span<T> values() noexcept { return values_; }
    std::span<const T> values() const noexcept { return values_; }
    T* data() noexcept { return values_.data(); }
    const T* data() const noexcept { return values_.data(); }

    T& operator[](std::size_t i) { return values_[i]; }
    const T& operator[](std::size_t i) const { return values_[i]; }
    T& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
    const T& at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

    std::span<T> row(std::size_t r) { return std::span<T>(values_).subspan(r * cols(), cols()); }
    std::span<const T> row(std::size_t r) const {
        return std::span<const T>(values_).subspan(r * cols(), cols());
    }

    /// Reinterprets the same values under a new shape with equal element count.
    void reshape(Shape shape);

    bool requires_grad() const noexcept { return requires_grad_; }
    void set_requires_grad(bool flag) noexcept { requires_grad_ = flag; }

    bool has_grad() const noexcept { return !grad_.empty(); }
    /// Gradient buffer, allocated as zeros on first access.
    std::span<T> grad();
    std::span<const T> grad() const noexcept { return grad_; }
    void zero_grad();
    void drop_grad() { grad_.clear(); grad_.shrink_to_fit(); }

    bool all_finite() const noexcept;

private:
    Shape shape_;
    Buffer<T> values_;
    Buffer<T> grad_;
    bool requires_grad_ = false;
};

/// Converts values between precisions; gradients are not carried over.
template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& src) {
    std::vector<To> out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
        out[i] = static_cast<To>(src[i]);
    }
    Tensor<To> result(src.shape(), std::move(out));
    result.set_requires_grad(src.requires_grad());
    return result;
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace logitlab::nn
