// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "logitlab/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "logitlab/errors.hpp"

namespace logitlab::nn {

std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out += "x";
        }
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), values_(element_count(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), values_(values.begin(), values.end()) {
    if (element_count(shape_) != values_.size()) {
        throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                             std::to_string(values_.size()) + " values");
    }
}

template <typename T>
void Tensor<T>::reshape(Shape shape) {
    if (element_count(shape) != values_.size()) {
        throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    shape_ = std::move(shape);
}

template <typename T>
std::span<T> Tensor<T>::grad() {
    if (grad_.size() != values_.size()) {
        grad_.assign(values_.size(), T{0});
    }
    return grad_;
}

template <typename T>
void Tensor<T>::zero_grad() {
    std::fill(grad_.begin(), grad_.end(), T{0});
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace logitlab::nn
