// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "logitlab/nn/functional.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "logitlab/errors.hpp"

namespace logitlab::nn {

template <typename T>
T log_sum_exp(std::span<const T> x) {
    if (x.empty()) {
        return -std::numeric_limits<T>::infinity();
    }
    const T mx = *std::max_element(x.begin(), x.end());
    if (!std::isfinite(mx)) {
        return mx;
    }
    T z{0};
    for (T v : x) {
        z += std::exp(v - mx);
    }
    return mx + std::log(z);
}

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
    std::vector<T> p(logits.size());
    if (logits.empty()) {
        return p;
    }
    const T mx = *std::max_element(logits.begin(), logits.end());
    T z{0};
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        z += p[i];
    }
    for (T& v : p) {
        v /= z;
    }
    return p;
}

template <typename T>
T softmax_xent(std::span<const T> logits, std::size_t target) {
    if (target >= logits.size()) {
        throw IndexError("target " + std::to_string(target) + " outside vocabulary of " +
                         std::to_string(logits.size()));
    }
    return log_sum_exp(logits) - logits[target];
}

double log_add_exp(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) {
        return b;
    }
    if (b == -std::numeric_limits<double>::infinity()) {
        return a;
    }
    const double mx = std::max(a, b);
    return mx + std::log1p(std::exp(-std::abs(a - b)));
}

template float log_sum_exp<float>(std::span<const float>);
template double log_sum_exp<double>(std::span<const double>);
template std::vector<float> softmax<float>(std::span<const float>);
template std::vector<double> softmax<double>(std::span<const double>);
template float softmax_xent<float>(std::span<const float>, std::size_t);
template double softmax_xent<double>(std::span<const double>, std::size_t);

}  // namespace logitlab::nn
