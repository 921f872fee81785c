// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Value-level numerics shared by the head and metrics code. All exp/log work
// is max-shifted.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace logitlab::nn {

/// log(sum_j exp(x_j)); -inf for an empty span.
template <typename T>
T log_sum_exp(std::span<const T> x);

template <typename T>
std::vector<T> softmax(std::span<const T> logits);

/// -log softmax(logits)[target]. Throws IndexError on a bad target.
template <typename T>
T softmax_xent(std::span<const T> logits, std::size_t target);

/// log(exp(a) + exp(b)), exact when either side is -inf.
double log_add_exp(double a, double b);

}  // namespace logitlab::nn
