// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// AdamW, warmup + cosine schedule, global-norm gradient clipping.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "logitlab/nn/tensor.hpp"

namespace logitlab::optim {

struct OptimConfig {
    double peak_lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double clip_norm = 1.0;
    std::int64_t warmup_steps = 100;
    std::int64_t total_steps = 2000;
    double min_lr = 1e-5;

    /// Throws ConfigError when an invariant is violated.
    void validate() const;
};

/// Linear ramp from 0 to peak over the warmup, then cosine decay to min_lr at
/// total_steps. Throws ContractError for steps outside [0, total_steps].
double lr_at(const OptimConfig& config, std::int64_t step);

struct ClipResult {
    double norm = 0.0;    // global L2 norm before clipping
    double factor = 1.0;  // multiplier applied to every gradient
    bool finite = true;   // false: a non-finite gradient was seen and nothing was scaled
};

/// Scales all gradients by max_norm / norm when the global norm exceeds max_norm.
template <typename T>
ClipResult clip_global_norm(std::span<nn::Tensor<T>* const> params, double max_norm);

template <typename T>
struct OptimState {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    std::int64_t t = 0;
};

/// Bias-corrected Adam with decoupled weight decay. Parameters without a
/// gradient buffer are treated as having zero gradient.
template <typename T>
void adamw_step(std::span<nn::Tensor<T>* const> params, OptimState<T>& state, double lr, const OptimConfig& config);

/// Adam with weight decay folded into the gradient (L2). Identical to
/// adamw_step when weight_decay is 0.
template <typename T>
void adam_step(std::span<nn::Tensor<T>* const> params, OptimState<T>& state, double lr, const OptimConfig& config);

}  // namespace logitlab::optim
