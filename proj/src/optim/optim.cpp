// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "logitlab/optim/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "logitlab/errors.hpp"

namespace logitlab::optim {

void OptimConfig::validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("optim.beta1 and optim.beta2 must lie in [0, 1)");
    }
    if (!(eps > 0.0) || !(peak_lr >= 0.0) || !(min_lr >= 0.0) || !(weight_decay >= 0.0) || !(clip_norm > 0.0)) {
        throw ConfigError("optim: eps and clip_norm must be positive; rates and decay non-negative");
    }
    if (total_steps < 1 || warmup_steps < 0 || warmup_steps > total_steps) {
        throw ConfigError("optim: need 0 <= warmup_steps <= total_steps and total_steps >= 1");
    }
    if (min_lr > peak_lr) {
        throw ConfigError("optim.min_lr exceeds optim.peak_lr");
    }
}

double lr_at(const OptimConfig& config, std::int64_t step) {
    if (step < 0 || step > config.total_steps) {
        throw ContractError("lr_at: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(config.total_steps) + "]");
    }
    if (step < config.warmup_steps) {
        return config.peak_lr * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
    }
    const std::int64_t span = config.total_steps - config.warmup_steps;
    const double progress = span == 0 ? 1.0 : static_cast<double>(step - config.warmup_steps) / static_cast<double>(span);
    return config.min_lr + (config.peak_lr - config.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
ClipResult clip_global_norm(std::span<nn::Tensor<T>* const> params, double max_norm) {
    if (!(max_norm > 0.0)) {
        throw ContractError("clip_global_norm: max_norm must be positive");
    }
    ClipResult r;
    double sq = 0.0;
    for (const nn::Tensor<T>* p : params) {
        for (T g : p->grad()) {
            sq += static_cast<double>(g) * static_cast<double>(g);
        }
    }
    r.norm = std::sqrt(sq);
    if (!std::isfinite(r.norm)) {
        r.finite = false;
        return r;
    }
    if (r.norm > max_norm) {
        r.factor = max_norm / r.norm;
        const T f = static_cast<T>(r.factor);
        for (nn::Tensor<T>* p : params) {
            if (p->has_grad()) {
                for (T& g : p->grad()) {
                    g *= f;
                }
            }
        }
    }
    return r;
}

namespace {

template <typename T>
void step_impl(std::span<nn::Tensor<T>* const> params, OptimState<T>& state, double lr, const OptimConfig& c,
               bool decoupled) {
    if (!(lr >= 0.0)) {
        throw ContractError("learning rate must be non-negative");
    }
    if (state.m.empty()) {
        for (const nn::Tensor<T>* p : params) {
            state.m.emplace_back(p->size(), T{0});
            state.v.emplace_back(p->size(), T{0});
        }
    }
    if (state.m.size() != params.size()) {
        throw DimensionError("optimizer state tracks " + std::to_string(state.m.size()) + " tensors, got " +
                             std::to_string(params.size()));
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
    const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
    const T one_b1 = static_cast<T>(1.0 - c.beta1), one_b2 = static_cast<T>(1.0 - c.beta2);
    const T step = static_cast<T>(lr / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(c.eps);
    const T wd = static_cast<T>(c.weight_decay);
    const T decay = static_cast<T>(lr * c.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
        nn::Tensor<T>& p = *params[i];
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != p.size()) {
            throw DimensionError("optimizer moment shape does not match parameter");
        }
        const bool has_grad = p.has_grad();
        const std::span<const T> grads = std::as_const(p).grad();
        for (std::size_t j = 0; j < p.size(); ++j) {
            T g = has_grad ? grads[j] : T{0};
            if (!decoupled) {
                g += wd * p[j];
            }
            m[j] = b1 * m[j] + one_b1 * g;
            v[j] = b2 * v[j] + one_b2 * g * g;
            if (decoupled) {
                p[j] -= decay * p[j];
            }
            p[j] -= step * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + eps);
        }
    }
}

}  // namespace

template <typename T>
void adamw_step(std::span<nn::Tensor<T>* const> params, OptimState<T>& state, double lr, const OptimConfig& config) {
    step_impl(params, state, lr, config, true);
}

template <typename T>
void adam_step(std::span<nn::Tensor<T>* const> params, OptimState<T>& state, double lr, const OptimConfig& config) {
    step_impl(params, state, lr, config, false);
}

template ClipResult clip_global_norm<float>(std::span<nn::Tensor<float>* const>, double);
template ClipResult clip_global_norm<double>(std::span<nn::Tensor<double>* const>, double);
template void adamw_step<float>(std::span<nn::Tensor<float>* const>, OptimState<float>&, double, const OptimConfig&);
template void adamw_step<double>(std::span<nn::Tensor<double>* const>, OptimState<double>&, double,
                                 const OptimConfig&);
template void adam_step<float>(std::span<nn::Tensor<float>* const>, OptimState<float>&, double, const OptimConfig&);
template void adam_step<double>(std::span<nn::Tensor<double>* const>, OptimState<double>&, double,
                                const OptimConfig&);

}  // namespace logitlab::optim
