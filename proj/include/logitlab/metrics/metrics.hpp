// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Stability diagnostics for the output head: the B_ratio criterion for
// whether mu-centering shrinks the worst-case logit bound, learning rate
// sensitivity over an eta grid, and pooled logit statistics.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "logitlab/head/head.hpp"

namespace logitlab::metrics {

/// Tight bounds on the dot products d_i = e_i . mu:
///   |mu|^2 - b_minus = min_i d_i,   |mu|^2 + b_plus = max_i d_i.
struct BRatioRecord {
    double mu_norm_sq = 0.0;
    double b_minus = 0.0;
    double b_plus = 0.0;
    double b_ratio = 1.0;
    /// Denominator vanished (mu = 0); the ratio is then defined as 1.
    bool degenerate = false;
};

/// max(B-, B+) / max(B- - |mu|^2, B+ + |mu|^2), or 1 when the denominator is 0.
double b_ratio_from_bounds(double b_minus, double b_plus, double mu_norm_sq);

template <typename T>
BRatioRecord b_ratio(const head::EmbeddingTable<T>& table);

struct Theorem4Check {
    double b_ratio = 1.0;
    double max_norm_before = 0.0;
    double max_norm_after = 0.0;
    /// (b_ratio <= 1) == (max_norm_after <= max_norm_before).
    bool consistent = true;
    /// For the table and its centered copy, the row with the largest norm also
    /// carries both the largest component along mu and the largest
    /// perpendicular remainder. Only then does the equivalence have to hold.
    bool tight = true;
};

template <typename T>
Theorem4Check check_theorem4(const head::EmbeddingTable<T>& table);

struct LrsInput {
    std::vector<double> eta_grid;
    std::vector<double> final_losses;  // may hold NaN or inf for diverged runs
    double init_loss = 0.0;
};

/// Mean over eta of min(L(eta), L0) - min_eta min(L(eta), L0). Non-finite
/// losses count as L0.
double lrs(const LrsInput& input);

struct LogitStats {
    double mean = 0.0;
    double std = 0.0;
    double max_abs = 0.0;
    /// Largest magnitude before soft-capping; equals max_abs for other kinds.
    double max_abs_raw = 0.0;
    std::uint64_t count = 0;
};

/// Pools logits across many vectors. Statistics are taken on what the head
/// emits, so soft-capped values under soft_cap.
class LogitStatsAccumulator {
public:
    explicit LogitStatsAccumulator(const head::HeadStrategy& strategy) : strategy_(strategy) {}

    template <typename T>
    void add(std::span<const T> raw_logits);

    LogitStats result() const;

private:
    head::HeadStrategy strategy_;
    double sum_ = 0.0;
    double sum_sq_ = 0.0;
    double max_abs_ = 0.0;
    double max_abs_raw_ = 0.0;
    std::uint64_t count_ = 0;
    bool non_finite_ = false;
};

/// `hidden_states` holds one hidden vector per row, shape [N x H] with N >= 1.
template <typename T>
LogitStats sample_logit_stats(const head::EmbeddingTable<T>& table, const nn::Tensor<T>& hidden_states,
                              const head::HeadStrategy& strategy);

/// One row of metrics.jsonl.
struct MetricSample {
    std::int64_t step = 0;
    double test_loss = 0.0;
    double lr = 0.0;
    double mu_norm = 0.0;
    double logit_mean = 0.0;
    double logit_std = 0.0;
    double logit_max_abs = 0.0;
    double logit_max_abs_raw = 0.0;
    double b_ratio = 1.0;
    bool diverged = false;
    double step_ms = 0.0;

    /// Sets `diverged` iff the loss or any logit statistic is non-finite.
    void update_divergence();
};

}  // namespace logitlab::metrics
