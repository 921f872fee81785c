// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Language-modeling head math. An output embedding table is a [V x H] tensor
// whose rows e_i produce logits l_i = e_i . h for a final hidden state h.
//
// The value-level functions here are pure and are used by the metrics code
// and the property tests; build_head_loss() is the differentiable form used
// during training.

#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "logitlab/head/strategy.hpp"
#include "logitlab/nn/graph.hpp"
#include "logitlab/nn/tensor.hpp"

namespace logitlab::head {

/// Output embedding table, V rows of width H.
template <typename T>
using EmbeddingTable = nn::Tensor<T>;

/// Throws DimensionError unless `table` is rank 2 with V >= 1 and H >= 1.
template <typename T>
void check_table(const EmbeddingTable<T>& table);

template <typename T>
std::vector<T> compute_logits(const EmbeddingTable<T>& table, std::span<const T> hidden);

/// Column mean of the table, the vector mu.
template <typename T>
std::vector<T> mean_embedding(const EmbeddingTable<T>& table);

/// mu . h, which equals the arithmetic mean of compute_logits().
template <typename T>
T mean_logit(const EmbeddingTable<T>& table, std::span<const T> hidden);

/// max_i |e_i| * |h|; no logit can exceed it in magnitude.
template <typename T>
T logit_bound(const EmbeddingTable<T>& table, std::span<const T> hidden);

/// lambda * log^2(sum_j exp(l_j)).
template <typename T>
T z_loss_term(std::span<const T> logits, T lambda);

/// Elementwise cap * tanh(l / cap).
template <typename T>
std::vector<T> soft_cap(std::span<const T> logits, T cap);

/// lambda * (mu . mu).
template <typename T>
T mu_loss_term(const EmbeddingTable<T>& table, T lambda);

/// Subtracts the mean row from every row, in place.
template <typename T>
void mu_center_in_place(EmbeddingTable<T>& table);

template <typename T>
EmbeddingTable<T> mu_center(EmbeddingTable<T> table) {
    mu_center_in_place(table);
    return table;
}

/// Single-position training loss under `strategy`. mu_center contributes no
/// loss term; centering happens after the optimizer step.
template <typename T>
T head_loss(const EmbeddingTable<T>& table, std::span<const T> hidden, std::size_t target,
            const HeadStrategy& strategy);

/// lambda * log^2(exp(l) + S) for each l in `grid`, with S the summed
/// exponentials of all other logits. S = 0 yields exactly lambda * l^2.
std::vector<std::pair<double, double>> zloss_1d_curve(double others_sum, std::span<const double> grid,
                                                      double lambda);

template <typename T>
struct HeadOutput {
    nn::Var loss;        // data loss plus any auxiliary term
    nn::Var data_loss;   // cross-entropy only
    nn::Var logits;      // what the head emits (capped under soft_cap)
    nn::Var raw_logits;  // e_i . h before any cap
};

/// Records the head on `graph` for hidden rows [N x H] and N targets.
template <typename T>
HeadOutput<T> build_head_loss(nn::Graph<T>& graph, nn::Var table, nn::Var hidden, std::span<const int> targets,
                              const HeadStrategy& strategy);

}  // namespace logitlab::head
