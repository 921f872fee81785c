// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "logitlab/head/head.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "logitlab/errors.hpp"
#include "logitlab/nn/functional.hpp"

namespace logitlab::head {

namespace {

template <typename T>
void check_hidden(const EmbeddingTable<T>& table, std::span<const T> hidden) {
    if (hidden.size() != table.cols()) {
        throw DimensionError("hidden state has " + std::to_string(hidden.size()) + " entries, table width is " +
                             std::to_string(table.cols()));
    }
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
    T s{0};
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

}  // namespace

template <typename T>
void check_table(const EmbeddingTable<T>& table) {
    if (table.rank() != 2 || table.rows() < 1 || table.cols() < 1) {
        throw DimensionError("embedding table must be a non-empty V x H matrix, got " +
                             nn::shape_string(table.shape()));
    }
}

template <typename T>
std::vector<T> compute_logits(const EmbeddingTable<T>& table, std::span<const T> hidden) {
    check_table(table);
    check_hidden(table, hidden);
    std::vector<T> logits(table.rows());
    for (std::size_t i = 0; i < table.rows(); ++i) {
        logits[i] = dot(table.row(i), hidden);
    }
    return logits;
}

template <typename T>
std::vector<T> mean_embedding(const EmbeddingTable<T>& table) {
    check_table(table);
    std::vector<double> sums(table.cols(), 0.0);
    for (std::size_t i = 0; i < table.rows(); ++i) {
        for (std::size_t c = 0; c < table.cols(); ++c) {
            sums[c] += static_cast<double>(table.at(i, c));
        }
    }
    std::vector<T> mu(table.cols());
    for (std::size_t c = 0; c < mu.size(); ++c) {
        mu[c] = static_cast<T>(sums[c] / static_cast<double>(table.rows()));
    }
    return mu;
}

template <typename T>
T mean_logit(const EmbeddingTable<T>& table, std::span<const T> hidden) {
    check_table(table);
    check_hidden(table, hidden);
    const std::vector<T> mu = mean_embedding(table);
    return dot<T>(mu, hidden);
}

template <typename T>
T logit_bound(const EmbeddingTable<T>& table, std::span<const T> hidden) {
    check_table(table);
    check_hidden(table, hidden);
    T max_norm{0};
    for (std::size_t i = 0; i < table.rows(); ++i) {
        max_norm = std::max(max_norm, std::sqrt(dot(table.row(i), table.row(i))));
    }
    return max_norm * std::sqrt(dot(hidden, hidden));
}

template <typename T>
T z_loss_term(std::span<const T> logits, T lambda) {
    if (!(lambda >= T(0))) {
        throw ContractError("z-loss lambda must be non-negative");
    }
    if (lambda == T(0)) {
        return T(0);
    }
    const T log_z = nn::log_sum_exp(logits);
    return lambda * log_z * log_z;
}

template <typename T>
std::vector<T> soft_cap(std::span<const T> logits, T cap) {
    if (!(cap > T(0))) {
        throw ContractError("soft-cap value must be positive");
    }
    std::vector<T> out(logits.size());
    std::transform(logits.begin(), logits.end(), out.begin(), [cap](T l) { return cap * std::tanh(l / cap); });
    return out;
}

template <typename T>
T mu_loss_term(const EmbeddingTable<T>& table, T lambda) {
    if (!(lambda >= T(0))) {
        throw ContractError("mu-loss lambda must be non-negative");
    }
    const std::vector<T> mu = mean_embedding(table);
    return lambda * dot<T>(mu, mu);
}

template <typename T>
void mu_center_in_place(EmbeddingTable<T>& table) {
    const std::vector<T> mu = mean_embedding(table);
    for (std::size_t i = 0; i < table.rows(); ++i) {
        auto row = table.row(i);
        for (std::size_t c = 0; c < row.size(); ++c) {
            row[c] -= mu[c];
        }
    }
}

template <typename T>
T head_loss(const EmbeddingTable<T>& table, std::span<const T> hidden, std::size_t target,
            const HeadStrategy& strategy) {
    check_table(table);
    check_hidden(table, hidden);
    if (target >= table.rows()) {
        throw IndexError("target " + std::to_string(target) + " outside vocabulary of " +
                         std::to_string(table.rows()));
    }
    strategy.validate();
    nn::Graph<T> graph;
    const nn::Var e = graph.constant(table);
    const nn::Var h = graph.constant(nn::Tensor<T>({1, hidden.size()}, std::vector<T>(hidden.begin(), hidden.end())));
    const int t = static_cast<int>(target);
    const HeadOutput<T> out = build_head_loss(graph, e, h, std::span<const int>(&t, 1), strategy);
    return graph.value(out.loss)[0];
}

std::vector<std::pair<double, double>> zloss_1d_curve(double others_sum, std::span<const double> grid, double lambda) {
    if (!(others_sum >= 0.0)) {
        throw ContractError("sum of other exponentials must be non-negative");
    }
    const double log_s = others_sum == 0.0 ? -std::numeric_limits<double>::infinity() : std::log(others_sum);
    std::vector<std::pair<double, double>> curve;
    curve.reserve(grid.size());
    for (double l : grid) {
        const double log_z = nn::log_add_exp(l, log_s);
        curve.emplace_back(l, lambda * log_z * log_z);
    }
    return curve;
}

template <typename T>
HeadOutput<T> build_head_loss(nn::Graph<T>& graph, nn::Var table, nn::Var hidden, std::span<const int> targets,
                              const HeadStrategy& strategy) {
    check_table(graph.value(table));
    HeadOutput<T> out;
    out.raw_logits = graph.matmul_transposed(hidden, table);
    out.logits = out.raw_logits;
    if (strategy.kind == HeadKind::soft_cap) {
        out.logits = graph.tanh_cap(out.raw_logits, static_cast<T>(strategy.cap));
    }
    out.data_loss = graph.cross_entropy(out.logits, targets);
    out.loss = out.data_loss;
    if (strategy.kind == HeadKind::z_loss && strategy.lambda != 0.0) {
        const nn::Var z = graph.log_partition_squared(out.raw_logits);
        out.loss = graph.add(out.data_loss, graph.scale(z, static_cast<T>(strategy.lambda)));
    } else if (strategy.kind == HeadKind::mu_loss && strategy.lambda != 0.0) {
        const nn::Var mu_sq = graph.sum_squares(graph.column_mean(table));
        out.loss = graph.add(out.data_loss, graph.scale(mu_sq, static_cast<T>(strategy.lambda)));
    }
    return out;
}

#define LOGITLAB_INSTANTIATE_HEAD(T)                                                                         \
    template void check_table<T>(const EmbeddingTable<T>&);                                                  \
    template std::vector<T> compute_logits<T>(const EmbeddingTable<T>&, std::span<const T>);                \
    template std::vector<T> mean_embedding<T>(const EmbeddingTable<T>&);                                     \
    template T mean_logit<T>(const EmbeddingTable<T>&, std::span<const T>);                                  \
    template T logit_bound<T>(const EmbeddingTable<T>&, std::span<const T>);                                 \
    template T z_loss_term<T>(std::span<const T>, T);                                                        \
    template std::vector<T> soft_cap<T>(std::span<const T>, T);                                              \
    template T mu_loss_term<T>(const EmbeddingTable<T>&, T);                                                 \
    template void mu_center_in_place<T>(EmbeddingTable<T>&);                                                 \
    template T head_loss<T>(const EmbeddingTable<T>&, std::span<const T>, std::size_t, const HeadStrategy&); \
    template HeadOutput<T> build_head_loss<T>(nn::Graph<T>&, nn::Var, nn::Var, std::span<const int>,         \
                                              const HeadStrategy&);

LOGITLAB_INSTANTIATE_HEAD(float)
LOGITLAB_INSTANTIATE_HEAD(double)

#undef LOGITLAB_INSTANTIATE_HEAD

}  // namespace logitlab::head
