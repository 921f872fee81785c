// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "logitlab/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "logitlab/errors.hpp"

namespace logitlab::metrics {

namespace {

template <typename T>
std::vector<double> mean_row(const head::EmbeddingTable<T>& table) {
    const std::vector<T> mu = head::mean_embedding(table);
    return {mu.begin(), mu.end()};
}

template <typename T>
double dot_row(std::span<const T> row, const std::vector<double>& v) {
    double s = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) {
        s += static_cast<double>(row[c]) * v[c];
    }
    return s;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

struct NormProfile {
    double max_sq = 0.0;       // max_i |e_i|^2
    double max_par_sq = 0.0;   // max_i (e_i . mu_hat)^2
    double max_perp_sq = 0.0;  // max_i |e_i - (e_i . mu_hat) mu_hat|^2
};

// `shift` is subtracted from every row before measuring.
template <typename T>
NormProfile norm_profile(const head::EmbeddingTable<T>& table, const std::vector<double>& unit_mu,
                         const std::vector<double>& shift) {
    NormProfile p;
    std::vector<double> row(table.cols());
    for (std::size_t i = 0; i < table.rows(); ++i) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            row[c] = static_cast<double>(table.at(i, c)) - shift[c];
        }
        const double sq = dot(row, row);
        const double par = dot(row, unit_mu);
        const double perp = std::max(0.0, sq - par * par);
        p.max_sq = std::max(p.max_sq, sq);
        p.max_par_sq = std::max(p.max_par_sq, par * par);
        p.max_perp_sq = std::max(p.max_perp_sq, perp);
    }
    return p;
}

bool decomposes(const NormProfile& p) {
    const double sum = p.max_par_sq + p.max_perp_sq;
    return std::abs(p.max_sq - sum) <= 1e-12 * std::max(1.0, sum);
}

}  // namespace

double b_ratio_from_bounds(double b_minus, double b_plus, double mu_norm_sq) {
    const double denom = std::max(b_minus - mu_norm_sq, b_plus + mu_norm_sq);
    if (denom == 0.0) {
        return 1.0;
    }
    return std::max(b_minus, b_plus) / denom;
}

template <typename T>
BRatioRecord b_ratio(const head::EmbeddingTable<T>& table) {
    head::check_table(table);
    const std::vector<double> mu = mean_row(table);
    BRatioRecord rec;
    rec.mu_norm_sq = dot(mu, mu);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < table.rows(); ++i) {
        const double d = dot_row(table.row(i), mu);
        lo = std::min(lo, d);
        hi = std::max(hi, d);
    }
    rec.b_minus = rec.mu_norm_sq - lo;
    rec.b_plus = hi - rec.mu_norm_sq;
    const double denom = std::max(rec.b_minus - rec.mu_norm_sq, rec.b_plus + rec.mu_norm_sq);
    rec.degenerate = denom == 0.0;
    rec.b_ratio = b_ratio_from_bounds(rec.b_minus, rec.b_plus, rec.mu_norm_sq);
    return rec;
}

template <typename T>
Theorem4Check check_theorem4(const head::EmbeddingTable<T>& table) {
    head::check_table(table);
    const std::vector<double> mu = mean_row(table);
    const double mu_norm = std::sqrt(dot(mu, mu));
    Theorem4Check out;
    out.b_ratio = b_ratio(table).b_ratio;
    const std::vector<double> zero(mu.size(), 0.0);
    if (mu_norm == 0.0) {
        const NormProfile p = norm_profile(table, zero, zero);
        out.max_norm_before = out.max_norm_after = std::sqrt(p.max_sq);
        out.consistent = out.b_ratio <= 1.0;
        out.tight = true;
        return out;
    }
    std::vector<double> unit(mu.size());
    for (std::size_t c = 0; c < mu.size(); ++c) {
        unit[c] = mu[c] / mu_norm;
    }
    const NormProfile before = norm_profile(table, unit, zero);
    const NormProfile after = norm_profile(table, unit, mu);
    out.max_norm_before = std::sqrt(before.max_sq);
    out.max_norm_after = std::sqrt(after.max_sq);
    out.consistent = (out.b_ratio <= 1.0) == (out.max_norm_after <= out.max_norm_before);
    out.tight = decomposes(before) && decomposes(after);
    return out;
}

double lrs(const LrsInput& input) {
    if (input.final_losses.empty()) {
        throw ContractError("lrs: empty learning rate grid");
    }
    if (!input.eta_grid.empty() && input.eta_grid.size() != input.final_losses.size()) {
        throw ContractError("lrs: eta grid and loss list differ in length");
    }
    if (!std::isfinite(input.init_loss)) {
        throw ContractError("lrs: initial loss must be finite");
    }
    std::vector<double> clipped(input.final_losses.size());
    std::transform(input.final_losses.begin(), input.final_losses.end(), clipped.begin(), [&](double l) {
        return std::isfinite(l) ? std::min(l, input.init_loss) : input.init_loss;
    });
    const double best = *std::min_element(clipped.begin(), clipped.end());
    double total = 0.0;
    for (double l : clipped) {
        total += l - best;
    }
    return total / static_cast<double>(clipped.size());
}

template <typename T>
void LogitStatsAccumulator::add(std::span<const T> raw_logits) {
    const bool capped = strategy_.kind == head::HeadKind::soft_cap;
    for (T raw : raw_logits) {
        const double r = static_cast<double>(raw);
        const double l = capped ? strategy_.cap * std::tanh(r / strategy_.cap) : r;
        if (!std::isfinite(r)) {
            non_finite_ = true;
        }
        sum_ += l;
        sum_sq_ += l * l;
        max_abs_ = std::max(max_abs_, std::abs(l));
        max_abs_raw_ = std::max(max_abs_raw_, std::abs(r));
    }
    count_ += raw_logits.size();
}

LogitStats LogitStatsAccumulator::result() const {
    LogitStats s;
    s.count = count_;
    if (non_finite_) {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        s.mean = s.std = s.max_abs = s.max_abs_raw = nan;
        return s;
    }
    if (count_ == 0) {
        return s;
    }
    const double n = static_cast<double>(count_);
    s.mean = sum_ / n;
    s.std = std::sqrt(std::max(0.0, sum_sq_ / n - s.mean * s.mean));
    s.max_abs = max_abs_;
    s.max_abs_raw = max_abs_raw_;
    return s;
}

template <typename T>
LogitStats sample_logit_stats(const head::EmbeddingTable<T>& table, const nn::Tensor<T>& hidden_states,
                              const head::HeadStrategy& strategy) {
    head::check_table(table);
    if (hidden_states.empty() || hidden_states.cols() != table.cols()) {
        throw DimensionError("sample_logit_stats: need at least one hidden state of the table's width");
    }
    LogitStatsAccumulator stats(strategy);
    for (std::size_t r = 0; r < hidden_states.rows(); ++r) {
        const std::vector<T> logits = head::compute_logits(table, hidden_states.row(r));
        stats.add(std::span<const T>(logits));
    }
    return stats.result();
}

void MetricSample::update_divergence() {
    diverged = !std::isfinite(test_loss) || !std::isfinite(logit_mean) || !std::isfinite(logit_std) ||
               !std::isfinite(logit_max_abs) || !std::isfinite(mu_norm);
}

template BRatioRecord b_ratio<float>(const head::EmbeddingTable<float>&);
template BRatioRecord b_ratio<double>(const head::EmbeddingTable<double>&);
template Theorem4Check check_theorem4<float>(const head::EmbeddingTable<float>&);
template Theorem4Check check_theorem4<double>(const head::EmbeddingTable<double>&);
template void LogitStatsAccumulator::add<float>(std::span<const float>);
template void LogitStatsAccumulator::add<double>(std::span<const double>);
template LogitStats sample_logit_stats<float>(const head::EmbeddingTable<float>&, const nn::Tensor<float>&,
                                              const head::HeadStrategy&);
template LogitStats sample_logit_stats<double>(const head::EmbeddingTable<double>&, const nn::Tensor<double>&,
                                               const head::HeadStrategy&);

}  // namespace logitlab::metrics
