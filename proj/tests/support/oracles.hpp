// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Independent reference implementations used as test oracles. Nothing here
// calls into the library's numerics; everything is written out longhand.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

namespace oracle {

inline std::vector<double> normal_vector(std::size_t n, std::mt19937_64& rng, double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> dist(mean, stddev);
    std::vector<double> v(n);
    for (double& x : v) {
        x = dist(rng);
    }
    return v;
}

inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// c[m x n] = a[m x k] * b[k x n], all row-major.
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                  std::size_t k, std::size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                s += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = s;
        }
    }
    return c;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

/// log(sum(exp(x))) in long double without a max shift; fine for |x| < 1000.
inline double log_sum_exp(std::span<const double> x) {
    long double z = 0.0L;
    for (double v : x) {
        z += std::exp(static_cast<long double>(v));
    }
    return static_cast<double>(std::log(z));
}

inline std::vector<double> softmax(std::span<const double> x) {
    const double lse = log_sum_exp(x);
    std::vector<double> p(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        p[i] = std::exp(x[i] - lse);
    }
    return p;
}

/// Column means of a row-major [rows x cols] table.
inline std::vector<double> column_means(const std::vector<double>& table, std::size_t rows, std::size_t cols) {
    std::vector<double> mu(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            mu[c] += table[r * cols + c];
        }
    }
    for (double& v : mu) {
        v /= static_cast<double>(rows);
    }
    return mu;
}

/// max_i |e*_i . mu| / max_i |e_i . mu| with e*_i = e_i - mu.
inline double centered_dot_ratio(const std::vector<double>& table, std::size_t rows, std::size_t cols) {
    const std::vector<double> mu = column_means(table, rows, cols);
    double num = 0.0, den = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        double d = 0.0, d_star = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            d += table[r * cols + c] * mu[c];
            d_star += (table[r * cols + c] - mu[c]) * mu[c];
        }
        num = std::max(num, std::abs(d_star));
        den = std::max(den, std::abs(d));
    }
    return num / den;
}

/// Central differences of f at x; x is restored on return.
template <typename F>
std::vector<double> central_difference(F&& f, std::vector<double>& x, double step = 1e-6) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + step;
        const double up = f();
        x[i] = saved - step;
        const double down = f();
        x[i] = saved;
        g[i] = (up - down) / (2.0 * step);
    }
    return g;
}

/// max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
inline double gradient_error(std::span<const double> analytic, std::span<const double> numeric) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / std::max(1.0, std::abs(numeric[i])));
    }
    return worst;
}

/// Adam with bias correction, written as in the original algorithm listing.
struct ReferenceAdam {
    double beta1 = 0.9, beta2 = 0.95, eps = 1e-8;
    std::vector<double> m, v;
    int t = 0;

    void step(std::vector<double>& theta, const std::vector<double>& g, double lr) {
        if (m.empty()) {
            m.assign(theta.size(), 0.0);
            v.assign(theta.size(), 0.0);
        }
        ++t;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            const double m_hat = m[i] / (1.0 - std::pow(beta1, t));
            const double v_hat = v[i] / (1.0 - std::pow(beta2, t));
            theta[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
};

/// Population mean and standard deviation.
inline std::pair<double, double> mean_std(std::span<const double> x) {
    double mean = 0.0;
    for (double v : x) {
        mean += v;
    }
    mean /= static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x) {
        var += (v - mean) * (v - mean);
    }
    return {mean, std::sqrt(var / static_cast<double>(x.size()))};
}

}  // namespace oracle
