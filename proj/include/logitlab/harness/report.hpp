// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Post-hoc reports over a sweep directory. Every number is recomputed from
// the per-cell files; nothing derived is cached between invocations.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "logitlab/metrics/metrics.hpp"

namespace logitlab::harness {

/// Cells sharing everything but eta.
struct GroupKey {
    std::string strategy;
    std::string size;
    bool tying = false;
    double lambda = 0.0;  // NaN when not applicable

    std::string lambda_text() const;
    friend bool operator<(const GroupKey& a, const GroupKey& b);
};

struct LrsRow {
    GroupKey key;
    double lrs = 0.0;        // NaN when the group has gaps
    double init_loss = 0.0;  // L0, the mean step-0 test loss of the group's runs
    std::size_t n_eta = 0;   // cells found
    std::vector<double> missing_etas;
};

struct OptimalLossRow {
    GroupKey key;
    double optimal_loss = 0.0;  // min over eta of the finite final losses; NaN if none
    double best_eta = 0.0;
    std::size_t n_eta = 0;
    std::vector<double> missing_etas;
};

struct OverheadRow {
    GroupKey key;
    double median_step_ms = 0.0;  // median over cells of each cell's median step time
    double overhead_pct = 0.0;    // relative to baseline of the same size and tying; NaN without one
};

struct AnalysisReport {
    std::vector<LrsRow> lrs;
    std::vector<OptimalLossRow> optimal_loss;
    std::vector<OverheadRow> overhead;
    std::vector<std::string> missing_runs;
};

/// Reads sweep_summary.csv plus each cell's metrics.jsonl and timing.json
/// from `dir` and writes lrs.csv, optimal_loss.csv and overhead.csv there.
/// Cells expected by grid.json (or, without it, by the eta values seen for
/// the same size and tying) but absent are listed and leave gaps.
AnalysisReport analyze(const std::filesystem::path& dir);

struct BRatioRow {
    std::string run_id;
    std::string strategy;
    std::string size;
    double eta = 0.0;
    double lambda = 0.0;
    bool tying = false;
    std::int64_t step = 0;
    metrics::BRatioRecord record;
    std::string status;  // "ok", "unreadable: ..." or "non-finite"
};

/// B_ratio of the output table of every checkpoint found below `dir`, sorted
/// by (size, eta, tying, run id); also written to <dir>/bratio.csv.
std::vector<BRatioRow> bratio_report(const std::filesystem::path& dir);

/// Writes curves.csv (every metrics row of every run, tagged with its cell),
/// zloss_1d.csv and zloss_2d.csv into `dir`. Returns the number of runs found.
std::size_t write_curves(const std::filesystem::path& dir);

}  // namespace logitlab::harness
