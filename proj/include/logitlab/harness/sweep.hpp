// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Grid sweeps over strategy x eta x lambda x tying x size. Each cell is an
// independent run_train() in its own directory under the sweep's out_dir;
// cells that already finished with matching digests are reused.

#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "logitlab/harness/config.hpp"

namespace logitlab::harness {

struct SweepGrid {
    std::vector<head::HeadKind> strategies;
    std::vector<double> etas = default_eta_grid();
    /// Applied only to strategies that read lambda; the others get one cell per eta.
    std::vector<double> lambdas = {head::kDefaultLambda};
    std::vector<bool> tying = {false};
    std::vector<std::string> sizes = {"small"};
    RunConfig base;

    /// Throws ConfigError on an empty axis.
    void validate() const;
};

void to_json(nlohmann::json& j, const SweepGrid& g);
void from_json(const nlohmann::json& j, SweepGrid& g);
/// LOGITLAB_OUT, when set, replaces base.out_dir.
SweepGrid load_sweep_grid(const std::filesystem::path& path);

/// e.g. "mu_loss-small-eta0.01-lam0.0001-untied".
std::string cell_id(const RunConfig& config);

/// One RunConfig per cell, in a fixed order, with unique run ids.
std::vector<RunConfig> expand_grid(const SweepGrid& grid);

/// A row of sweep_summary.csv.
struct SweepRow {
    std::string strategy;
    std::string size;
    double eta = 0.0;
    double lambda = 0.0;  // NaN when the strategy has no lambda
    bool tying = false;
    double final_loss = 0.0;
    bool diverged = false;
    double mean_step_ms = 0.0;
};

inline constexpr const char* kSweepCsvHeader = "strategy,size,eta,lambda,tying,final_loss,diverged,mean_step_ms";

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);
std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path);

struct CellFailure {
    std::string run_id;
    std::string error;
};

struct SweepOutcome {
    std::vector<SweepRow> rows;  // completed cells, in grid order
    std::vector<CellFailure> failures;
    std::size_t ran = 0;
    std::size_t reused = 0;
};

struct SweepOptions {
    unsigned jobs = 1;
    /// Progress lines; called from worker threads under a lock.
    std::function<void(const std::string&)> log;
};

/// Runs every cell of `grid`, writes grid.json, sweep_summary.csv and, if any
/// cell failed, sweep_failures.csv into grid.base.out_dir. A failing cell does
/// not stop the others.
SweepOutcome run_sweep(const SweepGrid& grid, const SweepOptions& options = {});

}  // namespace logitlab::harness
