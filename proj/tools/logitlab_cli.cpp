// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// logitlab: train single runs, sweep grids, and derive reports.
//
//   logitlab train   --config run.json [--data corpus.txt] [--out dir]
//   logitlab sweep   --grid grid.json [--jobs N] [--data corpus.txt] [--out dir]
//   logitlab analyze <sweep_dir>
//   logitlab bratio  <dir>
//   logitlab curves  <sweep_dir>

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <exception>
#include <iostream>

#include "logitlab/harness/config.hpp"
#include "logitlab/harness/report.hpp"
#include "logitlab/harness/sweep.hpp"
#include "logitlab/harness/train.hpp"

namespace lh = logitlab::harness;

namespace {

int cmd_train(const std::string& config_path, const std::string& data, const std::string& out) {
    lh::RunConfig config = lh::load_run_config(config_path);
    if (!data.empty()) {
        config.data_path = data;
    }
    if (!out.empty()) {
        config.out_dir = out;
    }
    const lh::RunRecord rec = lh::run_train(config);
    std::printf("run %s: %lld steps, init_loss %.4f, final_loss %s%s, median %.2f ms/step\n", config.run_id.c_str(),
                static_cast<long long>(rec.steps_completed), rec.init_loss, lh::format_double(rec.final_loss).c_str(),
                rec.diverged ? " (diverged)" : "", rec.median_step_ms);
    std::printf("outputs in %s\n", rec.run_dir.string().c_str());
    return 0;
}

int cmd_sweep(const std::string& grid_path, unsigned jobs, const std::string& data, const std::string& out) {
    lh::SweepGrid grid = lh::load_sweep_grid(grid_path);
    if (!data.empty()) {
        grid.base.data_path = data;
    }
    if (!out.empty()) {
        grid.base.out_dir = out;
    }
    lh::SweepOptions options;
    options.jobs = jobs;
    options.log = [](const std::string& line) { std::cerr << line << std::endl; };
    const lh::SweepOutcome outcome = lh::run_sweep(grid, options);
    std::printf("sweep: %zu ran, %zu reused, %zu failed; summary in %s/sweep_summary.csv\n", outcome.ran,
                outcome.reused, outcome.failures.size(), grid.base.out_dir.c_str());
    return outcome.failures.empty() ? 0 : 3;
}

int cmd_analyze(const std::string& dir) {
    const lh::AnalysisReport report = lh::analyze(dir);
    std::printf("%-10s %-7s %-6s %-8s %10s %12s %10s\n", "strategy", "size", "tying", "lambda", "lrs", "optimal",
                "overhead%");
    for (std::size_t i = 0; i < report.lrs.size(); ++i) {
        const auto& l = report.lrs[i];
        std::printf("%-10s %-7s %-6s %-8s %10.4f %12.4f %10.2f\n", l.key.strategy.c_str(), l.key.size.c_str(),
                    l.key.tying ? "tied" : "untied", l.key.lambda_text().c_str(), l.lrs,
                    report.optimal_loss[i].optimal_loss, report.overhead[i].overhead_pct);
    }
    for (const auto& id : report.missing_runs) {
        std::printf("missing: %s\n", id.c_str());
    }
    return 0;
}

int cmd_bratio(const std::string& dir) {
    const auto rows = lh::bratio_report(dir);
    for (const auto& r : rows) {
        std::printf("%-48s %s\n", r.run_id.c_str(),
                    r.status == "ok" ? lh::format_double(r.record.b_ratio).c_str() : r.status.c_str());
    }
    std::printf("%zu checkpoints; table in %s/bratio.csv\n", rows.size(), dir.c_str());
    return 0;
}

int cmd_curves(const std::string& dir) {
    const std::size_t n = lh::write_curves(dir);
    std::printf("%zu runs; wrote curves.csv, zloss_1d.csv, zloss_2d.csv in %s\n", n, dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"logitlab: output-head stability experiments"};
    app.require_subcommand(1);

    std::string config_path, grid_path, data, out, dir;
    unsigned jobs = 1;

    auto* train = app.add_subcommand("train", "Run one training job");
    train->add_option("--config", config_path, "Run config JSON")->required()->check(CLI::ExistingFile);
    train->add_option("--data", data, "Corpus file (overrides data_path)");
    train->add_option("--out", out, "Output directory (overrides out_dir)");

    auto* sweep = app.add_subcommand("sweep", "Run a grid of training jobs");
    sweep->add_option("--grid", grid_path, "Sweep grid JSON")->required()->check(CLI::ExistingFile);
    sweep->add_option("--jobs", jobs, "Concurrent cells")->check(CLI::PositiveNumber);
    sweep->add_option("--data", data, "Corpus file (overrides base.data_path)");
    sweep->add_option("--out", out, "Sweep directory (overrides base.out_dir)");

    auto* analyze = app.add_subcommand("analyze", "LRS, optimal loss and overhead tables of a sweep");
    analyze->add_option("dir", dir, "Sweep directory")->required()->check(CLI::ExistingDirectory);
    auto* bratio = app.add_subcommand("bratio", "B_ratio of every checkpoint below a directory");
    bratio->add_option("dir", dir, "Directory to scan")->required()->check(CLI::ExistingDirectory);
    auto* curves = app.add_subcommand("curves", "Raw CSVs for plotting");
    curves->add_option("dir", dir, "Sweep directory")->required()->check(CLI::ExistingDirectory);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) {
            return cmd_train(config_path, data, out);
        }
        if (*sweep) {
            return cmd_sweep(grid_path, jobs, data, out);
        }
        if (*analyze) {
            return cmd_analyze(dir);
        }
        if (*bratio) {
            return cmd_bratio(dir);
        }
        if (*curves) {
            return cmd_curves(dir);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "logitlab: %s\n", e.what());
        return 1;
    }
    return 2;
}
