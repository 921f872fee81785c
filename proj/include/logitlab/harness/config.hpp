// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run and sweep configuration, JSON round-tripping, and the small helpers the
// harness shares for writing JSON and CSV.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "logitlab/head/strategy.hpp"
#include "logitlab/model/model.hpp"
#include "logitlab/optim/optim.hpp"

namespace logitlab::harness {

struct RunConfig {
    model::ModelConfig model;
    optim::OptimConfig optim;
    head::HeadStrategy head;
    std::string data_path;
    std::size_t batch_size = 4;
    std::int64_t eval_every = 100;
    /// Number of fixed test windows, each seq_len positions long.
    std::size_t metric_sample_size = 40;
    double test_fraction = 0.1;
    std::string out_dir = "runs";
    std::string run_id = "run";
    std::string size_tag = "small";
    /// Wall-clock step times in metrics.jsonl; off gives byte-identical reruns.
    bool record_timing = true;
    bool save_checkpoint = true;

    /// Throws ConfigError; also requires eval_every to divide total_steps.
    void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, RunConfig& c);

/// Reads a RunConfig; LOGITLAB_OUT, when set, replaces out_dir.
RunConfig load_run_config(const std::filesystem::path& path);
void apply_env_overrides(RunConfig& config);

/// tiny: 2 layers, H=32; small: 4 layers, H=64; medium: 6 layers, H=96.
/// Four heads and ffn_dim = 4H throughout. Throws ConfigError on other tags.
model::ModelConfig size_preset(const std::string& tag, const model::ModelConfig& base = {});

/// Default learning rate grid of the sweep.
std::vector<double> default_eta_grid();
/// Default regularization strengths for z_loss and mu_loss.
std::vector<double> default_lambda_grid();

/// JSON number, or null when not finite.
nlohmann::json number_or_null(double value);
/// NaN for null.
double number_from_json(const nlohmann::json& value);

/// Shortest round-trippable text for a double ("nan", "inf" and "-inf" for
/// non-finite values).
std::string format_double(double value);

std::string read_text(const std::filesystem::path& path);
/// Writes through a temporary file and renames, so readers never see a partial file.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace logitlab::harness
