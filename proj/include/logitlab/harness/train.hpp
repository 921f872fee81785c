// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// A single training run: the step loop, periodic evaluation on fixed test
// windows, and the files a run leaves behind in <out_dir>/<run_id>/:
//
//   config.json    the RunConfig as used
//   metrics.jsonl  one MetricSample per evaluation, step 0 first
//   timing.json    wall-clock time of every optimizer step
//   summary.json   final loss, divergence, timing summary, file digests
//   checkpoint/    manifest.json + tensors.bin of the final parameters

#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "logitlab/data/corpus.hpp"
#include "logitlab/harness/config.hpp"
#include "logitlab/metrics/metrics.hpp"
#include "logitlab/model/model.hpp"

namespace logitlab::harness {

/// Steps excluded from timing medians while caches warm up.
inline constexpr std::size_t kWarmupTimingSteps = 10;

struct RunRecord {
    RunConfig config;
    std::filesystem::path run_dir;
    std::vector<metrics::MetricSample> samples;
    double init_loss = 0.0;
    double final_loss = 0.0;  // NaN when diverged
    bool diverged = false;
    std::int64_t steps_completed = 0;
    double mean_step_ms = 0.0;
    double median_step_ms = 0.0;  // excludes the first kWarmupTimingSteps steps
    std::vector<double> step_ms;
    std::uint64_t corpus_digest = 0;
};

/// Test loss (auxiliary terms excluded; capped logits under soft_cap), |mu|,
/// pooled logit statistics and B_ratio of the output table. `chunk` windows
/// are pushed through the model at a time.
metrics::MetricSample evaluate(model::Model<float>& model, const data::Batch& windows, std::size_t chunk,
                               const head::HeadStrategy& strategy);

RunRecord run_train(const RunConfig& config);
/// Uses an already loaded corpus; config.data_path is only recorded.
RunRecord run_train(const RunConfig& config, const data::Corpus& corpus);

/// Median of `values` after dropping the first `skip` entries; all entries
/// when fewer remain. 0 for an empty list.
double median_after(const std::vector<double>& values, std::size_t skip = kWarmupTimingSteps);

/// One metrics.jsonl line (no trailing newline); non-finite numbers become null.
std::string metrics_row_json(const metrics::MetricSample& sample);
metrics::MetricSample parse_metrics_row(const nlohmann::json& row);
std::vector<metrics::MetricSample> read_metrics(const std::filesystem::path& metrics_jsonl);

/// Digest of the config fields that determine a run's outputs (out_dir excluded).
std::string config_digest(const RunConfig& config);

/// True when `run_dir` holds a finished run of exactly `config` on the corpus
/// with `corpus_digest` and every recorded file digest still verifies.
bool run_is_complete(const std::filesystem::path& run_dir, const RunConfig& config, std::uint64_t corpus_digest);

/// Loads the summary of a completed run.
RunRecord read_run_summary(const std::filesystem::path& run_dir);

}  // namespace logitlab::harness
