// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "logitlab/harness/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "logitlab/errors.hpp"
#include "logitlab/head/head.hpp"
#include "logitlab/model/checkpoint.hpp"
#include "logitlab/optim/optim.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif
#if defined(__SSE2__)
#include <pmmintrin.h>
#include <xmmintrin.h>
#endif

namespace logitlab::harness {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Denormal floats make step times data dependent; they are flushed to zero
// for the duration of a run.
class FlushDenormals {
public:
    FlushDenormals() {
#if defined(__SSE2__)
        saved_ = _mm_getcsr();
        _MM_SET_FLUSH_ZERO_MODE(_MM_FLUSH_ZERO_ON);
        _MM_SET_DENORMALS_ZERO_MODE(_MM_DENORMALS_ZERO_ON);
#endif
    }
    ~FlushDenormals() {
#if defined(__SSE2__)
        _mm_setcsr(saved_);
#endif
    }
    FlushDenormals(const FlushDenormals&) = delete;
    FlushDenormals& operator=(const FlushDenormals&) = delete;

private:
    unsigned saved_ = 0;
};

// Activations of a step are a few MB each; keeping freed blocks in the heap
// instead of returning them to the OS avoids refaulting the pages every step.
void keep_large_allocations() {
#if defined(__GLIBC__)
    static const bool once = [] {
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
        return true;
    }();
    (void)once;
#endif
}

std::vector<nn::Tensor<float>*> parameter_pointers(model::Model<float>& m) {
    std::vector<nn::Tensor<float>*> ps;
    for (auto& p : m.parameters()) {
        ps.push_back(&p.tensor);
    }
    return ps;
}

std::string file_digest(const fs::path& path) { return data::hex_digest(data::fnv1a64(read_text(path))); }

}  // namespace

double median_after(const std::vector<double>& values, std::size_t skip) {
    if (values.empty()) {
        return 0.0;
    }
    std::vector<double> v = values.size() > skip ? std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(skip), values.end())
                                                 : values;
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double upper = v[mid];
    if (v.size() % 2 == 1) {
        return upper;
    }
    const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

metrics::MetricSample evaluate(model::Model<float>& model, const data::Batch& windows, std::size_t chunk,
                               const head::HeadStrategy& strategy) {
    if (chunk == 0) {
        throw ContractError("evaluation chunk must be positive");
    }
    const std::vector<int> inputs = windows.inputs();
    const std::vector<int> targets = windows.targets();
    const std::size_t seq = windows.seq;
    metrics::LogitStatsAccumulator stats(strategy);
    double loss_sum = 0.0;
    for (std::size_t b0 = 0; b0 < windows.batch; b0 += chunk) {
        const std::size_t nb = std::min(chunk, windows.batch - b0);
        const std::span<const int> in(inputs.data() + b0 * seq, nb * seq);
        const std::span<const int> tg(targets.data() + b0 * seq, nb * seq);
        nn::Graph<float> g(false);
        const auto bound = model.bind(g);
        const nn::Var h = model.hidden_states(g, bound, in, nb, seq);
        const nn::Var raw = g.matmul_transposed(h, model.output_table_var(bound));
        const nn::Var logits =
            strategy.kind == head::HeadKind::soft_cap ? g.tanh_cap(raw, static_cast<float>(strategy.cap)) : raw;
        const nn::Var ce = g.cross_entropy(logits, tg);
        loss_sum += static_cast<double>(g.value(ce)[0]) * static_cast<double>(nb * seq);
        stats.add(std::span<const float>(g.value(raw).values()));
    }
    metrics::MetricSample s;
    s.test_loss = loss_sum / static_cast<double>(windows.batch * seq);
    const std::vector<float> mu = head::mean_embedding(model.output_table());
    double mu_sq = 0.0;
    for (float v : mu) {
        mu_sq += static_cast<double>(v) * static_cast<double>(v);
    }
    s.mu_norm = std::sqrt(mu_sq);
    const metrics::LogitStats ls = stats.result();
    s.logit_mean = ls.mean;
    s.logit_std = ls.std;
    s.logit_max_abs = ls.max_abs;
    s.logit_max_abs_raw = ls.max_abs_raw;
    s.b_ratio = model.output_table().all_finite() ? metrics::b_ratio(model.output_table()).b_ratio : kNaN;
    s.update_divergence();
    return s;
}

std::string metrics_row_json(const metrics::MetricSample& s) {
    const nlohmann::ordered_json row = {
        {"step", s.step},
        {"test_loss", number_or_null(s.test_loss)},
        {"lr", number_or_null(s.lr)},
        {"mu_norm", number_or_null(s.mu_norm)},
        {"logit_mean", number_or_null(s.logit_mean)},
        {"logit_std", number_or_null(s.logit_std)},
        {"logit_max_abs", number_or_null(s.logit_max_abs)},
        {"logit_max_abs_raw", number_or_null(s.logit_max_abs_raw)},
        {"b_ratio", number_or_null(s.b_ratio)},
        {"diverged", s.diverged},
        {"step_ms", number_or_null(s.step_ms)},
    };
    return row.dump();
}

metrics::MetricSample parse_metrics_row(const nlohmann::json& row) {
    metrics::MetricSample s;
    try {
        s.step = row.at("step").get<std::int64_t>();
        s.test_loss = number_from_json(row.at("test_loss"));
        s.lr = number_from_json(row.at("lr"));
        s.mu_norm = number_from_json(row.at("mu_norm"));
        s.logit_mean = number_from_json(row.at("logit_mean"));
        s.logit_std = number_from_json(row.at("logit_std"));
        s.logit_max_abs = number_from_json(row.at("logit_max_abs"));
        s.logit_max_abs_raw = row.contains("logit_max_abs_raw") ? number_from_json(row.at("logit_max_abs_raw"))
                                                                : s.logit_max_abs;
        s.b_ratio = number_from_json(row.at("b_ratio"));
        s.diverged = row.at("diverged").get<bool>();
        s.step_ms = number_from_json(row.at("step_ms"));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad metrics row: ") + e.what());
    }
    return s;
}

std::vector<metrics::MetricSample> read_metrics(const fs::path& path) {
    std::istringstream in(read_text(path));
    std::vector<metrics::MetricSample> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        try {
            rows.push_back(parse_metrics_row(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(path.string() + ": " + e.what());
        }
    }
    return rows;
}

std::string config_digest(const RunConfig& config) {
    nlohmann::json j = config;
    j.erase("out_dir");
    return data::hex_digest(data::fnv1a64(j.dump()));
}

RunRecord run_train(const RunConfig& config) {
    config.validate();
    const fs::path cache = fs::path(config.out_dir) / "corpus_cache";
    const data::Corpus corpus = data::load_corpus(config.data_path, config.test_fraction, cache);
    return run_train(config, corpus);
}

RunRecord run_train(const RunConfig& config, const data::Corpus& corpus) {
    config.validate();
    if (config.model.vocab_size < data::kByteVocab) {
        throw ConfigError("vocab_size " + std::to_string(config.model.vocab_size) +
                          " cannot hold the byte vocabulary of " + std::to_string(data::kByteVocab));
    }
    keep_large_allocations();
    const FlushDenormals flush;

    RunRecord rec;
    rec.config = config;
    rec.corpus_digest = corpus.digest;
    rec.run_dir = fs::path(config.out_dir) / config.run_id;
    fs::create_directories(rec.run_dir);
    write_text(rec.run_dir / "config.json", nlohmann::json(config).dump(2) + "\n");

    const std::size_t seq = config.model.seq_len;
    const data::Batch test = data::test_windows(corpus, config.metric_sample_size, seq);
    std::mt19937_64 rng(config.model.seed ^ 0x5851f42d4c957f2dULL);

    model::Model<float> m = model::Model<float>::init(config.model);
    const std::vector<nn::Tensor<float>*> params = parameter_pointers(m);
    optim::OptimState<float> state;
    const bool centering = config.head.kind == head::HeadKind::mu_center;
    if (centering) {
        head::mu_center_in_place(m.output_table());
    }

    auto eval_at = [&](std::int64_t step, std::size_t interval_begin) {
        metrics::MetricSample s = evaluate(m, test, config.batch_size, config.head);
        s.step = step;
        s.lr = optim::lr_at(config.optim, step);
        if (config.record_timing && interval_begin < rec.step_ms.size()) {
            std::size_t first = std::max(interval_begin, kWarmupTimingSteps);
            if (first >= rec.step_ms.size()) {
                first = interval_begin;  // the whole interval lies in the warm-up
            }
            s.step_ms = median_after({rec.step_ms.begin() + static_cast<std::ptrdiff_t>(first), rec.step_ms.end()}, 0);
        } else {
            s.step_ms = 0.0;
        }
        return s;
    };

    rec.samples.push_back(eval_at(0, 0));
    rec.init_loss = rec.samples.front().test_loss;
    std::size_t interval_begin = 0;
    bool stop = rec.samples.front().diverged;

    for (std::int64_t step = 0; step < config.optim.total_steps && !stop; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        const data::Batch batch = data::next_batch(corpus, rng, config.batch_size, seq);
        const std::vector<int> inputs = batch.inputs();
        const std::vector<int> targets = batch.targets();

        bool step_ok = true;
        {
            nn::Graph<float> g;
            const auto bound = m.bind(g);
            const nn::Var h = m.hidden_states(g, bound, inputs, batch.batch, seq);
            const head::HeadOutput<float> out =
                head::build_head_loss(g, m.output_table_var(bound), h, targets, config.head);
            if (!std::isfinite(g.value(out.loss)[0])) {
                step_ok = false;
            } else {
                m.zero_grad();
                g.backward(out.loss);
            }
        }
        if (step_ok) {
            const optim::ClipResult clip = optim::clip_global_norm<float>(params, config.optim.clip_norm);
            step_ok = clip.finite;
        }
        if (!step_ok) {
            // The parameters after `step` updates produce a non-finite loss or gradient.
            metrics::MetricSample s = eval_at(step, interval_begin);
            s.diverged = true;
            if (rec.samples.back().step == step) {
                rec.samples.back() = s;
            } else {
                rec.samples.push_back(s);
            }
            rec.diverged = true;
            break;
        }
        optim::adamw_step<float>(params, state, optim::lr_at(config.optim, step + 1), config.optim);
        if (centering) {
            head::mu_center_in_place(m.output_table());
        }
        const auto t1 = std::chrono::steady_clock::now();
        rec.step_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        rec.steps_completed = step + 1;

        if (rec.steps_completed % config.eval_every == 0) {
            metrics::MetricSample s = eval_at(rec.steps_completed, interval_begin);
            interval_begin = rec.step_ms.size();
            rec.samples.push_back(s);
            if (s.diverged) {
                rec.diverged = true;
                stop = true;
            }
        }
    }
    if (rec.samples.front().diverged) {
        rec.diverged = true;
    }
    rec.final_loss = rec.diverged ? kNaN : rec.samples.back().test_loss;
    if (!rec.step_ms.empty()) {
        rec.mean_step_ms =
            std::accumulate(rec.step_ms.begin(), rec.step_ms.end(), 0.0) / static_cast<double>(rec.step_ms.size());
    }
    rec.median_step_ms = median_after(rec.step_ms);
    if (!config.record_timing) {
        rec.mean_step_ms = rec.median_step_ms = 0.0;
        std::fill(rec.step_ms.begin(), rec.step_ms.end(), 0.0);
    }

    std::string metrics_text;
    for (const auto& s : rec.samples) {
        metrics_text += metrics_row_json(s);
        metrics_text += '\n';
    }
    write_text(rec.run_dir / "metrics.jsonl", metrics_text);
    const nlohmann::ordered_json timing = {{"warmup_steps_excluded", kWarmupTimingSteps},
                                           {"mean_step_ms", rec.mean_step_ms},
                                           {"median_step_ms", rec.median_step_ms},
                                           {"step_ms", rec.step_ms}};
    write_text(rec.run_dir / "timing.json", timing.dump() + "\n");
    if (config.save_checkpoint) {
        model::save_checkpoint(rec.run_dir / "checkpoint", m, rec.steps_completed, nlohmann::json(config));
    }

    nlohmann::ordered_json summary = {
        {"run_id", config.run_id},
        {"strategy", head::to_string(config.head.kind)},
        {"size", config.size_tag},
        {"eta", config.optim.peak_lr},
        {"lambda", config.head.uses_lambda() ? nlohmann::json(config.head.lambda) : nlohmann::json(nullptr)},
        {"tying", config.model.weight_tying},
        {"init_loss", number_or_null(rec.init_loss)},
        {"final_loss", number_or_null(rec.final_loss)},
        {"diverged", rec.diverged},
        {"steps_completed", rec.steps_completed},
        {"mean_step_ms", rec.mean_step_ms},
        {"median_step_ms", rec.median_step_ms},
        {"config_digest", config_digest(config)},
        {"corpus_digest", data::hex_digest(corpus.digest)},
        {"metrics_digest", file_digest(rec.run_dir / "metrics.jsonl")},
        {"timing_digest", file_digest(rec.run_dir / "timing.json")},
        {"status", "complete"},
    };
    write_text(rec.run_dir / "summary.json", summary.dump(2) + "\n");
    return rec;
}

bool run_is_complete(const fs::path& run_dir, const RunConfig& config, std::uint64_t corpus_digest) {
    try {
        const auto summary = nlohmann::json::parse(read_text(run_dir / "summary.json"));
        if (summary.value("status", "") != "complete" || summary.value("config_digest", "") != config_digest(config) ||
            summary.value("corpus_digest", "") != data::hex_digest(corpus_digest) ||
            summary.value("metrics_digest", "") != file_digest(run_dir / "metrics.jsonl") ||
            summary.value("timing_digest", "") != file_digest(run_dir / "timing.json")) {
            return false;
        }
        if (config.save_checkpoint) {
            model::load_checkpoint(run_dir / "checkpoint");
        }
        return true;
    } catch (const std::exception&) {
        return false;
    }
}

RunRecord read_run_summary(const fs::path& run_dir) {
    RunRecord rec;
    rec.run_dir = run_dir;
    nlohmann::json summary;
    try {
        rec.config = nlohmann::json::parse(read_text(run_dir / "config.json")).get<RunConfig>();
        summary = nlohmann::json::parse(read_text(run_dir / "summary.json"));
        rec.init_loss = number_from_json(summary.at("init_loss"));
        rec.final_loss = number_from_json(summary.at("final_loss"));
        rec.diverged = summary.at("diverged").get<bool>();
        rec.steps_completed = summary.at("steps_completed").get<std::int64_t>();
        rec.mean_step_ms = summary.at("mean_step_ms").get<double>();
        rec.median_step_ms = summary.at("median_step_ms").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(run_dir.string() + ": bad run summary: " + e.what());
    }
    rec.samples = read_metrics(run_dir / "metrics.jsonl");
    const auto timing = nlohmann::json::parse(read_text(run_dir / "timing.json"));
    rec.step_ms = timing.at("step_ms").get<std::vector<double>>();
    return rec;
}

}  // namespace logitlab::harness
