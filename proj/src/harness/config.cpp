// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "logitlab/harness/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>

#include "logitlab/errors.hpp"
#include "logitlab/model/checkpoint.hpp"

namespace logitlab::harness {

namespace fs = std::filesystem;

void RunConfig::validate() const {
    model.validate();
    optim.validate();
    head.validate();
    if (batch_size == 0) {
        throw ConfigError("batch_size must be at least 1");
    }
    if (metric_sample_size == 0) {
        throw ConfigError("metric_sample_size must be at least 1");
    }
    if (eval_every <= 0 || optim.total_steps % eval_every != 0) {
        throw ConfigError("eval_every (" + std::to_string(eval_every) + ") must divide total_steps (" +
                          std::to_string(optim.total_steps) + ")");
    }
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw ConfigError("test_fraction must lie in (0, 1)");
    }
    if (run_id.empty() || run_id.find('/') != std::string::npos) {
        throw ConfigError("run_id must be a non-empty name without '/'");
    }
}

void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{
        {"model", c.model},
        {"optim",
         {{"peak_lr", c.optim.peak_lr},
          {"beta1", c.optim.beta1},
          {"beta2", c.optim.beta2},
          {"eps", c.optim.eps},
          {"weight_decay", c.optim.weight_decay},
          {"clip_norm", c.optim.clip_norm},
          {"warmup_steps", c.optim.warmup_steps},
          {"total_steps", c.optim.total_steps},
          {"min_lr", c.optim.min_lr}}},
        {"head", {{"strategy", head::to_string(c.head.kind)}, {"lambda", c.head.lambda}, {"cap", c.head.cap}}},
        {"data_path", c.data_path},
        {"batch_size", c.batch_size},
        {"eval_every", c.eval_every},
        {"metric_sample_size", c.metric_sample_size},
        {"test_fraction", c.test_fraction},
        {"out_dir", c.out_dir},
        {"run_id", c.run_id},
        {"size_tag", c.size_tag},
        {"record_timing", c.record_timing},
        {"save_checkpoint", c.save_checkpoint},
    };
}

void from_json(const nlohmann::json& j, RunConfig& c) {
    try {
        if (j.contains("model")) {
            c.model = j.at("model").get<model::ModelConfig>();
        }
        if (j.contains("optim")) {
            const auto& o = j.at("optim");
            const optim::OptimConfig d = c.optim;
            c.optim.peak_lr = o.value("peak_lr", d.peak_lr);
            c.optim.beta1 = o.value("beta1", d.beta1);
            c.optim.beta2 = o.value("beta2", d.beta2);
            c.optim.eps = o.value("eps", d.eps);
            c.optim.weight_decay = o.value("weight_decay", d.weight_decay);
            c.optim.clip_norm = o.value("clip_norm", d.clip_norm);
            c.optim.warmup_steps = o.value("warmup_steps", d.warmup_steps);
            c.optim.total_steps = o.value("total_steps", d.total_steps);
            c.optim.min_lr = o.value("min_lr", d.min_lr);
        }
        if (j.contains("head")) {
            const auto& h = j.at("head");
            if (h.contains("strategy")) {
                c.head.kind = head::parse_head_kind(h.at("strategy").get<std::string>());
            }
            c.head.lambda = h.value("lambda", c.head.lambda);
            c.head.cap = h.value("cap", c.head.cap);
        }
        c.data_path = j.value("data_path", c.data_path);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.eval_every = j.value("eval_every", c.eval_every);
        c.metric_sample_size = j.value("metric_sample_size", c.metric_sample_size);
        c.test_fraction = j.value("test_fraction", c.test_fraction);
        c.out_dir = j.value("out_dir", c.out_dir);
        c.run_id = j.value("run_id", c.run_id);
        c.size_tag = j.value("size_tag", c.size_tag);
        c.record_timing = j.value("record_timing", c.record_timing);
        c.save_checkpoint = j.value("save_checkpoint", c.save_checkpoint);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad run config: ") + e.what());
    }
}

void apply_env_overrides(RunConfig& config) {
    if (const char* out = std::getenv("LOGITLAB_OUT"); out != nullptr && *out != '\0') {
        config.out_dir = out;
    }
}

RunConfig load_run_config(const fs::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    }
    RunConfig c = j.get<RunConfig>();
    apply_env_overrides(c);
    return c;
}

model::ModelConfig size_preset(const std::string& tag, const model::ModelConfig& base) {
    model::ModelConfig c = base;
    if (tag == "tiny") {
        c.n_layers = 2;
        c.hidden_dim = 32;
    } else if (tag == "small") {
        c.n_layers = 4;
        c.hidden_dim = 64;
    } else if (tag == "medium") {
        c.n_layers = 6;
        c.hidden_dim = 96;
    } else {
        throw ConfigError("unknown size tag '" + tag + "' (expected tiny, small or medium)");
    }
    c.n_heads = 4;
    c.ffn_dim = 4 * c.hidden_dim;
    return c;
}

std::vector<double> default_eta_grid() { return {3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1}; }

std::vector<double> default_lambda_grid() { return {1e-7, 1e-4, 1e-1, 1e2}; }

nlohmann::json number_or_null(double value) {
    return std::isfinite(value) ? nlohmann::json(value) : nlohmann::json(nullptr);
}

double number_from_json(const nlohmann::json& value) {
    return value.is_number() ? value.get<double>() : std::nan("");
}

std::string format_double(double value) {
    if (std::isnan(value)) {
        return "nan";
    }
    if (std::isinf(value)) {
        return value > 0 ? "inf" : "-inf";
    }
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return {buf, res.ptr};
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << text;
        if (!out) {
            throw IoError("cannot write " + tmp.string());
        }
    }
    fs::rename(tmp, path);
}

}  // namespace logitlab::harness
