// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "logitlab/harness/sweep.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "logitlab/data/corpus.hpp"
#include "logitlab/errors.hpp"
#include "logitlab/harness/train.hpp"

namespace logitlab::harness {

namespace fs = std::filesystem;

void SweepGrid::validate() const {
    if (strategies.empty() || etas.empty() || lambdas.empty() || tying.empty() || sizes.empty()) {
        throw ConfigError("every sweep axis needs at least one value");
    }
    for (const auto& s : sizes) {
        size_preset(s);
    }
}

void to_json(nlohmann::json& j, const SweepGrid& g) {
    nlohmann::json strategies = nlohmann::json::array();
    for (auto k : g.strategies) {
        strategies.push_back(head::to_string(k));
    }
    j = nlohmann::json{{"strategies", strategies}, {"etas", g.etas}, {"lambdas", g.lambdas},
                       {"tying", g.tying},         {"sizes", g.sizes}, {"base", g.base}};
}

void from_json(const nlohmann::json& j, SweepGrid& g) {
    try {
        g.strategies.clear();
        for (const auto& s : j.at("strategies")) {
            g.strategies.push_back(head::parse_head_kind(s.get<std::string>()));
        }
        g.etas = j.value("etas", g.etas);
        g.lambdas = j.value("lambdas", g.lambdas);
        g.tying = j.value("tying", g.tying);
        g.sizes = j.value("sizes", g.sizes);
        if (j.contains("base")) {
            g.base = j.at("base").get<RunConfig>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad sweep grid: ") + e.what());
    }
}

SweepGrid load_sweep_grid(const fs::path& path) {
    SweepGrid g;
    try {
        g = nlohmann::json::parse(read_text(path)).get<SweepGrid>();
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    }
    apply_env_overrides(g.base);
    return g;
}

std::string cell_id(const RunConfig& c) {
    std::string id = std::string(head::to_string(c.head.kind)) + "-" + c.size_tag + "-eta" + format_double(c.optim.peak_lr);
    if (c.head.uses_lambda()) {
        id += "-lam" + format_double(c.head.lambda);
    }
    id += c.model.weight_tying ? "-tied" : "-untied";
    return id;
}

std::vector<RunConfig> expand_grid(const SweepGrid& grid) {
    grid.validate();
    std::vector<RunConfig> cells;
    for (const auto& size : grid.sizes) {
        for (bool tied : grid.tying) {
            for (auto kind : grid.strategies) {
                head::HeadStrategy probe;
                probe.kind = kind;
                const std::vector<double> lambdas =
                    probe.uses_lambda() ? grid.lambdas : std::vector<double>{grid.base.head.lambda};
                for (double lambda : lambdas) {
                    for (double eta : grid.etas) {
                        RunConfig c = grid.base;
                        c.size_tag = size;
                        c.model = size_preset(size, grid.base.model);
                        c.model.weight_tying = tied;
                        c.head.kind = kind;
                        c.head.lambda = lambda;
                        c.optim.peak_lr = eta;
                        c.optim.min_lr = std::min(c.optim.min_lr, eta);
                        c.run_id = cell_id(c);
                        cells.push_back(std::move(c));
                    }
                }
            }
        }
    }
    return cells;
}

void write_sweep_csv(const fs::path& path, const std::vector<SweepRow>& rows) {
    std::ostringstream out;
    out << kSweepCsvHeader << "\n";
    for (const auto& r : rows) {
        out << r.strategy << ',' << r.size << ',' << format_double(r.eta) << ','
            << (std::isnan(r.lambda) ? std::string() : format_double(r.lambda)) << ',' << (r.tying ? "true" : "false")
            << ',' << format_double(r.final_loss) << ',' << (r.diverged ? "true" : "false") << ','
            << format_double(r.mean_step_ms) << "\n";
    }
    write_text(path, out.str());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) {
        out.push_back(field);
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

double parse_number(const std::string& s) {
    if (s.empty() || s == "nan") {
        return std::nan("");
    }
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) {
            throw DataError("trailing characters in number '" + s + "'");
        }
        return v;
    } catch (const std::invalid_argument&) {
        throw DataError("not a number: '" + s + "'");
    } catch (const std::out_of_range&) {
        return s.front() == '-' ? -HUGE_VAL : HUGE_VAL;
    }
}

bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1") {
        return true;
    }
    if (s == "false" || s == "0") {
        return false;
    }
    throw DataError("not a boolean: '" + s + "'");
}

}  // namespace

std::vector<SweepRow> read_sweep_csv(const fs::path& path) {
    std::istringstream in(read_text(path));
    std::string line;
    if (!std::getline(in, line) || line != kSweepCsvHeader) {
        throw DataError(path.string() + ": header must be '" + kSweepCsvHeader + "'");
    }
    std::vector<SweepRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const auto f = split_csv_line(line);
        if (f.size() != 8) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 8 fields, got " +
                            std::to_string(f.size()));
        }
        SweepRow r;
        r.strategy = f[0];
        r.size = f[1];
        r.eta = parse_number(f[2]);
        r.lambda = parse_number(f[3]);
        r.tying = parse_bool(f[4]);
        r.final_loss = parse_number(f[5]);
        r.diverged = parse_bool(f[6]);
        r.mean_step_ms = parse_number(f[7]);
        rows.push_back(std::move(r));
    }
    return rows;
}

SweepOutcome run_sweep(const SweepGrid& grid, const SweepOptions& options) {
    const std::vector<RunConfig> cells = expand_grid(grid);
    const fs::path dir = grid.base.out_dir;
    fs::create_directories(dir);
    write_text(dir / "grid.json", nlohmann::json(grid).dump(2) + "\n");
    const data::Corpus corpus =
        data::load_corpus(grid.base.data_path, grid.base.test_fraction, dir / "corpus_cache");

    struct Result {
        std::optional<SweepRow> row;
        std::optional<CellFailure> failure;
        bool reused = false;
    };
    std::vector<Result> results(cells.size());
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    auto log = [&](const std::string& msg) {
        if (options.log) {
            const std::lock_guard lock(log_mutex);
            options.log(msg);
        }
    };

    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            const RunConfig& c = cells[i];
            const fs::path run_dir = dir / c.run_id;
            try {
                RunRecord rec;
                if (run_is_complete(run_dir, c, corpus.digest)) {
                    rec = read_run_summary(run_dir);
                    results[i].reused = true;
                    log("reuse " + c.run_id);
                } else {
                    log("start " + c.run_id);
                    fs::remove(run_dir / "summary.json");
                    rec = run_train(c, corpus);
                    log("done  " + c.run_id + " final_loss=" + format_double(rec.final_loss) +
                        (rec.diverged ? " (diverged)" : ""));
                }
                SweepRow row;
                row.strategy = head::to_string(c.head.kind);
                row.size = c.size_tag;
                row.eta = c.optim.peak_lr;
                row.lambda = c.head.uses_lambda() ? c.head.lambda : std::nan("");
                row.tying = c.model.weight_tying;
                row.final_loss = rec.final_loss;
                row.diverged = rec.diverged;
                row.mean_step_ms = rec.mean_step_ms;
                results[i].row = row;
            } catch (const std::exception& e) {
                results[i].failure = CellFailure{c.run_id, e.what()};
                log("fail  " + c.run_id + ": " + e.what());
                try {
                    write_text(run_dir / "error.txt", std::string(e.what()) + "\n");
                } catch (const std::exception&) {
                }
            }
        }
    };

    const unsigned jobs = std::max(1u, options.jobs);
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < jobs; ++t) {
            pool.emplace_back(worker);
        }
        for (auto& t : pool) {
            t.join();
        }
    }

    SweepOutcome outcome;
    for (auto& r : results) {
        if (r.row) {
            outcome.rows.push_back(*r.row);
            (r.reused ? outcome.reused : outcome.ran) += 1;
        }
        if (r.failure) {
            outcome.failures.push_back(*r.failure);
        }
    }
    write_sweep_csv(dir / "sweep_summary.csv", outcome.rows);
    if (!outcome.failures.empty()) {
        std::ostringstream out;
        out << "run_id,error\n";
        for (const auto& f : outcome.failures) {
            std::string msg = f.error;
            for (char& ch : msg) {
                if (ch == ',' || ch == '\n') {
                    ch = ' ';
                }
            }
            out << f.run_id << ',' << msg << "\n";
        }
        write_text(dir / "sweep_failures.csv", out.str());
    } else {
        fs::remove(dir / "sweep_failures.csv");
    }
    return outcome;
}

}  // namespace logitlab::harness
