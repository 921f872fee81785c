// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "logitlab/errors.hpp"
#include "logitlab/harness/config.hpp"
#include "logitlab/harness/report.hpp"
#include "logitlab/harness/sweep.hpp"
#include "logitlab/harness/train.hpp"
#include "logitlab/model/checkpoint.hpp"

using namespace logitlab;
using namespace logitlab::harness;
namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
const fs::path kFixture = fs::path(LOGITLAB_FIXTURE_DIR) / "tiny_corpus.txt";
const fs::path kTmp = fs::path(LOGITLAB_TEST_TMP) / "harness";

RunConfig tiny_run(const std::string& name, head::HeadKind kind = head::HeadKind::baseline, double eta = 3e-3) {
    RunConfig c;
    c.data_path = kFixture.string();
    c.model = size_preset("tiny");
    c.model.seq_len = 32;
    c.model.seed = 11;
    c.optim.peak_lr = eta;
    c.optim.warmup_steps = 2;
    c.optim.total_steps = 10;
    c.head.kind = kind;
    c.batch_size = 2;
    c.eval_every = 5;
    c.metric_sample_size = 4;
    c.size_tag = "tiny";
    c.out_dir = (kTmp / name).string();
    c.run_id = "run";
    fs::remove_all(c.out_dir);
    return c;
}

std::vector<std::string> lines_of(const fs::path& path) {
    std::istringstream in(read_text(path));
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        lines.push_back(line);
    }
    return lines;
}

void write_metrics_row(const fs::path& run_dir, double step0_loss) {
    fs::create_directories(run_dir);
    metrics::MetricSample s;
    s.step = 0;
    s.test_loss = step0_loss;
    write_text(run_dir / "metrics.jsonl", metrics_row_json(s) + "\n");
}

}  // namespace

TEST_SUITE("config") {
    TEST_CASE("json round trip and defaults for missing keys") {
        RunConfig c = tiny_run("config");
        c.head = head::HeadStrategy{head::HeadKind::mu_loss, 0.1, 30.0};
        c.model.weight_tying = true;
        c.record_timing = false;
        const RunConfig back = nlohmann::json(c).get<RunConfig>();
        CHECK(nlohmann::json(back) == nlohmann::json(c));
        CHECK(back.model == c.model);

        const RunConfig partial = nlohmann::json::parse(R"({"optim": {"peak_lr": 0.01}, "head": {"strategy": "soft_cap"}})")
                                      .get<RunConfig>();
        CHECK(partial.optim.peak_lr == 0.01);
        CHECK(partial.optim.total_steps == 2000);
        CHECK(partial.head.kind == head::HeadKind::soft_cap);
        CHECK(partial.head.cap == 30.0);
        CHECK(partial.model == model::ModelConfig{});
    }

    TEST_CASE("validation") {
        RunConfig c = tiny_run("config");
        CHECK_NOTHROW(c.validate());
        c.eval_every = 3;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = tiny_run("config");
        c.head.cap = -1.0;
        c.head.kind = head::HeadKind::soft_cap;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        CHECK_THROWS_AS(nlohmann::json::parse(R"({"head": {"strategy": "bogus"}})").get<RunConfig>(), ConfigError);
        CHECK_THROWS_AS(size_preset("huge"), ConfigError);
    }

    TEST_CASE("LOGITLAB_OUT replaces out_dir") {
        const fs::path file = kTmp / "config.json";
        fs::create_directories(kTmp);
        write_text(file, R"({"out_dir": "from_file"})");
        ::unsetenv("LOGITLAB_OUT");
        CHECK(load_run_config(file).out_dir == "from_file");
        ::setenv("LOGITLAB_OUT", "from_env", 1);
        CHECK(load_run_config(file).out_dir == "from_env");
        ::unsetenv("LOGITLAB_OUT");
        CHECK_THROWS_AS(load_run_config(kTmp / "absent.json"), IoError);
    }

    TEST_CASE("grids") {
        CHECK(default_eta_grid() == std::vector<double>{3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1});
        CHECK(default_lambda_grid() == std::vector<double>{1e-7, 1e-4, 1e-1, 1e2});
        CHECK(size_preset("small") == model::ModelConfig{});
        const auto medium = size_preset("medium");
        CHECK(medium.n_layers == 6);
        CHECK(medium.hidden_dim == 96);
        CHECK(medium.ffn_dim == 384);
    }

    TEST_CASE("number formatting") {
        CHECK(format_double(0.1) == "0.1");
        CHECK(format_double(kNaN) == "nan");
        CHECK(number_or_null(kNaN).is_null());
        CHECK(std::isnan(number_from_json(nlohmann::json(nullptr))));
    }
}

TEST_SUITE("run_train") {
    TEST_CASE("writes every artifact and a consistent summary") {
        const RunConfig c = tiny_run("artifacts");
        const RunRecord rec = run_train(c);
        const fs::path dir = fs::path(c.out_dir) / "run";
        for (const char* f : {"config.json", "metrics.jsonl", "timing.json", "summary.json"}) {
            CHECK(fs::exists(dir / f));
        }
        CHECK(fs::exists(dir / "checkpoint" / model::kManifestFile));
        CHECK(rec.steps_completed == 10);
        CHECK_FALSE(rec.diverged);
        REQUIRE(rec.samples.size() == 3);
        CHECK(rec.samples[0].step == 0);
        CHECK(rec.samples[2].step == 10);
        CHECK(rec.init_loss == rec.samples[0].test_loss);
        CHECK(std::abs(rec.init_loss - std::log(257.0)) < 0.5);
        CHECK(rec.final_loss == rec.samples[2].test_loss);
        CHECK(rec.samples[1].lr == optim::lr_at(c.optim, 5));

        const auto lines = lines_of(dir / "metrics.jsonl");
        REQUIRE(lines.size() == 3);
        const auto row = nlohmann::json::parse(lines[1]);
        for (const char* key : {"step", "test_loss", "lr", "mu_norm", "logit_mean", "logit_std", "logit_max_abs",
                                "b_ratio", "diverged", "step_ms"}) {
            CHECK(row.contains(key));
        }
        CHECK(row["step"].is_number_integer());
        CHECK(row["diverged"].is_boolean());
        const auto parsed = read_metrics(dir / "metrics.jsonl");
        CHECK(parsed[1].test_loss == rec.samples[1].test_loss);

        const auto summary = nlohmann::json::parse(read_text(dir / "summary.json"));
        CHECK(summary["status"] == "complete");
        CHECK(summary["strategy"] == "baseline");
        CHECK(summary["lambda"].is_null());
        CHECK(summary["final_loss"].get<double>() == rec.final_loss);
        const auto timing = nlohmann::json::parse(read_text(dir / "timing.json"));
        CHECK(timing["step_ms"].size() == 10);

        const auto corpus = data::load_corpus(kFixture);
        CHECK(run_is_complete(dir, c, corpus.digest));
        RunConfig other = c;
        other.optim.peak_lr = 1e-2;
        CHECK_FALSE(run_is_complete(dir, other, corpus.digest));
        CHECK_FALSE(run_is_complete(dir, c, corpus.digest + 1));
        write_text(dir / "metrics.jsonl", read_text(dir / "metrics.jsonl") + "\n");
        CHECK_FALSE(run_is_complete(dir, c, corpus.digest));

        const auto back = read_run_summary(dir);
        CHECK(back.final_loss == rec.final_loss);
        CHECK(back.steps_completed == 10);
    }

    TEST_CASE("identical runs without timing write byte-identical metrics") {
        RunConfig a = tiny_run("repeat_a"), b = tiny_run("repeat_b");
        a.record_timing = b.record_timing = false;
        run_train(a);
        run_train(b);
        const auto ma = read_text(fs::path(a.out_dir) / "run" / "metrics.jsonl");
        CHECK(ma == read_text(fs::path(b.out_dir) / "run" / "metrics.jsonl"));
        CHECK(read_text(fs::path(a.out_dir) / "run" / "checkpoint" / model::kPayloadFile) ==
              read_text(fs::path(b.out_dir) / "run" / "checkpoint" / model::kPayloadFile));
        RunConfig timed = tiny_run("repeat_timed");
        const auto rec = run_train(timed);
        const auto plain = read_metrics(fs::path(a.out_dir) / "run" / "metrics.jsonl");
        for (std::size_t i = 0; i < plain.size(); ++i) {
            CHECK(rec.samples[i].test_loss == plain[i].test_loss);
        }
    }

    TEST_CASE("mu-centering keeps every logged mean embedding norm below 1e-5") {
        RunConfig c = tiny_run("centered", head::HeadKind::mu_center, 1e-2);
        c.eval_every = 1;
        const auto rec = run_train(c);
        REQUIRE(rec.samples.size() == 11);
        for (const auto& s : rec.samples) {
            CHECK(s.mu_norm <= 1e-5);
        }
        RunConfig b = tiny_run("uncentered", head::HeadKind::baseline, 1e-2);
        CHECK(run_train(b).samples.back().mu_norm > 1e-3);
    }

    TEST_CASE("soft-capped runs log capped and raw maxima") {
        RunConfig c = tiny_run("capped", head::HeadKind::soft_cap, 1e-2);
        c.head.cap = 0.5;
        const auto rec = run_train(c);
        for (const auto& s : rec.samples) {
            CHECK(s.logit_max_abs < 0.5);
            CHECK(s.logit_max_abs_raw >= s.logit_max_abs);
        }
    }

    TEST_CASE("a non-finite training loss stops the run as diverged") {
        RunConfig c = tiny_run("diverged", head::HeadKind::z_loss);
        c.head.lambda = 1e38;
        const auto rec = run_train(c);
        CHECK(rec.diverged);
        CHECK(rec.steps_completed == 0);
        CHECK(std::isnan(rec.final_loss));
        REQUIRE(rec.samples.size() == 1);
        CHECK(rec.samples[0].diverged);
        const auto summary = nlohmann::json::parse(read_text(fs::path(c.out_dir) / "run" / "summary.json"));
        CHECK(summary["diverged"] == true);
        CHECK(summary["final_loss"].is_null());
    }

    TEST_CASE("configuration errors surface before any work") {
        RunConfig c = tiny_run("bad");
        c.model.vocab_size = 100;
        CHECK_THROWS_AS(run_train(c), ConfigError);
        c = tiny_run("bad");
        c.data_path = (kTmp / "missing.txt").string();
        CHECK_THROWS_AS(run_train(c), DataError);
    }
}

TEST_SUITE("sweep") {
    TEST_CASE("cell ids and grid expansion") {
        SweepGrid g;
        g.strategies = {head::HeadKind::baseline, head::HeadKind::mu_loss};
        g.etas = {1e-3, 1e-2};
        g.lambdas = {1e-4, 1e-1};
        g.tying = {false, true};
        const auto cells = expand_grid(g);
        CHECK(cells.size() == 2 * (2 + 4));
        std::set<std::string> ids;
        for (const auto& c : cells) {
            ids.insert(c.run_id);
        }
        CHECK(ids.size() == cells.size());
        CHECK(cells[0].run_id == "baseline-small-eta0.001-untied");
        CHECK(ids.count("mu_loss-small-eta0.01-lam1e-04-tied"));
        g.etas.clear();
        CHECK_THROWS_AS(expand_grid(g), ConfigError);
    }

    TEST_CASE("summary csv round trip") {
        const std::vector<SweepRow> rows{{"baseline", "small", 1e-3, kNaN, false, 3.25, false, 110.5},
                                         {"z_loss", "tiny", 0.3, 1e-4, true, kNaN, true, 90.0}};
        const fs::path p = kTmp / "rows.csv";
        fs::create_directories(kTmp);
        write_sweep_csv(p, rows);
        CHECK(lines_of(p)[0] == kSweepCsvHeader);
        CHECK(lines_of(p)[1] == "baseline,small,0.001,,false,3.25,false,110.5");
        const auto back = read_sweep_csv(p);
        REQUIRE(back.size() == 2);
        CHECK(std::isnan(back[0].lambda));
        CHECK(back[1].lambda == 1e-4);
        CHECK(back[1].diverged);
        CHECK(std::isnan(back[1].final_loss));
    }

    TEST_CASE("a one-cell sweep reports the run summary and resumes from its outputs") {
        SweepGrid g;
        g.base = tiny_run("sweep1");
        g.sizes = {"tiny"};
        g.base.model.seq_len = 32;
        g.strategies = {head::HeadKind::mu_loss};
        g.etas = {3e-3};
        const SweepOutcome first = run_sweep(g);
        REQUIRE(first.rows.size() == 1);
        CHECK(first.ran == 1);
        const auto cell = expand_grid(g)[0];
        const auto rec = read_run_summary(fs::path(g.base.out_dir) / cell.run_id);
        CHECK(first.rows[0].final_loss == rec.final_loss);
        CHECK(first.rows[0].diverged == rec.diverged);
        CHECK(first.rows[0].mean_step_ms == rec.mean_step_ms);
        CHECK(first.rows[0].lambda == 1e-4);
        CHECK(fs::exists(fs::path(g.base.out_dir) / "grid.json"));
        CHECK(read_sweep_csv(fs::path(g.base.out_dir) / "sweep_summary.csv").size() == 1);

        const SweepOutcome second = run_sweep(g);
        CHECK(second.ran == 0);
        CHECK(second.reused == 1);
        CHECK(second.rows[0].final_loss == first.rows[0].final_loss);

        fs::remove(fs::path(g.base.out_dir) / cell.run_id / "timing.json");
        const SweepOutcome third = run_sweep(g);
        CHECK(third.ran == 1);
        CHECK(third.rows[0].final_loss == first.rows[0].final_loss);
    }

    TEST_CASE("a failing cell is recorded and the others finish") {
        SweepGrid g;
        g.base = tiny_run("sweep_fail");
        g.sizes = {"tiny"};
        g.base.model.seq_len = 600;  // longer than the fixture's test split
        g.strategies = {head::HeadKind::baseline};
        g.etas = {1e-3};
        const SweepOutcome out = run_sweep(g);
        CHECK(out.rows.empty());
        REQUIRE(out.failures.size() == 1);
        CHECK(fs::exists(fs::path(g.base.out_dir) / "sweep_failures.csv"));
    }
}

TEST_SUITE("analyze") {
    TEST_CASE("hand-built sweep directory") {
        const fs::path dir = kTmp / "analyze";
        fs::remove_all(dir);
        std::vector<SweepRow> rows;
        const std::vector<double> etas{1e-3, 1e-2, 1e-1};
        const std::vector<double> base_losses{3.0, 3.2, kNaN};
        for (std::size_t i = 0; i < 3; ++i) {
            rows.push_back({"baseline", "small", etas[i], kNaN, false, base_losses[i], std::isnan(base_losses[i]),
                            100.0});
            rows.push_back({"mu_center", "small", etas[i], kNaN, false, 2.5, false, 100.0});
            if (i < 2) {
                rows.push_back({"soft_cap", "small", etas[i], kNaN, false, 2.9, false, 100.0});
            }
        }
        write_sweep_csv(dir / "sweep_summary.csv", rows);
        for (const auto& r : rows) {
            RunConfig c;
            c.head.kind = head::parse_head_kind(r.strategy);
            c.optim.peak_lr = r.eta;
            write_metrics_row(dir / cell_id(c), 5.0);
        }
        const auto report = analyze(dir);
        REQUIRE(report.lrs.size() == 3);
        std::map<std::string, LrsRow> lrs;
        for (const auto& r : report.lrs) {
            lrs[r.key.strategy] = r;
        }
        CHECK(std::abs(lrs["baseline"].lrs - 0.73333) <= 1e-5);
        CHECK(lrs["baseline"].lrs == metrics::lrs({etas, base_losses, 5.0}));
        CHECK(lrs["baseline"].init_loss == 5.0);
        CHECK(lrs["mu_center"].lrs == 0.0);
        CHECK(std::isnan(lrs["soft_cap"].lrs));
        CHECK(lrs["soft_cap"].missing_etas == std::vector<double>{1e-1});
        REQUIRE(report.missing_runs.size() == 1);
        CHECK(report.missing_runs[0] == "soft_cap-small-eta0.1-untied");

        for (const auto& ov : report.overhead) {
            if (ov.key.strategy == "baseline") {
                CHECK(ov.overhead_pct == 0.0);
            }
        }
        const auto lrs_lines = lines_of(dir / "lrs.csv");
        CHECK(lrs_lines[0] == "strategy,size,tying,lambda,lrs,init_loss,n_eta,missing_etas");
        bool saw_gap = false;
        for (const auto& line : lrs_lines) {
            saw_gap |= line.starts_with("soft_cap") && line.find(",gap,") != std::string::npos;
        }
        CHECK(saw_gap);
        CHECK(fs::exists(dir / "optimal_loss.csv"));
        CHECK(fs::exists(dir / "overhead.csv"));
        CHECK(lines_of(dir / "missing_runs.txt").size() == 1);
        std::map<std::string, OptimalLossRow> opt;
        for (const auto& r : report.optimal_loss) {
            opt[r.key.strategy] = r;
        }
        CHECK(opt["baseline"].optimal_loss == 3.0);
        CHECK(opt["baseline"].best_eta == 1e-3);
    }

    TEST_CASE("missing summary is an error") {
        CHECK_THROWS(analyze(kTmp / "nothing_here"));
    }
}

TEST_SUITE("bratio_report and curves") {
    TEST_CASE("centered checkpoint gives 1, Fig. 2 table gives 0.8125, corrupt checkpoint is unreadable") {
        const fs::path dir = kTmp / "bratio";
        fs::remove_all(dir);
        RunConfig c = tiny_run("bratio_run", head::HeadKind::mu_center, 1e-2);
        c.out_dir = dir.string();
        c.run_id = "centered";
        run_train(c);

        model::ModelConfig mc;
        mc.vocab_size = 3;
        mc.hidden_dim = 2;
        mc.n_heads = 1;
        mc.ffn_dim = 4;
        mc.n_layers = 1;
        auto m = model::Model<float>::init(mc);
        const double mu = std::sqrt(4.9), lo = (4.9 - 7.8) / mu, hi = (4.9 + 4.7) / mu;
        const std::vector<double> table{lo, 1.0, hi, -2.0, 3.0 * mu - lo - hi, 1.0};
        for (std::size_t i = 0; i < 6; ++i) {
            m.output_table()[i] = static_cast<float>(table[i]);
        }
        model::save_checkpoint(dir / "fig2" / "checkpoint", m, 0, nlohmann::json::object());
        model::save_checkpoint(dir / "broken" / "checkpoint", m, 0, nlohmann::json::object());
        std::filesystem::resize_file(dir / "broken" / "checkpoint" / model::kPayloadFile, 3);

        const auto rows = bratio_report(dir);
        REQUIRE(rows.size() == 3);
        std::map<std::string, BRatioRow> by_id;
        for (const auto& r : rows) {
            by_id[r.run_id] = r;
        }
        CHECK(by_id["centered"].status == "ok");
        CHECK(std::abs(by_id["centered"].record.b_ratio - 1.0) <= 1e-3);
        CHECK(by_id["centered"].strategy == "mu_center");
        CHECK(by_id["fig2"].status == "ok");
        CHECK(std::abs(by_id["fig2"].record.b_ratio - 0.8125) <= 1e-5);
        CHECK(by_id["broken"].status.starts_with("unreadable"));
        CHECK(lines_of(dir / "bratio.csv").size() == 4);
    }

    TEST_CASE("curves") {
        const fs::path dir = kTmp / "curves";
        fs::remove_all(dir);
        RunConfig c = tiny_run("curves_run");
        c.out_dir = dir.string();
        run_train(c);
        CHECK(write_curves(dir) == 1);
        CHECK(lines_of(dir / "curves.csv").size() == 1 + 3);
        const auto z1 = lines_of(dir / "zloss_1d.csv");
        CHECK(z1.size() == 1 + 3 * 401);
        CHECK(z1[1] == "0,-10,100");
        CHECK(lines_of(dir / "zloss_2d.csv").size() == 1 + 101 * 101);
    }
}
