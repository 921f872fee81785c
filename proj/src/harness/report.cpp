// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "logitlab/harness/report.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>
#include <sstream>

#include "logitlab/errors.hpp"
#include "logitlab/harness/sweep.hpp"
#include "logitlab/harness/train.hpp"
#include "logitlab/head/head.hpp"
#include "logitlab/model/checkpoint.hpp"
#include "logitlab/nn/functional.hpp"

namespace logitlab::harness {

namespace fs = std::filesystem;

std::string GroupKey::lambda_text() const { return std::isnan(lambda) ? std::string() : format_double(lambda); }

bool operator<(const GroupKey& a, const GroupKey& b) {
    return std::make_tuple(a.size, a.tying, a.strategy, a.lambda_text()) <
           std::make_tuple(b.size, b.tying, b.strategy, b.lambda_text());
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

RunConfig cell_config(const SweepRow& r) {
    RunConfig c;
    c.head.kind = head::parse_head_kind(r.strategy);
    if (c.head.uses_lambda()) {
        c.head.lambda = r.lambda;
    }
    c.size_tag = r.size;
    c.optim.peak_lr = r.eta;
    c.model.weight_tying = r.tying;
    return c;
}

GroupKey group_of(const RunConfig& c) {
    return {std::string(head::to_string(c.head.kind)), c.size_tag, c.model.weight_tying,
            c.head.uses_lambda() ? c.head.lambda : kNaN};
}

double step0_loss(const fs::path& run_dir) {
    try {
        for (const auto& s : read_metrics(run_dir / "metrics.jsonl")) {
            if (s.step == 0) {
                return s.test_loss;
            }
        }
    } catch (const std::exception&) {
    }
    return kNaN;
}

double cell_median_ms(const fs::path& run_dir, double fallback) {
    try {
        const auto timing = nlohmann::json::parse(read_text(run_dir / "timing.json"));
        const auto steps = timing.at("step_ms").get<std::vector<double>>();
        if (!steps.empty()) {
            return median_after(steps);
        }
    } catch (const std::exception&) {
    }
    return fallback;
}

std::string join_etas(const std::vector<double>& etas) {
    std::string out;
    for (double e : etas) {
        out += (out.empty() ? "" : ";") + format_double(e);
    }
    return out;
}

std::string cell_or_gap(double v) { return std::isnan(v) ? std::string("gap") : format_double(v); }

std::string key_columns(const GroupKey& k) {
    return k.strategy + "," + k.size + "," + (k.tying ? "true" : "false") + "," + k.lambda_text();
}

struct Cell {
    SweepRow row;
    double init_loss = kNaN;
    double median_ms = kNaN;
};

}  // namespace

AnalysisReport analyze(const fs::path& dir) {
    const std::vector<SweepRow> rows = read_sweep_csv(dir / "sweep_summary.csv");

    std::map<GroupKey, std::map<double, Cell>> groups;
    std::set<std::string> found_ids;
    for (const auto& r : rows) {
        const RunConfig c = cell_config(r);
        const fs::path run_dir = dir / cell_id(c);
        found_ids.insert(cell_id(c));
        Cell cell{r, step0_loss(run_dir), cell_median_ms(run_dir, r.mean_step_ms)};
        groups[group_of(c)][r.eta] = cell;
    }

    // Expected etas per group.
    std::map<GroupKey, std::set<double>> expected;
    AnalysisReport report;
    if (fs::exists(dir / "grid.json")) {
        const SweepGrid grid = nlohmann::json::parse(read_text(dir / "grid.json")).get<SweepGrid>();
        for (const auto& c : expand_grid(grid)) {
            expected[group_of(c)].insert(c.optim.peak_lr);
            if (!found_ids.count(c.run_id)) {
                report.missing_runs.push_back(c.run_id);
            }
        }
    } else {
        std::map<std::pair<std::string, bool>, std::set<double>> seen;
        for (const auto& r : rows) {
            seen[{r.size, r.tying}].insert(r.eta);
        }
        for (const auto& [key, cells] : groups) {
            expected[key] = seen[{key.size, key.tying}];
            for (double eta : expected[key]) {
                if (!cells.count(eta)) {
                    RunConfig c = cell_config(SweepRow{key.strategy, key.size, eta, key.lambda, key.tying});
                    report.missing_runs.push_back(cell_id(c));
                }
            }
        }
    }
    for (const auto& [key, etas] : expected) {
        groups[key];  // groups with no finished cell still get a row
    }

    std::map<std::pair<std::string, bool>, double> baseline_ms;
    for (const auto& [key, cells] : groups) {
        std::vector<double> missing;
        for (double eta : expected[key]) {
            if (!cells.count(eta)) {
                missing.push_back(eta);
            }
        }
        metrics::LrsInput in;
        double l0_sum = 0.0;
        bool l0_ok = !cells.empty();
        std::vector<double> medians;
        OptimalLossRow opt{key, kNaN, kNaN, cells.size(), missing};
        for (const auto& [eta, cell] : cells) {
            in.eta_grid.push_back(eta);
            in.final_losses.push_back(cell.row.diverged ? kNaN : cell.row.final_loss);
            l0_ok = l0_ok && std::isfinite(cell.init_loss);
            l0_sum += cell.init_loss;
            if (std::isfinite(cell.median_ms)) {
                medians.push_back(cell.median_ms);
            }
            const double fl = in.final_losses.back();
            if (std::isfinite(fl) && !(fl >= opt.optimal_loss)) {
                opt.optimal_loss = fl;
                opt.best_eta = eta;
            }
        }
        LrsRow lrs_row{key, kNaN, kNaN, cells.size(), missing};
        if (l0_ok) {
            lrs_row.init_loss = l0_sum / static_cast<double>(cells.size());
            in.init_loss = lrs_row.init_loss;
            if (missing.empty()) {
                lrs_row.lrs = metrics::lrs(in);
            }
        }
        if (!missing.empty()) {
            opt.optimal_loss = opt.best_eta = kNaN;
        }
        report.lrs.push_back(lrs_row);
        report.optimal_loss.push_back(opt);
        OverheadRow ov{key, medians.empty() ? kNaN : median_after(medians, 0), kNaN};
        if (key.strategy == "baseline") {
            baseline_ms[{key.size, key.tying}] = ov.median_step_ms;
        }
        report.overhead.push_back(ov);
    }
    for (auto& ov : report.overhead) {
        const auto it = baseline_ms.find({ov.key.size, ov.key.tying});
        if (it != baseline_ms.end() && std::isfinite(it->second) && it->second > 0.0) {
            ov.overhead_pct = 100.0 * (ov.median_step_ms / it->second - 1.0);
        }
    }

    std::ostringstream lrs_csv, opt_csv, ov_csv;
    lrs_csv << "strategy,size,tying,lambda,lrs,init_loss,n_eta,missing_etas\n";
    for (const auto& r : report.lrs) {
        lrs_csv << key_columns(r.key) << ',' << cell_or_gap(r.lrs) << ',' << cell_or_gap(r.init_loss) << ','
                << r.n_eta << ',' << join_etas(r.missing_etas) << "\n";
    }
    opt_csv << "strategy,size,tying,lambda,optimal_loss,best_eta,n_eta,missing_etas\n";
    for (const auto& r : report.optimal_loss) {
        opt_csv << key_columns(r.key) << ',' << cell_or_gap(r.optimal_loss) << ',' << cell_or_gap(r.best_eta) << ','
                << r.n_eta << ',' << join_etas(r.missing_etas) << "\n";
    }
    ov_csv << "strategy,size,tying,lambda,median_step_ms,overhead_pct\n";
    for (const auto& r : report.overhead) {
        ov_csv << key_columns(r.key) << ',' << cell_or_gap(r.median_step_ms) << ',' << cell_or_gap(r.overhead_pct)
               << "\n";
    }
    write_text(dir / "lrs.csv", lrs_csv.str());
    write_text(dir / "optimal_loss.csv", opt_csv.str());
    write_text(dir / "overhead.csv", ov_csv.str());
    if (!report.missing_runs.empty()) {
        std::string text;
        for (const auto& id : report.missing_runs) {
            text += id + "\n";
        }
        write_text(dir / "missing_runs.txt", text);
    } else {
        fs::remove(dir / "missing_runs.txt");
    }
    return report;
}

std::vector<BRatioRow> bratio_report(const fs::path& dir) {
    std::vector<BRatioRow> rows;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.path().filename() != model::kManifestFile || entry.path().parent_path().filename() != "checkpoint") {
            continue;
        }
        const fs::path ck_dir = entry.path().parent_path();
        const fs::path run_dir = ck_dir.parent_path();
        BRatioRow row;
        row.run_id = run_dir.filename().string();
        row.lambda = kNaN;
        try {
            const RunConfig c = nlohmann::json::parse(read_text(run_dir / "config.json")).get<RunConfig>();
            row.run_id = c.run_id;
            row.strategy = head::to_string(c.head.kind);
            row.size = c.size_tag;
            row.eta = c.optim.peak_lr;
            row.lambda = c.head.uses_lambda() ? c.head.lambda : kNaN;
            row.tying = c.model.weight_tying;
        } catch (const std::exception&) {
        }
        try {
            const model::Checkpoint ck = model::load_checkpoint(ck_dir);
            row.step = ck.step;
            row.tying = ck.config.weight_tying;
            const auto& table = ck.output_table();
            if (!table.all_finite()) {
                row.status = "non-finite";
            } else {
                row.record = metrics::b_ratio(nn::tensor_cast<double>(table));
                row.status = "ok";
            }
        } catch (const std::exception& e) {
            std::string msg = e.what();
            std::replace(msg.begin(), msg.end(), ',', ';');
            std::replace(msg.begin(), msg.end(), '\n', ' ');
            row.status = "unreadable: " + msg;
        }
        rows.push_back(std::move(row));
    }
    std::sort(rows.begin(), rows.end(), [](const BRatioRow& a, const BRatioRow& b) {
        return std::make_tuple(a.size, a.eta, a.tying, a.run_id) < std::make_tuple(b.size, b.eta, b.tying, b.run_id);
    });
    std::ostringstream csv;
    csv << "run_id,strategy,size,eta,lambda,tying,step,mu_norm_sq,b_minus,b_plus,b_ratio,degenerate,status\n";
    for (const auto& r : rows) {
        const bool ok = r.status == "ok";
        auto num = [ok](double v) { return ok ? format_double(v) : std::string(); };
        csv << r.run_id << ',' << r.strategy << ',' << r.size << ',' << format_double(r.eta) << ','
            << (std::isnan(r.lambda) ? std::string() : format_double(r.lambda)) << ','
            << (r.tying ? "true" : "false") << ',' << r.step << ',' << num(r.record.mu_norm_sq) << ','
            << num(r.record.b_minus) << ',' << num(r.record.b_plus) << ',' << num(r.record.b_ratio) << ','
            << (ok ? (r.record.degenerate ? "true" : "false") : "") << ',' << r.status << "\n";
    }
    write_text(dir / "bratio.csv", csv.str());
    return rows;
}

std::size_t write_curves(const fs::path& dir) {
    std::vector<fs::path> run_dirs;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_directory() && fs::exists(entry.path() / "metrics.jsonl") &&
            fs::exists(entry.path() / "config.json")) {
            run_dirs.push_back(entry.path());
        }
    }
    std::sort(run_dirs.begin(), run_dirs.end());

    std::ostringstream curves;
    curves << "run_id,strategy,size,eta,lambda,tying,step,test_loss,lr,mu_norm,logit_mean,logit_std,"
              "logit_max_abs,logit_max_abs_raw,b_ratio,diverged,step_ms\n";
    for (const auto& run_dir : run_dirs) {
        const RunConfig c = nlohmann::json::parse(read_text(run_dir / "config.json")).get<RunConfig>();
        const std::string prefix = c.run_id + "," + std::string(head::to_string(c.head.kind)) + "," + c.size_tag +
                                   "," + format_double(c.optim.peak_lr) + "," +
                                   (c.head.uses_lambda() ? format_double(c.head.lambda) : std::string()) + "," +
                                   (c.model.weight_tying ? "true" : "false");
        for (const auto& s : read_metrics(run_dir / "metrics.jsonl")) {
            curves << prefix << ',' << s.step << ',' << format_double(s.test_loss) << ',' << format_double(s.lr)
                   << ',' << format_double(s.mu_norm) << ',' << format_double(s.logit_mean) << ','
                   << format_double(s.logit_std) << ',' << format_double(s.logit_max_abs) << ','
                   << format_double(s.logit_max_abs_raw) << ',' << format_double(s.b_ratio) << ','
                   << (s.diverged ? "true" : "false") << ',' << format_double(s.step_ms) << "\n";
        }
    }
    write_text(dir / "curves.csv", curves.str());

    std::ostringstream z1;
    z1 << "others_sum,logit,z_loss\n";
    std::vector<double> grid;
    for (int k = -200; k <= 200; ++k) {
        grid.push_back(0.05 * k);
    }
    for (double s : {0.0, 1.0, 10.0}) {
        for (const auto& [l, loss] : head::zloss_1d_curve(s, grid, 1.0)) {
            z1 << format_double(s) << ',' << format_double(l) << ',' << format_double(loss) << "\n";
        }
    }
    write_text(dir / "zloss_1d.csv", z1.str());

    std::ostringstream z2;
    z2 << "logit_1,logit_2,log_z,z_loss\n";
    for (int a = -50; a <= 50; ++a) {
        for (int b = -50; b <= 50; ++b) {
            const double l[2] = {0.1 * a, 0.1 * b};
            const double log_z = nn::log_add_exp(l[0], l[1]);
            z2 << format_double(l[0]) << ',' << format_double(l[1]) << ',' << format_double(log_z) << ','
               << format_double(head::z_loss_term<double>(l, 1.0)) << "\n";
        }
    }
    write_text(dir / "zloss_2d.csv", z2.str());
    return run_dirs.size();
}

}  // namespace logitlab::harness
