// Acceptance suite: INFO lines while running (progress and report-only
// quantities), then one PASS/FAIL line per criterion. Exit status is nonzero
// if any criterion fails.

#include "covdet/detection.hpp"
#include "covdet/harness.hpp"
#include "covdet/solvers.hpp"
#include "covdet/validation.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

using namespace covdet;

namespace {

std::map<int, std::pair<bool, std::string>> verdicts;

void verdict(int id, bool pass, const std::string& what) { verdicts[id] = {pass, what}; }

void info(const std::string& what)
{
    std::printf("INFO %s\n", what.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* format, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof(buf), format, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

struct Certification
{
    Index runs = 0;
    Index failed = 0;
    double worst = 0;

    void add(bool converged, double certified_kkt)
    {
        if (!converged) return;
        ++runs;
        worst = std::max(worst, certified_kkt);
        if (!(certified_kkt < 1e-3)) ++failed;
    }
};

Certification certification;

void gradient_check()
{
    const auto start = std::chrono::steady_clock::now();
    const auto res = validation::check_gradient(2021, 50);
    const double t = seconds_since(start);
    verdict(1, res.checked >= 50 && res.max_rel_error < 1e-5 && t < 10,
            fmt("%td instances (L <= 30, NQ <= 60), max relative error %.2e (< 1e-5), %.2f s (< 10 s)", res.checked,
                res.max_rel_error, t));
}

void coordinate_check()
{
    const auto start = std::chrono::steady_clock::now();
    const auto res = validation::check_coordinate_steps(2021, 200);
    const double t = seconds_since(start);
    verdict(2, res.checked >= 200 && res.boundary_cases > 0 && res.max_abs_error < 1e-8 && t < 30,
            fmt("%td coordinates (%td at the boundary d = -gamma), max absolute error %.2e (< 1e-8), %.2f s (< 30 s)",
                res.checked, res.boundary_cases, res.max_abs_error, t));
}

void desk_agreement()
{
    const auto cfg = desk_preset();
    const auto start = std::chrono::steady_clock::now();
    Index objective_mismatch = 0, support_mismatch = 0, unconverged = 0;
    double worst = 0;
    for (Index t = 0; t < 50; ++t) {
        const auto inst = generate_instance<double>(cfg.system_at(0, t));
        const double s2 = inst.cfg.sigma_w_sq;
        const auto as = active_set_pg<double>(inst.S, inst.sigma_hat, s2, cfg.schedule, cfg.pg);
        Engine rng = make_engine(inst.cfg.seed, Stream::solver);
        const auto cd = coordinate_descent<double>(inst.S, inst.sigma_hat, s2, cfg.cd, rng);
        certification.add(as.converged, fresh_kkt_residual<double>(inst.S, inst.sigma_hat, s2, as.gamma));
        certification.add(cd.converged, fresh_kkt_residual<double>(inst.S, inst.sigma_hat, s2, cd.gamma));
        if (!as.converged || !cd.converged) ++unconverged;

        const double rel = std::abs(as.objective - cd.objective) / std::abs(cd.objective);
        worst = std::max(worst, rel);
        if (!(rel < 1e-5)) ++objective_mismatch;
        const double theta = cfg.theta_factor * inst.cfg.gain_of(0);
        if (detect(as.gamma, theta, inst.cfg.Q).decision != detect(cd.gamma, theta, inst.cfg.Q).decision) {
            ++support_mismatch;
        }
    }
    const double t = seconds_since(start);
    verdict(4, objective_mismatch == 0 && support_mismatch == 0 && unconverged == 0 && t < 300,
            fmt("50 desk instances (N=200, Q=2, L=50, M=256, K=20): worst relative objective gap %.2e (< 1e-5), "
                "%td objective mismatches, %td detected-support mismatches, %td unconverged, %.1f s (< 300 s)",
                worst, objective_mismatch, support_mismatch, unconverged, t));
}

struct Timing
{
    double as = 0, cd = 0, ideal_pg = 0, ideal_cd = 0;
    Index n = 0;
};

Timing mean_times(const std::vector<TrialReport>& reports, std::size_t sweep)
{
    Timing t;
    Index count[4] = {0, 0, 0, 0};
    for (const auto& r : reports) {
        if (r.sweep_index != sweep) continue;
        const auto kind = solver_from_string(r.solver);
        double* slot = kind == SolverKind::active_set_pg        ? &t.as
                       : kind == SolverKind::coordinate_descent ? &t.cd
                       : kind == SolverKind::ideal_pg           ? &t.ideal_pg
                                                                : &t.ideal_cd;
        *slot += r.wall_time;
        ++count[static_cast<int>(kind)];
    }
    t.as /= count[0];
    t.cd /= count[1];
    t.ideal_pg /= count[2];
    t.ideal_cd /= count[3];
    t.n = *std::min_element(std::begin(count), std::end(count));
    return t;
}

std::vector<TrialReport> paper_runs(Index N, Index trials)
{
    auto cfg = paper_preset();
    cfg.sweep_N = {N};
    cfg.trials = trials;
    cfg.sequential = true;
    cfg.master_seed = 2021;
    cfg.solvers = {SolverKind::active_set_pg, SolverKind::coordinate_descent, SolverKind::ideal_pg,
                   SolverKind::ideal_cd};
    const auto start = std::chrono::steady_clock::now();
    auto reports = run_experiment(cfg);
    info(fmt("paper-scale N=%td: %td trials x 4 solvers in %.1f s", N, trials, seconds_since(start)));
    for (const auto& r : reports) certification.add(r.converged, r.certified_kkt);
    emit_results(reports, OutputFormat::csv, fmt("acceptance_N%td.csv", N), fmt("acceptance_N%td_aggregate.csv", N));
    return reports;
}

void paper_scale(const std::vector<TrialReport>& n1000, const std::vector<TrialReport>& n2000)
{
    Index trials = 0, within_10 = 0, in_band = 0, ratio_ok = 0, ratio_band = 0, unconverged = 0;
    double error_sum = 0, ratio_sum = 0;
    Index outer_min = 1 << 30, outer_max = 0;
    for (const auto& r : n1000) {
        if (r.solver != "active_set_pg") continue;
        ++trials;
        if (!r.converged) ++unconverged;
        if (r.converged && r.outer_iters <= 10) ++within_10;
        if (r.converged && r.outer_iters >= 4 && r.outer_iters <= 7) ++in_band;
        outer_min = std::min(outer_min, r.outer_iters);
        outer_max = std::max(outer_max, r.outer_iters);
        const double ratio = r.cardinality_ratio.value_or(0);
        ratio_sum += ratio;
        if (ratio >= 1.0 && ratio <= 3.5) ++ratio_ok;
        if (ratio >= 1.5 && ratio <= 2.5) ++ratio_band;
        error_sum += r.errors.error_rate();
    }
    const double frac10 = static_cast<double>(within_10) / trials;
    verdict(5, trials >= 100 && frac10 >= 0.95,
            fmt("N=1000, L=150, M=256, K=100: %td/%td trials terminate within 10 outer iterations (%.1f%%, need >= 95%%); "
                "range [%td, %td], %td unconverged",
                within_10, trials, 100 * frac10, outer_min, outer_max, unconverged));
    info(fmt("criterion 5 report-only: %td/%td trials in the 4-7 outer-iteration band (%.1f%%)", in_band, trials,
             100.0 * in_band / trials));

    const double frac_ratio = static_cast<double>(ratio_ok) / trials;
    verdict(6, trials >= 100 && frac_ratio >= 0.90,
            fmt("mean |A^k|/K in [1.0, 3.5] on %td/%td trials (%.1f%%, need >= 90%%); average %.3f", ratio_ok, trials,
                100 * frac_ratio, ratio_sum / trials));
    info(fmt("criterion 6 report-only: mean |A^k|/K in [1.5, 2.5] on %td/%td trials (%.1f%%)", ratio_band, trials,
             100.0 * ratio_band / trials));

    const Timing a = mean_times(n1000, 0);
    const Timing b = mean_times(n2000, 0);
    const bool order = a.as < a.cd && a.ideal_pg < a.ideal_cd && b.as < b.cd && b.ideal_pg < b.ideal_cd;
    verdict(7, order && a.n >= 50 && b.n >= 50,
            fmt("sequential mean seconds, N=1000 (%td trials): AS-PG %.4f < CD %.4f, ideal PG %.4f < ideal CD %.4f; "
                "N=2000 (%td trials): AS-PG %.4f < CD %.4f, ideal PG %.4f < ideal CD %.4f",
                a.n, a.as, a.cd, a.ideal_pg, a.ideal_cd, b.n, b.as, b.cd, b.ideal_pg, b.ideal_cd));
    info(fmt("criterion 7 report-only speedups: CD/AS-PG %.2fx (N=1000), %.2fx (N=2000); ideal CD/ideal PG %.2fx, %.2fx",
             a.cd / a.as, b.cd / b.as, a.ideal_cd / a.ideal_pg, b.ideal_cd / b.ideal_pg));

    const double mean_error = error_sum / trials;
    verdict(8, trials >= 100 && mean_error < 0.01,
            fmt("mean device error rate (missed + false alarm + data error)/N over %td trials: %.5f (< 0.01)", trials,
                mean_error));
}

std::string slurp(const std::string& path)
{
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Drops every column whose header name contains "time".
std::string without_time_columns(const std::string& csv)
{
    std::istringstream in(csv);
    std::string line;
    std::vector<bool> keep;
    std::string out;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream row(line);
        while (std::getline(row, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        if (keep.empty()) {
            for (const auto& name : cells) keep.push_back(name.find("time") == std::string::npos);
        }
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i >= keep.size() || keep[i]) out += cells[i] + ',';
        }
        out += '\n';
    }
    return out;
}

void determinism()
{
    int codes[2];
    std::string csv[2];
    for (int run = 0; run < 2; ++run) {
        const std::string path = fmt("acceptance_bench_%d.csv", run);
        const std::string cmd = std::string(COVDET_CLI) + " bench --preset desk --trials 5 --sequential --seed 2021 --csv " +
                                path + " --quiet";
        const int status = std::system(cmd.c_str());
        codes[run] = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        csv[run] = slurp(path);
    }
    const auto a = without_time_columns(csv[0]);
    const auto b = without_time_columns(csv[1]);
    const auto rows = std::count(a.begin(), a.end(), '\n');
    verdict(9, codes[0] == 0 && codes[1] == 0 && rows == 1 + 5 * 4 && a == b,
            fmt("two `bench --seed 2021` runs (desk preset, 5 trials x 4 solvers): exit codes %d, %d; %td rows; CSV "
                "%s apart from time columns",
                codes[0], codes[1], rows, a == b ? "identical" : "DIFFERENT"));
}

} // namespace

int main()
{
    gradient_check();
    coordinate_check();
    desk_agreement();
    const auto n1000 = paper_runs(1000, 100);
    const auto n2000 = paper_runs(2000, 50);
    paper_scale(n1000, n2000);
    verdict(3, certification.runs > 0 && certification.failed == 0,
            fmt("%td successful runs across criteria 4-8 re-certified from a fresh factorization: %td with residual >= "
                "1e-3, worst %.2e",
                certification.runs, certification.failed, certification.worst));
    determinism();

    int failures = 0;
    for (const auto& [id, v] : verdicts) {
        std::printf("%s criterion %d: %s\n", v.first ? "PASS" : "FAIL", id, v.second.c_str());
        if (!v.first) ++failures;
    }
    std::printf("%s: %d of %zu criteria failed\n", failures == 0 ? "ALL PASS" : "FAILURES", failures, verdicts.size());
    return failures == 0 ? 0 : 1;
}
