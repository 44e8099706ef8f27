// covdet: simulate, solve and benchmark covariance-based activity detection.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 solver did not
// converge (solve), 3 I/O failure, 4 validation check failed.

#include "covdet/container.hpp"
#include "covdet/detection.hpp"
#include "covdet/harness.hpp"
#include "covdet/solvers.hpp"
#include "covdet/validation.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

namespace {

using namespace covdet;
using nlohmann::json;

constexpr int kUsage = 1;
constexpr int kNotConverged = 2;
constexpr int kIo = 3;
constexpr int kValidationFailed = 4;

struct ConfigFlags
{
    std::string config_path;
    std::string preset = "desk";
    std::optional<std::uint64_t> seed;

    void attach(CLI::App* cmd)
    {
        cmd->add_option("--config", config_path, "JSON experiment config");
        cmd->add_option("--preset", preset, "built-in preset when no config is given")
            ->check(CLI::IsMember({"desk", "paper"}));
        cmd->add_option("--seed", seed, "master seed override");
    }

    ExperimentConfig load() const
    {
        ExperimentConfig cfg = config_path.empty() ? (preset == "paper" ? paper_preset() : desk_preset())
                                                   : load_config(config_path);
        if (seed) cfg.master_seed = *seed;
        cfg.validate();
        return cfg;
    }
};

InstanceFile instance_from_config(const ExperimentConfig& cfg, std::size_t sweep_index)
{
    return InstanceFile::from(generate_instance<double>(cfg.system_at(sweep_index, 0)));
}

int run_simulate(const ConfigFlags& flags, std::size_t sweep_index, const std::string& out,
                 const std::string& gamma_csv)
{
    const auto cfg = flags.load();
    if (sweep_index >= cfg.sweep_N.size()) throw std::invalid_argument("--sweep-index out of range");
    const auto file = instance_from_config(cfg, sweep_index);
    write_instance(out, file);
    if (!gamma_csv.empty()) write_gamma_csv(gamma_csv, file.gamma_true, file.Q);
    std::cout << json{{"path", out}, {"N", file.N}, {"Q", file.Q}, {"L", file.L}, {"M", file.M},
                      {"sigma_w_sq", file.sigma_w_sq}, {"active", file.true_support().size()}}
                     .dump()
              << '\n';
    return 0;
}

int run_solve(const ConfigFlags& flags, const std::string& instance_path, const std::string& solver_name, bool trace)
{
    const auto cfg = flags.load();
    const InstanceFile file = instance_path.empty() ? instance_from_config(cfg, 0) : read_instance(instance_path);
    const SolverKind kind = solver_from_string(solver_name);
    const IndexSet support = file.true_support();

    Tracer tracer;
    if (trace) {
        std::cerr << "k,active_size,objective,kkt,elapsed\n";
        tracer = [](const TraceRow& row) {
            std::fprintf(stderr, "%td,%td,%.17g,%.17g,%.6f\n", row.k, row.active_size, row.objective, row.kkt,
                         row.elapsed);
        };
    }

    Engine rng = make_engine(cfg.master_seed, Stream::solver);
    SolveResult<double> res;
    switch (kind) {
    case SolverKind::active_set_pg:
        res = active_set_pg<double>(file.S, file.sigma_hat, file.sigma_w_sq, cfg.schedule, cfg.pg, tracer);
        break;
    case SolverKind::coordinate_descent:
        res = coordinate_descent<double>(file.S, file.sigma_hat, file.sigma_w_sq, cfg.cd, rng, tracer);
        break;
    case SolverKind::ideal_pg:
    case SolverKind::ideal_cd:
        res = oracle_solve<double>(file.S, file.sigma_hat, file.sigma_w_sq, support,
                                   kind == SolverKind::ideal_pg ? OracleMethod::pg : OracleMethod::cd,
                                   cfg.schedule.eps, cfg.pg, cfg.cd, rng);
        break;
    }
    const bool restricted = kind == SolverKind::ideal_pg || kind == SolverKind::ideal_cd;
    const double certified =
        fresh_kkt_residual<double>(file.S, file.sigma_hat, file.sigma_w_sq, res.gamma, restricted ? &support : nullptr);

    json nonzero = json::array();
    for (Index j = 0; j < res.gamma.size(); ++j) {
        if (res.gamma[j] > 0) nonzero.push_back({{"index", j}, {"device", j / file.Q}, {"sequence", j % file.Q},
                                                 {"gamma", res.gamma[j]}});
    }
    json out = {{"solver", to_string(kind)},
                {"converged", res.converged},
                {"objective", res.objective},
                {"kkt", res.kkt},
                {"certified_kkt", certified},
                {"outer_iters", res.outer_iters},
                {"inner_iters_total", res.inner_iters_total},
                {"sweeps", res.sweeps},
                {"active_set_sizes", res.active_set_sizes},
                {"wall_time", res.wall_time},
                {"gamma", nonzero}};
    if (!support.empty()) {
        const double g = file.gamma_true.maxCoeff();
        const auto rep = score(detect(res.gamma, cfg.theta_factor * g, file.Q), file.true_selection());
        out["detection"] = {{"theta", cfg.theta_factor * g},
                            {"missed", rep.missed},
                            {"false_alarm", rep.false_alarm},
                            {"data_error", rep.data_error},
                            {"error_rate", rep.error_rate()}};
    }
    std::cout << out.dump(2) << '\n';
    return res.converged ? 0 : kNotConverged;
}

int run_bench(const ConfigFlags& flags, bool sequential, const std::vector<std::string>& solvers,
              std::optional<Index> trials, std::string csv, std::string aggregate_path, std::string json_path,
              bool quiet)
{
    auto cfg = flags.load();
    if (sequential) cfg.sequential = true;
    if (trials) cfg.trials = *trials;
    if (!solvers.empty()) {
        cfg.solvers.clear();
        for (const auto& s : solvers) cfg.solvers.push_back(solver_from_string(s));
    }
    if (!csv.empty()) cfg.csv_path = csv;
    if (!aggregate_path.empty()) cfg.aggregate_path = aggregate_path;
    if (!json_path.empty()) cfg.json_path = json_path;
    if (cfg.csv_path.empty() && cfg.json_path.empty()) cfg.csv_path = "bench.csv";
    cfg.validate();

    ProgressFn progress;
    if (!quiet) {
        progress = [](std::size_t done, std::size_t total) {
            std::fprintf(stderr, "\r%zu/%zu trials", done, total);
            if (done == total) std::fputc('\n', stderr);
        };
    }
    const auto reports = run_experiment(cfg, progress);
    if (!cfg.csv_path.empty()) emit_results(reports, OutputFormat::csv, cfg.csv_path, cfg.aggregate_path);
    if (!cfg.json_path.empty()) {
        emit_results(reports, OutputFormat::json, cfg.json_path, cfg.csv_path.empty() ? cfg.aggregate_path : "");
    }
    if (!quiet) {
        for (const auto& a : aggregate(reports)) {
            std::fprintf(stderr, "N=%td %-18s trials=%td converged=%.3f time=%.4fs err=%.4f\n", a.N, a.solver.c_str(),
                         a.trials, a.converged_fraction, a.wall_time.mean, a.error_rate.mean);
        }
    }
    return 0;
}

int run_validate(std::uint64_t seed, Index gradient_instances, Index coordinates)
{
    const auto grad = validation::check_gradient(seed, gradient_instances);
    const auto cd = validation::check_coordinate_steps(seed, coordinates);
    const bool grad_ok = grad.max_rel_error < 1e-5;
    const bool cd_ok = cd.max_abs_error < 1e-8;
    std::cout << json{{"gradient_fd", {{"checked", grad.checked}, {"max_rel_error", grad.max_rel_error},
                                       {"tolerance", 1e-5}, {"pass", grad_ok}}},
                      {"cd_closed_form", {{"checked", cd.checked}, {"boundary_cases", cd.boundary_cases},
                                          {"max_abs_error", cd.max_abs_error}, {"tolerance", 1e-8}, {"pass", cd_ok}}}}
                     .dump(2)
              << '\n';
    return grad_ok && cd_ok ? 0 : kValidationFailed;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Covariance-based joint activity and data detection"};
    app.require_subcommand(1);

    ConfigFlags sim_flags, solve_flags, bench_flags;

    auto* sim = app.add_subcommand("simulate", "generate one instance and write it as a COVD1 container");
    sim_flags.attach(sim);
    std::string sim_out, sim_gamma_csv;
    std::size_t sim_sweep = 0;
    sim->add_option("--out,-o", sim_out, "output container path")->required();
    sim->add_option("--gamma-csv", sim_gamma_csv, "also write gamma_true as CSV");
    sim->add_option("--sweep-index", sim_sweep, "which N of the sweep to use");

    auto* solve = app.add_subcommand("solve", "solve one instance with one solver and print the result as JSON");
    solve_flags.attach(solve);
    std::string solve_instance, solve_solver = "active_set_pg";
    bool solve_trace = false;
    solve->add_option("--instance,-i", solve_instance, "COVD1 container (default: generate from config)");
    solve->add_option("--solver", solve_solver, "active_set_pg | coordinate_descent | ideal_pg | ideal_cd");
    solve->add_flag("--trace", solve_trace, "per-iteration CSV trace on stderr");

    auto* bench = app.add_subcommand("bench", "run the Monte-Carlo sweep and write per-trial and aggregate results");
    bench_flags.attach(bench);
    bool bench_sequential = false, bench_quiet = false;
    std::vector<std::string> bench_solvers;
    std::optional<Index> bench_trials;
    std::string bench_csv, bench_agg, bench_json;
    bench->add_flag("--sequential", bench_sequential, "single worker, for uncontended timing");
    bench->add_option("--solver", bench_solvers, "restrict to these solvers (repeatable)");
    bench->add_option("--trials", bench_trials, "Monte-Carlo trials per sweep point");
    bench->add_option("--csv", bench_csv, "per-trial CSV path");
    bench->add_option("--aggregate", bench_agg, "aggregate path");
    bench->add_option("--json", bench_json, "per-trial + aggregate JSON path");
    bench->add_flag("--quiet,-q", bench_quiet, "no progress output");

    auto* validate = app.add_subcommand("validate", "run the finite-difference and coordinate-step oracle checks");
    std::uint64_t val_seed = 2021;
    Index val_grad = 50, val_coord = 200;
    validate->add_option("--seed", val_seed);
    validate->add_option("--gradient-instances", val_grad);
    validate->add_option("--coordinates", val_coord);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*sim) return run_simulate(sim_flags, sim_sweep, sim_out, sim_gamma_csv);
        if (*solve) return run_solve(solve_flags, solve_instance, solve_solver, solve_trace);
        if (*bench) {
            return run_bench(bench_flags, bench_sequential, bench_solvers, bench_trials, bench_csv, bench_agg,
                             bench_json, bench_quiet);
        }
        if (*validate) return run_validate(val_seed, val_grad, val_coord);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIo;
    }
    return kUsage;
}
