#pragma once

#include "covdet/detection.hpp"
#include "covdet/model.hpp"
#include "covdet/solvers.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace covdet {

enum class SolverKind { active_set_pg, coordinate_descent, ideal_pg, ideal_cd };

std::string to_string(SolverKind kind);
SolverKind solver_from_string(const std::string& name);

struct ExperimentConfig
{
    std::vector<Index> sweep_N{200};
    double k_ratio = 0.1;
    Index Q = 2;
    Index L = 50;
    Index M = 256;
    double gain = 1.0;
    double sigma_w_sq = 1.0;

    Index trials = 1;
    std::uint64_t master_seed = 1;
    std::vector<SolverKind> solvers{SolverKind::active_set_pg};

    ActiveSetSchedule schedule;
    PgConfig pg;
    CdConfig cd;
    double theta_factor = 0.5;  ///< detection threshold as a fraction of the gain

    bool sequential = false;
    std::string csv_path;
    std::string aggregate_path;
    std::string json_path;

    void validate() const;
    Index active_devices(Index N) const;
    /// Instance configuration of one (sweep point, trial), seeded from (master, sweep, trial).
    SystemConfig system_at(std::size_t sweep_index, Index trial) const;
};

/// Noise variance in units of the cell-edge gain under the reference link
/// budget (25 dBm transmit, -169 dBm/Hz over 10 MHz, 128.1 dB path loss at 1 km).
double reference_noise_to_gain();

ExperimentConfig desk_preset();
ExperimentConfig paper_preset();

/// Applies a JSON document (see README for the schema) on top of `base`.
ExperimentConfig config_from_json(const nlohmann::json& doc, ExperimentConfig base);
ExperimentConfig load_config(const std::string& path);

struct TrialReport
{
    std::size_t sweep_index = 0;
    Index trial = 0;
    std::uint64_t seed = 0;
    Index N = 0, K = 0, Q = 0, L = 0, M = 0;
    std::string solver;
    bool converged = false;
    double objective = 0;
    double kkt = 0;
    double certified_kkt = 0;  ///< recomputed from a fresh factorization after the solve
    Index outer_iters = 0;
    Index inner_iters = 0;
    Index sweeps = 0;
    std::optional<double> cardinality_ratio;  ///< active-set solver only
    ErrorReport errors;
    double wall_time = 0;
};

/// Runs one solver on one instance; only the solve call is timed.
TrialReport run_trial(const Instance<double>& inst, SolverKind kind, const ExperimentConfig& cfg,
                      std::size_t sweep_index, Index trial);

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

std::vector<TrialReport> run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {});

struct AggregateRow
{
    std::size_t sweep_index = 0;
    Index N = 0, K = 0;
    std::string solver;
    Index trials = 0;
    double converged_fraction = 0;

    struct Stat
    {
        double mean = 0;
        double stderr_ = 0;
        Index count = 0;
    };
    Stat wall_time, outer_iters, inner_iters, sweeps, cardinality_ratio, error_rate, objective, kkt;
};

/// Per (sweep point, solver) means and standard errors, in first-seen order.
std::vector<AggregateRow> aggregate(const std::vector<TrialReport>& reports);

std::string trial_csv_header();
std::string trial_csv_row(const TrialReport& r);
std::string aggregate_csv_header();
std::string aggregate_csv_row(const AggregateRow& a);
nlohmann::json to_json(const TrialReport& r);
nlohmann::json to_json(const AggregateRow& a);

enum class OutputFormat { csv, json };

/// Writes per-trial rows to `path` and aggregates to `aggregate_path` (if nonempty).
void emit_results(const std::vector<TrialReport>& reports, OutputFormat format, const std::string& path,
                  const std::string& aggregate_path = {});

} // namespace covdet
