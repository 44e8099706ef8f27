#include "covdet/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace covdet {

using nlohmann::json;

std::string to_string(SolverKind kind)
{
    switch (kind) {
    case SolverKind::active_set_pg: return "active_set_pg";
    case SolverKind::coordinate_descent: return "coordinate_descent";
    case SolverKind::ideal_pg: return "ideal_pg";
    case SolverKind::ideal_cd: return "ideal_cd";
    }
    throw std::logic_error("unknown solver kind");
}

SolverKind solver_from_string(const std::string& name)
{
    if (name == "active_set_pg" || name == "as_pg") return SolverKind::active_set_pg;
    if (name == "coordinate_descent" || name == "cd") return SolverKind::coordinate_descent;
    if (name == "ideal_pg") return SolverKind::ideal_pg;
    if (name == "ideal_cd") return SolverKind::ideal_cd;
    throw std::invalid_argument("unknown solver: " + name);
}

void ExperimentConfig::validate() const
{
    if (sweep_N.empty()) throw std::invalid_argument("config: sweep over N is empty");
    for (Index n : sweep_N) {
        if (n < 1) throw std::invalid_argument("config: N must be >= 1");
    }
    if (!(k_ratio > 0 && k_ratio <= 1)) throw std::invalid_argument("config: k_ratio must lie in (0, 1]");
    if (Q < 1 || L < 1 || M < 1) throw std::invalid_argument("config: Q, L, M must be >= 1");
    if (!(gain >= 0)) throw std::invalid_argument("config: gain must be >= 0");
    if (!(sigma_w_sq > 0)) throw std::invalid_argument("config: sigma_w_sq must be > 0");
    if (trials < 1) throw std::invalid_argument("config: trials must be >= 1");
    if (solvers.empty()) throw std::invalid_argument("config: no solvers selected");
    if (!(theta_factor >= 0)) throw std::invalid_argument("config: theta_factor must be >= 0");
    if (!(cd.eps > 0) || cd.max_sweeps < 1 || cd.refresh_period < 1) throw std::invalid_argument("config: bad cd settings");
    schedule.validate();
    pg.validate();
}

Index ExperimentConfig::active_devices(Index N) const
{
    return std::clamp<Index>(static_cast<Index>(std::llround(k_ratio * static_cast<double>(N))), 0, N);
}

SystemConfig ExperimentConfig::system_at(std::size_t sweep_index, Index trial) const
{
    SystemConfig sys;
    sys.N = sweep_N.at(sweep_index);
    sys.K = active_devices(sys.N);
    sys.Q = Q;
    sys.L = L;
    sys.M = M;
    sys.sigma_w_sq = sigma_w_sq;
    sys.gain = {gain};
    sys.seed = derive_seed({master_seed, static_cast<std::uint64_t>(sweep_index), static_cast<std::uint64_t>(trial)});
    return sys;
}

double reference_noise_to_gain()
{
    const auto lb = gain_from_link_budget(25.0, -169.0, 10e6, default_pathloss_db(1.0));
    return lb.sigma_w_sq / lb.gain;
}

ExperimentConfig desk_preset()
{
    ExperimentConfig c;
    c.sweep_N = {200};
    c.L = 50;
    c.M = 256;
    c.Q = 2;
    c.k_ratio = 0.1;
    c.gain = 1.0;
    c.sigma_w_sq = reference_noise_to_gain();
    c.trials = 50;
    c.solvers = {SolverKind::active_set_pg, SolverKind::coordinate_descent, SolverKind::ideal_pg, SolverKind::ideal_cd};
    return c;
}

ExperimentConfig paper_preset()
{
    ExperimentConfig c = desk_preset();
    c.sweep_N = {500, 1000, 2000, 4000};
    c.L = 150;
    c.trials = 500;
    return c;
}

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where)
{
    if (!obj.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.count(key)) throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
    }
}

template <typename T>
void read(const json& obj, const char* key, T& out)
{
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

} // namespace

namespace {

ExperimentConfig apply_config(const json& doc, ExperimentConfig c)
{
    reject_unknown(doc, {"preset", "system", "trials", "master_seed", "solvers", "schedule", "pg", "cd", "detection",
                         "output", "sequential"},
                   "config");
    if (doc.contains("preset")) {
        const auto name = doc.at("preset").get<std::string>();
        if (name == "desk") {
            c = desk_preset();
        } else if (name == "paper") {
            c = paper_preset();
        } else {
            throw std::invalid_argument("config: unknown preset '" + name + "'");
        }
    }

    if (doc.contains("system")) {
        const auto& s = doc.at("system");
        reject_unknown(s, {"N", "k_ratio", "Q", "L", "M", "gain", "sigma_w_sq", "link_budget", "normalize"},
                       "system");
        if (s.contains("N")) {
            c.sweep_N = s.at("N").is_array() ? s.at("N").get<std::vector<Index>>()
                                             : std::vector<Index>{s.at("N").get<Index>()};
        }
        read(s, "k_ratio", c.k_ratio);
        read(s, "Q", c.Q);
        read(s, "L", c.L);
        read(s, "M", c.M);
        read(s, "gain", c.gain);
        read(s, "sigma_w_sq", c.sigma_w_sq);
        if (s.contains("link_budget")) {
            const auto& lb = s.at("link_budget");
            reject_unknown(lb, {"tx_power_dbm", "noise_psd_dbm_hz", "bandwidth_hz", "distance_km", "pathloss_db"},
                           "system.link_budget");
            double tx = 25.0, psd = -169.0, bw = 10e6, d_km = 1.0;
            read(lb, "tx_power_dbm", tx);
            read(lb, "noise_psd_dbm_hz", psd);
            read(lb, "bandwidth_hz", bw);
            read(lb, "distance_km", d_km);
            double pathloss = default_pathloss_db(d_km);
            read(lb, "pathloss_db", pathloss);
            const auto budget = gain_from_link_budget(tx, psd, bw, pathloss);
            c.gain = budget.gain;
            c.sigma_w_sq = budget.sigma_w_sq;
            const auto mode = s.value("normalize", std::string("gain"));
            if (mode == "gain") {
                c.sigma_w_sq /= c.gain;
                c.gain = 1.0;
            } else if (mode == "noise") {
                c.gain /= c.sigma_w_sq;
                c.sigma_w_sq = 1.0;
            } else if (mode != "none") {
                throw std::invalid_argument("config: system.normalize must be gain, noise or none");
            }
        }
    }
    read(doc, "trials", c.trials);
    read(doc, "master_seed", c.master_seed);
    read(doc, "sequential", c.sequential);
    if (doc.contains("solvers")) {
        c.solvers.clear();
        for (const auto& name : doc.at("solvers")) c.solvers.push_back(solver_from_string(name.get<std::string>()));
    }
    if (doc.contains("schedule")) {
        const auto& s = doc.at("schedule");
        reject_unknown(s, {"omega_base", "nu_cap", "nu_fraction", "eps_k_base", "eps_k_floor", "decay", "eps", "max_outer"},
                       "schedule");
        read(s, "omega_base", c.schedule.omega_base);
        read(s, "nu_cap", c.schedule.nu_cap);
        read(s, "nu_fraction", c.schedule.nu_fraction);
        read(s, "eps_k_base", c.schedule.eps_k_base);
        read(s, "eps_k_floor", c.schedule.eps_k_floor);
        read(s, "decay", c.schedule.decay);
        read(s, "eps", c.schedule.eps);
        read(s, "max_outer", c.schedule.max_outer);
        c.cd.eps = c.schedule.eps;
    }
    if (doc.contains("pg")) {
        const auto& p = doc.at("pg");
        reject_unknown(p, {"alpha_min", "alpha_max", "window", "delta", "shrink", "max_inner", "diagonal_scaling",
                           "reference_eta"},
                       "pg");
        read(p, "alpha_min", c.pg.alpha_min);
        read(p, "alpha_max", c.pg.alpha_max);
        read(p, "window", c.pg.window);
        read(p, "delta", c.pg.delta);
        read(p, "shrink", c.pg.shrink);
        read(p, "max_inner", c.pg.max_inner);
        read(p, "diagonal_scaling", c.pg.diagonal_scaling);
        read(p, "reference_eta", c.pg.reference_eta);
    }
    if (doc.contains("cd")) {
        const auto& d = doc.at("cd");
        reject_unknown(d, {"eps", "max_sweeps", "refresh_period"}, "cd");
        read(d, "eps", c.cd.eps);
        read(d, "max_sweeps", c.cd.max_sweeps);
        read(d, "refresh_period", c.cd.refresh_period);
    }
    if (doc.contains("detection")) {
        reject_unknown(doc.at("detection"), {"theta_factor"}, "detection");
        read(doc.at("detection"), "theta_factor", c.theta_factor);
    }
    if (doc.contains("output")) {
        const auto& o = doc.at("output");
        reject_unknown(o, {"csv", "aggregate", "json"}, "output");
        read(o, "csv", c.csv_path);
        read(o, "aggregate", c.aggregate_path);
        read(o, "json", c.json_path);
    }
    c.validate();
    return c;
}

} // namespace

ExperimentConfig config_from_json(const json& doc, ExperimentConfig base)
{
    try {
        return apply_config(doc, std::move(base));
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
}

ExperimentConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config " + path + ": " + e.what());
    }
    return config_from_json(doc, desk_preset());
}

TrialReport run_trial(const Instance<double>& inst, SolverKind kind, const ExperimentConfig& cfg,
                      std::size_t sweep_index, Index trial)
{
    const auto& sys = inst.cfg;
    TrialReport r;
    r.sweep_index = sweep_index;
    r.trial = trial;
    r.seed = sys.seed;
    r.N = sys.N;
    r.K = sys.K;
    r.Q = sys.Q;
    r.L = sys.L;
    r.M = sys.M;
    r.solver = to_string(kind);

    const double sigma = sys.sigma_w_sq;
    const IndexSet support = inst.truth.support();
    Engine rng(derive_seed({sys.seed, static_cast<std::uint64_t>(Stream::solver), static_cast<std::uint64_t>(kind)}));

    SolveResult<double> res;
    const auto start = std::chrono::steady_clock::now();
    switch (kind) {
    case SolverKind::active_set_pg:
        res = active_set_pg<double>(inst.S, inst.sigma_hat, sigma, cfg.schedule, cfg.pg);
        break;
    case SolverKind::coordinate_descent:
        res = coordinate_descent<double>(inst.S, inst.sigma_hat, sigma, cfg.cd, rng);
        break;
    case SolverKind::ideal_pg:
        res = oracle_solve<double>(inst.S, inst.sigma_hat, sigma, support, OracleMethod::pg, cfg.schedule.eps, cfg.pg,
                                   cfg.cd, rng);
        break;
    case SolverKind::ideal_cd:
        res = oracle_solve<double>(inst.S, inst.sigma_hat, sigma, support, OracleMethod::cd, cfg.schedule.eps, cfg.pg,
                                   cfg.cd, rng);
        break;
    }
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const bool restricted = kind == SolverKind::ideal_pg || kind == SolverKind::ideal_cd;
    r.certified_kkt = fresh_kkt_residual<double>(inst.S, inst.sigma_hat, sigma, res.gamma, restricted ? &support : nullptr);
    r.converged = res.converged;
    r.objective = res.objective;
    r.kkt = res.kkt;
    r.outer_iters = res.outer_iters;
    r.inner_iters = res.inner_iters_total;
    r.sweeps = res.sweeps;
    if (kind == SolverKind::active_set_pg && sys.K > 0) {
        double total = 0;
        for (Index size : res.active_set_sizes) total += static_cast<double>(size);
        r.cardinality_ratio =
            res.active_set_sizes.empty() ? 0.0 : total / static_cast<double>(res.active_set_sizes.size()) / sys.K;
    }
    const auto decision = detect(res.gamma, cfg.theta_factor * sys.gain_of(0), sys.Q);
    r.errors = score(decision, inst.truth.selected);
    return r;
}

std::vector<TrialReport> run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress)
{
    cfg.validate();
    struct Job
    {
        std::size_t sweep;
        Index trial;
    };
    std::vector<Job> jobs;
    for (std::size_t s = 0; s < cfg.sweep_N.size(); ++s) {
        for (Index t = 0; t < cfg.trials; ++t) jobs.push_back({s, t});
    }

    std::vector<std::vector<TrialReport>> results(jobs.size());
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> done{0};
    std::mutex progress_mutex;

    auto work = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            const auto inst = generate_instance<double>(cfg.system_at(jobs[i].sweep, jobs[i].trial));
            for (SolverKind kind : cfg.solvers) {
                results[i].push_back(run_trial(inst, kind, cfg, jobs[i].sweep, jobs[i].trial));
            }
            const std::size_t finished = ++done;
            if (progress) {
                std::lock_guard lock(progress_mutex);
                progress(finished, jobs.size());
            }
        }
    };

    const unsigned workers =
        cfg.sequential ? 1u : std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(), jobs.size()));
    if (workers == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    }

    std::vector<TrialReport> out;
    for (auto& group : results) {
        for (auto& r : group) out.push_back(std::move(r));
    }
    return out;
}

namespace {

struct Accumulator
{
    std::vector<double> values;

    void add(double v) { values.push_back(v); }

    AggregateRow::Stat stat() const
    {
        AggregateRow::Stat s;
        s.count = static_cast<Index>(values.size());
        if (values.empty()) return s;
        double sum = 0;
        for (double v : values) sum += v;
        s.mean = sum / static_cast<double>(values.size());
        if (values.size() > 1) {
            double ss = 0;
            for (double v : values) ss += (v - s.mean) * (v - s.mean);
            s.stderr_ = std::sqrt(ss / static_cast<double>(values.size() - 1) / static_cast<double>(values.size()));
        }
        return s;
    }
};

std::string num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

std::vector<AggregateRow> aggregate(const std::vector<TrialReport>& reports)
{
    struct Group
    {
        AggregateRow row;
        Index converged = 0;
        Accumulator wall, outer, inner, sweeps, ratio, err, obj, kkt;
    };
    std::vector<Group> groups;
    std::map<std::pair<std::size_t, std::string>, std::size_t> lookup;
    for (const auto& r : reports) {
        const auto key = std::make_pair(r.sweep_index, r.solver);
        auto it = lookup.find(key);
        if (it == lookup.end()) {
            it = lookup.emplace(key, groups.size()).first;
            Group g;
            g.row.sweep_index = r.sweep_index;
            g.row.N = r.N;
            g.row.K = r.K;
            g.row.solver = r.solver;
            groups.push_back(std::move(g));
        }
        auto& g = groups[it->second];
        ++g.row.trials;
        if (r.converged) ++g.converged;
        g.wall.add(r.wall_time);
        g.outer.add(static_cast<double>(r.outer_iters));
        g.inner.add(static_cast<double>(r.inner_iters));
        g.sweeps.add(static_cast<double>(r.sweeps));
        if (r.cardinality_ratio) g.ratio.add(*r.cardinality_ratio);
        g.err.add(r.errors.error_rate());
        g.obj.add(r.objective);
        g.kkt.add(r.certified_kkt);
    }
    std::vector<AggregateRow> out;
    for (auto& g : groups) {
        g.row.converged_fraction = static_cast<double>(g.converged) / static_cast<double>(g.row.trials);
        g.row.wall_time = g.wall.stat();
        g.row.outer_iters = g.outer.stat();
        g.row.inner_iters = g.inner.stat();
        g.row.sweeps = g.sweeps.stat();
        g.row.cardinality_ratio = g.ratio.stat();
        g.row.error_rate = g.err.stat();
        g.row.objective = g.obj.stat();
        g.row.kkt = g.kkt.stat();
        out.push_back(g.row);
    }
    return out;
}

std::string trial_csv_header()
{
    return "sweep_index,trial,seed,N,K,Q,L,M,solver,converged,objective,kkt,certified_kkt,outer_iters,inner_iters,"
           "sweeps,cardinality_ratio,missed,false_alarm,data_error,error_rate,wall_time";
}

std::string trial_csv_row(const TrialReport& r)
{
    std::ostringstream os;
    os << r.sweep_index << ',' << r.trial << ',' << r.seed << ',' << r.N << ',' << r.K << ',' << r.Q << ',' << r.L
       << ',' << r.M << ',' << r.solver << ',' << (r.converged ? 1 : 0) << ',' << num(r.objective) << ','
       << num(r.kkt) << ',' << num(r.certified_kkt) << ',' << r.outer_iters << ',' << r.inner_iters << ','
       << r.sweeps << ',' << (r.cardinality_ratio ? num(*r.cardinality_ratio) : std::string()) << ','
       << r.errors.missed << ',' << r.errors.false_alarm << ',' << r.errors.data_error << ','
       << num(r.errors.error_rate()) << ',' << num(r.wall_time);
    return os.str();
}

std::string aggregate_csv_header()
{
    std::string h = "sweep_index,N,K,solver,trials,converged_fraction";
    for (const char* name :
         {"wall_time", "outer_iters", "inner_iters", "sweeps", "cardinality_ratio", "error_rate", "objective", "kkt"}) {
        h += std::string(",") + name + "_mean," + name + "_stderr";
    }
    return h;
}

std::string aggregate_csv_row(const AggregateRow& a)
{
    std::ostringstream os;
    os << a.sweep_index << ',' << a.N << ',' << a.K << ',' << a.solver << ',' << a.trials << ','
       << num(a.converged_fraction);
    for (const auto* s : {&a.wall_time, &a.outer_iters, &a.inner_iters, &a.sweeps, &a.cardinality_ratio,
                          &a.error_rate, &a.objective, &a.kkt}) {
        if (s->count == 0) {
            os << ",,";
        } else {
            os << ',' << num(s->mean) << ',' << num(s->stderr_);
        }
    }
    return os.str();
}

json to_json(const TrialReport& r)
{
    json j = {{"sweep_index", r.sweep_index},
              {"trial", r.trial},
              {"seed", r.seed},
              {"N", r.N},
              {"K", r.K},
              {"Q", r.Q},
              {"L", r.L},
              {"M", r.M},
              {"solver", r.solver},
              {"converged", r.converged},
              {"objective", r.objective},
              {"kkt", r.kkt},
              {"certified_kkt", r.certified_kkt},
              {"outer_iters", r.outer_iters},
              {"inner_iters", r.inner_iters},
              {"sweeps", r.sweeps},
              {"missed", r.errors.missed},
              {"false_alarm", r.errors.false_alarm},
              {"data_error", r.errors.data_error},
              {"error_rate", r.errors.error_rate()},
              {"wall_time", r.wall_time}};
    j["cardinality_ratio"] = r.cardinality_ratio ? json(*r.cardinality_ratio) : json(nullptr);
    return j;
}

json to_json(const AggregateRow& a)
{
    json j = {{"sweep_index", a.sweep_index}, {"N", a.N},      {"K", a.K},
              {"solver", a.solver},           {"trials", a.trials}, {"converged_fraction", a.converged_fraction}};
    auto put = [&](const char* name, const AggregateRow::Stat& s) {
        j[name] = s.count == 0 ? json(nullptr) : json{{"mean", s.mean}, {"stderr", s.stderr_}, {"count", s.count}};
    };
    put("wall_time", a.wall_time);
    put("outer_iters", a.outer_iters);
    put("inner_iters", a.inner_iters);
    put("sweeps", a.sweeps);
    put("cardinality_ratio", a.cardinality_ratio);
    put("error_rate", a.error_rate);
    put("objective", a.objective);
    put("kkt", a.kkt);
    return j;
}

namespace {

void write_text(const std::string& path, const std::string& text)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path);
}

} // namespace

void emit_results(const std::vector<TrialReport>& reports, OutputFormat format, const std::string& path,
                  const std::string& aggregate_path)
{
    if (reports.empty()) throw std::invalid_argument("emit_results: no reports");
    const auto aggregates = aggregate(reports);
    if (format == OutputFormat::csv) {
        std::string body = trial_csv_header() + '\n';
        for (const auto& r : reports) body += trial_csv_row(r) + '\n';
        write_text(path, body);
        if (!aggregate_path.empty()) {
            std::string agg = aggregate_csv_header() + '\n';
            for (const auto& a : aggregates) agg += aggregate_csv_row(a) + '\n';
            write_text(aggregate_path, agg);
        }
        return;
    }
    json trials = json::array();
    for (const auto& r : reports) trials.push_back(to_json(r));
    json aggs = json::array();
    for (const auto& a : aggregates) aggs.push_back(to_json(a));
    write_text(path, json{{"trials", trials}, {"aggregates", aggs}}.dump(2) + '\n');
    if (!aggregate_path.empty()) write_text(aggregate_path, aggs.dump(2) + '\n');
}

} // namespace covdet
