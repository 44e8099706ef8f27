#pragma once

#include "covdet/objective.hpp"
#include "covdet/rng.hpp"
#include "covdet/types.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace covdet {

/**
 * Parameter sequences of the active-set outer loop:
 *
 *   omega_k = omega_base * decay^-k
 *   nu_k    = min(nu_cap * decay^-k, nu_fraction * |min_j grad_j|)
 *   eps_k   = max(eps_k_base * decay^-k, eps_k_floor)
 *
 * Finite termination needs omega_k, nu_k -> 0 and lim eps_k < eps.
 */
struct ActiveSetSchedule
{
    double omega_base = 1e-6;
    double nu_cap = 1e4;
    double nu_fraction = 0.5;
    double eps_k_base = 1.0;
    double eps_k_floor = 0.8e-3;
    double decay = 10.0;
    double eps = 1e-3;
    Index max_outer = 50;

    double omega(Index k) const { return omega_base * std::pow(decay, -static_cast<double>(k)); }

    double nu(Index k, double min_gradient) const
    {
        return std::min(nu_cap * std::pow(decay, -static_cast<double>(k)), nu_fraction * std::abs(min_gradient));
    }

    double eps_k(Index k) const { return std::max(eps_k_base * std::pow(decay, -static_cast<double>(k)), eps_k_floor); }

    void validate() const
    {
        if (!(omega_base > 0) || !(nu_cap > 0) || !(nu_fraction > 0) || !(eps_k_base > 0) || !(eps_k_floor > 0)) {
            throw std::invalid_argument("ActiveSetSchedule: parameters must be positive");
        }
        if (!(decay > 1)) throw std::invalid_argument("ActiveSetSchedule: decay must exceed 1");
        if (!(eps > 0)) throw std::invalid_argument("ActiveSetSchedule: eps must be positive");
        if (!(eps_k_floor < eps)) throw std::invalid_argument("ActiveSetSchedule: eps_k floor must be below eps");
        if (max_outer < 1) throw std::invalid_argument("ActiveSetSchedule: max_outer must be >= 1");
    }
};

/// Safeguarded nonmonotone spectral projected gradient settings.
struct PgConfig
{
    double alpha_min = 1e-10;
    double alpha_max = 1e10;
    Index window = 10;
    double delta = 1e-4;
    double shrink = 0.5;
    Index max_inner = 5000;
    Index max_backtracks = 100;
    /// Scale the gradient by 1 / (s_j^H Sigma^{-1} s_j)^2, the inverse of the
    /// curvature of f along coordinate j at any stationary point.
    bool diagonal_scaling = true;
    /// Weight of the averaged reference C_k = (eta Q C + f) / (eta Q + 1) that
    /// caps the window maximum; negative disables the cap.
    double reference_eta = 0.85;

    void validate() const
    {
        if (!(alpha_min > 0 && alpha_min < alpha_max)) throw std::invalid_argument("PgConfig: need 0 < alpha_min < alpha_max");
        if (window < 1) throw std::invalid_argument("PgConfig: window must be >= 1");
        if (!(delta > 0 && delta < 1)) throw std::invalid_argument("PgConfig: need 0 < delta < 1");
        if (!(shrink > 0 && shrink < 1)) throw std::invalid_argument("PgConfig: need 0 < shrink < 1");
        if (max_inner < 0) throw std::invalid_argument("PgConfig: max_inner must be >= 0");
        if (reference_eta > 1) throw std::invalid_argument("PgConfig: reference_eta must be <= 1");
    }
};

struct CdConfig
{
    double eps = 1e-3;
    Index max_sweeps = 500;
    Index refresh_period = 1000;  ///< nonzero updates between fresh factorizations
};

/// One row of the per-iteration trace (outer iteration, or sweep for CD).
struct TraceRow
{
    Index k;
    Index active_size;
    double objective;
    double kkt;
    double elapsed;
};

using Tracer = std::function<void(const TraceRow&)>;

template <typename Scalar>
struct SolveResult
{
    RVector<Scalar> gamma;
    Scalar objective = 0;
    Scalar kkt = 0;
    bool converged = false;
    Index outer_iters = 0;
    Index inner_iters_total = 0;
    Index sweeps = 0;
    std::vector<Index> active_set_sizes;
    double wall_time = 0;
};

namespace detail {

class Stopwatch
{
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

} // namespace detail

/// {j : gamma_j > omega or grad_j < -nu}, in increasing order.
template <typename Scalar>
IndexSet select_active_set(const RVector<Scalar>& gamma, const RVector<Scalar>& grad, Scalar omega, Scalar nu)
{
    if (gamma.size() != grad.size()) throw std::invalid_argument("select_active_set: size mismatch");
    IndexSet out;
    for (Index j = 0; j < gamma.size(); ++j) {
        if (gamma[j] > omega || grad[j] < -nu) out.push_back(j);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Spectral projected gradient

template <typename Scalar>
struct PgResult
{
    RVector<Scalar> x;
    Scalar objective = 0;
    Scalar residual = 0;
    Index iterations = 0;
    bool converged = false;
};

/// Data at each accepted line-search step; the GLL test is f_new <= reference + sufficient_decrease.
template <typename Scalar>
struct PgAcceptance
{
    Index iteration;
    Scalar f_new;
    Scalar reference;
    Scalar sufficient_decrease;  ///< delta * lambda * <g, d>, nonpositive
    Scalar lambda;
    Scalar step;                 ///< spectral stepsize alpha used for the direction
};

template <typename Scalar>
using PgObserver = std::function<void(const PgAcceptance<Scalar>&)>;

namespace detail {

/// 1 / q_j^2 clipped to a bounded range, q_j = s_j^H Sigma^{-1} s_j.
template <typename Scalar>
RVector<Scalar> curvature_scaling(const RVector<Scalar>& quadratic)
{
    return quadratic.array().square().inverse().min(Scalar(1e12)).max(Scalar(1e-12)).matrix();
}

} // namespace detail

/**
 * Nonmonotone spectral PG on min f(x) s.t. x >= 0.
 *
 * Direction d = [x - alpha D g]_+ - x with D diagonal (identity unless
 * diagonal_scaling is on); backtrack lambda in (0, 1] until
 * f(x + lambda d) <= ref + delta lambda <g, d>, where ref is the max of the
 * last `window` values, capped by the running average C_k when
 * reference_eta >= 0.
 * Stepsizes alternate BB1 = <s, D^{-1} s> / <s, y> (odd iterations) and
 * BB2 = <s, y> / <y, D y> (even), clipped to [alpha_min, alpha_max]; when
 * <s, y> <= 0 the curvature-free ratio sqrt(<s, D^{-1} s> / <y, D y>) is used.
 * The first stepsize is 1 / ||g(x0)||_inf unscaled and 1 scaled.
 * Stops when || [x - g]_+ - x || < tol.
 */
template <typename Scalar>
PgResult<Scalar> spectral_pg(RestrictedObjective<Scalar>& objective, RVector<Scalar> x, Scalar tol,
                             const PgConfig& cfg, const PgObserver<Scalar>& observer = {})
{
    using Vector = RVector<Scalar>;
    cfg.validate();
    if (!(tol > 0)) throw std::invalid_argument("spectral_pg: tolerance must be positive");
    if (x.size() != objective.size()) throw std::invalid_argument("spectral_pg: size mismatch");
    x = x.cwiseMax(Scalar(0));

    PgResult<Scalar> res;
    Scalar f = objective.value(x);
    Vector g = objective.gradient(x);
    Scalar residual = x.size() == 0 ? Scalar(0) : kkt_residual<Scalar>(x, g);

    Vector best_x = x;
    Scalar best_f = f;
    Scalar best_residual = residual;

    if (residual < tol) {
        res.x = std::move(x);
        res.objective = f;
        res.residual = residual;
        res.converged = true;
        return res;
    }

    const Scalar alpha_min = static_cast<Scalar>(cfg.alpha_min);
    const Scalar alpha_max = static_cast<Scalar>(cfg.alpha_max);
    Vector scale = cfg.diagonal_scaling ? detail::curvature_scaling<Scalar>(objective.quadratic())
                                        : Vector::Ones(x.size());
    Scalar alpha = 1;
    if (!cfg.diagonal_scaling) {
        const Scalar g_inf = g.cwiseAbs().maxCoeff();
        alpha = g_inf > 0 ? std::clamp(Scalar(1) / g_inf, alpha_min, alpha_max) : alpha_max;
    }

    std::deque<Scalar> history{f};
    const bool averaged = cfg.reference_eta >= 0;
    const Scalar eta = static_cast<Scalar>(cfg.reference_eta);
    Scalar avg_c = f;
    Scalar avg_q = 1;
    Index it = 0;
    while (it < cfg.max_inner) {
        ++it;
        const Vector d = (x - alpha * scale.cwiseProduct(g)).cwiseMax(Scalar(0)) - x;
        const Scalar gd = g.dot(d);
        Scalar reference = *std::max_element(history.begin(), history.end());
        if (averaged) reference = std::min(reference, avg_c);

        Scalar lambda = 1;
        Vector trial = x + d;
        Scalar f_trial = objective.value(trial);
        Index backtracks = 0;
        while (!(f_trial <= reference + static_cast<Scalar>(cfg.delta) * lambda * gd)) {
            if (++backtracks > cfg.max_backtracks) break;
            lambda *= static_cast<Scalar>(cfg.shrink);
            trial = (x + lambda * d).cwiseMax(Scalar(0));
            f_trial = objective.value(trial);
        }
        if (backtracks > cfg.max_backtracks) break;  // no acceptable step: stagnated in floating point

        if (observer) {
            observer({it, f_trial, reference, static_cast<Scalar>(cfg.delta) * lambda * gd, lambda, alpha});
        }

        const Vector g_trial = objective.gradient(trial);
        if (cfg.diagonal_scaling) scale = detail::curvature_scaling<Scalar>(objective.quadratic());
        const Vector s = trial - x;
        const Vector y = g_trial - g;
        const Scalar sy = s.dot(y);
        const Scalar ss = s.cwiseQuotient(scale).dot(s);
        const Scalar yy = y.cwiseProduct(scale).dot(y);
        if (sy <= 0) {
            alpha = yy > 0 ? std::clamp(std::sqrt(ss / yy), alpha_min, alpha_max) : alpha;
        } else if (it % 2 == 1) {
            alpha = std::clamp(ss / sy, alpha_min, alpha_max);
        } else {
            alpha = std::clamp(sy / yy, alpha_min, alpha_max);
        }

        x = trial;
        g = g_trial;
        f = f_trial;
        history.push_back(f);
        if (averaged) {
            const Scalar q = eta * avg_q + 1;
            avg_c = (eta * avg_q * avg_c + f) / q;
            avg_q = q;
        }
        while (static_cast<Index>(history.size()) > cfg.window) history.pop_front();

        residual = kkt_residual<Scalar>(x, g);
        if (f < best_f) {
            best_f = f;
            best_x = x;
            best_residual = residual;
        }
        if (residual < tol) {
            res.x = std::move(x);
            res.objective = f;
            res.residual = residual;
            res.iterations = it;
            res.converged = true;
            return res;
        }
    }

    res.x = std::move(best_x);
    res.objective = best_f;
    res.residual = best_residual;
    res.iterations = it;
    res.converged = false;
    return res;
}

template <typename Scalar>
PgResult<Scalar> spectral_pg(const CMatrix<Scalar>& columns, const CMatrix<Scalar>& sigma_hat, Scalar sigma_w_sq,
                             const RVector<Scalar>& x0, Scalar tol, const PgConfig& cfg)
{
    RestrictedObjective<Scalar> objective(columns, sigma_hat, sigma_w_sq);
    return spectral_pg<Scalar>(objective, x0, tol, cfg);
}

// ---------------------------------------------------------------------------
// Certification

/**
 * KKT residual of `gamma` from a freshly built factorization, independent of
 * any state a solver carried. With `restrict_to`, the residual is that of the
 * problem over those indices only (all others held at zero).
 */
template <typename Scalar>
Scalar fresh_kkt_residual(const CMatrix<Scalar>& S, const CMatrix<Scalar>& sigma_hat, Scalar sigma_w_sq,
                          const RVector<Scalar>& gamma, const IndexSet* restrict_to = nullptr)
{
    const GammaVector<Scalar> g(gamma);
    const auto state = build_state<Scalar>(S, g, sigma_hat, sigma_w_sq);
    if (restrict_to == nullptr) return kkt_residual<Scalar>(gamma, full_gradient<Scalar>(state, g, S));
    if (restrict_to->empty()) return Scalar(0);
    return kkt_residual<Scalar>(gather<Scalar>(gamma, *restrict_to), gradient<Scalar>(state, g, S, *restrict_to));
}

// ---------------------------------------------------------------------------
// Active-set PG

template <typename Scalar>
SolveResult<Scalar> active_set_pg(const CMatrix<Scalar>& S, const CMatrix<Scalar>& sigma_hat, Scalar sigma_w_sq,
                                  const ActiveSetSchedule& schedule, const PgConfig& cfg, const Tracer& tracer = {})
{
    schedule.validate();
    cfg.validate();
    const detail::Stopwatch clock;
    const Index nq = S.cols();

    SolveResult<Scalar> res;
    GammaVector<Scalar> gamma(nq);
    const auto root = SampleRoot<Scalar>::of(sigma_hat);
    for (Index k = 0;; ++k) {
        const auto state = build_state<Scalar>(S, gamma, sigma_hat, sigma_w_sq);
        const RVector<Scalar> grad = full_gradient<Scalar>(state, gamma, S);
        const Scalar residual = kkt_residual<Scalar>(gamma.values(), grad);
        res.objective = evaluate<Scalar>(state, sigma_hat);
        res.kkt = residual;
        res.outer_iters = k;
        if (tracer) {
            const Index last = res.active_set_sizes.empty() ? 0 : res.active_set_sizes.back();
            tracer({k, last, static_cast<double>(res.objective), static_cast<double>(residual), clock.seconds()});
        }
        if (residual < static_cast<Scalar>(schedule.eps)) {
            res.converged = true;
            break;
        }
        if (k >= schedule.max_outer) break;

        const Scalar omega = static_cast<Scalar>(schedule.omega(k));
        Scalar nu = static_cast<Scalar>(schedule.nu(k, static_cast<double>(grad.minCoeff())));
        IndexSet active = select_active_set<Scalar>(gamma.values(), grad, omega, nu);
        for (int halvings = 0; active.empty() && halvings < 64 && nu > 0; ++halvings) {
            nu /= Scalar(2);
            active = select_active_set<Scalar>(gamma.values(), grad, omega, nu);
        }
        if (active.empty()) {
            // Every gradient is nonnegative: work on the coordinates that violate stationarity.
            const RVector<Scalar> step = (gamma.values() - grad).cwiseMax(Scalar(0)) - gamma.values();
            for (Index j = 0; j < nq; ++j) {
                if (step[j] != Scalar(0)) active.push_back(j);
            }
        }

        RestrictedObjective<Scalar> sub(gather_columns<Scalar>(S, active), root, sigma_w_sq);
        const auto pg = spectral_pg<Scalar>(sub, gather<Scalar>(gamma.values(), active),
                                            static_cast<Scalar>(schedule.eps_k(k)), cfg);
        RVector<Scalar> next = RVector<Scalar>::Zero(nq);
        scatter<Scalar>(pg.x, active, next);
        gamma.assign(std::move(next));
        res.inner_iters_total += pg.iterations;
        res.active_set_sizes.push_back(static_cast<Index>(active.size()));
    }
    res.gamma = gamma.values();
    res.wall_time = clock.seconds();
    return res;
}

// ---------------------------------------------------------------------------
// Coordinate descent

/// Incrementally maintained Sigma^{-1} and Sigma^{-1} SigmaHat Sigma^{-1}.
template <typename Scalar>
struct CdState
{
    CMatrix<Scalar> inverse;
    CMatrix<Scalar> b;

    static CdState from(const CovarianceState<Scalar>& state) { return {state.inverse(), state.b()}; }
};

template <typename Scalar>
struct CdUpdate
{
    Scalar d = 0;
    bool refresh_needed = false;
};

/**
 * Exact minimization of f along coordinate j:
 *
 *   d* = max((s^H B s - s^H A s) / (s^H A s)^2, -gamma_j)
 *
 * then A, B are moved to Sigma + d* s s^H by Sherman-Morrison. If the
 * Sherman-Morrison denominator is not positive the state is left untouched
 * and `refresh_needed` is set.
 */
template <typename Scalar, typename Column>
CdUpdate<Scalar> cd_coordinate_update(CdState<Scalar>& st, const Column& s, Scalar gamma_j,
                                      const CMatrix<Scalar>& sigma_hat)
{
    if (!(gamma_j >= 0)) throw std::invalid_argument("cd_coordinate_update: gamma_j must be >= 0");
    const CVector<Scalar> u = st.inverse * s;
    const CVector<Scalar> v = st.b * s;
    const Scalar a = std::real(s.dot(u));
    const Scalar b = std::real(s.dot(v));

    CdUpdate<Scalar> out;
    out.d = std::max((b - a) / (a * a), -gamma_j);
    if (out.d == Scalar(0)) return out;

    const Scalar denom = Scalar(1) + out.d * a;
    if (!(denom > 0)) {
        out.refresh_needed = true;
        return out;
    }
    const Scalar c = out.d / denom;
    const Scalar t = std::real(u.dot(sigma_hat * u));
    st.inverse.noalias() -= c * u * u.adjoint();
    // B' = B - c (u v^H + v u^H) + c^2 t u u^H
    const CVector<Scalar> left = c * c * t * u - c * v;
    st.b.noalias() += u * left.adjoint();
    st.b.noalias() -= c * v * u.adjoint();
    return out;
}

template <typename Scalar>
SolveResult<Scalar> coordinate_descent(const CMatrix<Scalar>& S, const CMatrix<Scalar>& sigma_hat, Scalar sigma_w_sq,
                                       const CdConfig& cfg, Engine& rng, const Tracer& tracer = {})
{
    if (!(cfg.eps > 0)) throw std::invalid_argument("coordinate_descent: eps must be positive");
    const detail::Stopwatch clock;
    const Index nq = S.cols();
    const Scalar eps = static_cast<Scalar>(cfg.eps);

    SolveResult<Scalar> res;
    RVector<Scalar> gamma = RVector<Scalar>::Zero(nq);

    auto refresh = [&](CdState<Scalar>& st) {
        const GammaVector<Scalar> snapshot(gamma);
        st = CdState<Scalar>::from(build_state<Scalar>(S, snapshot, sigma_hat, sigma_w_sq));
    };
    auto residual_of = [&](const CdState<Scalar>& st) {
        if (nq == 0) return Scalar(0);
        RVector<Scalar> grad(nq);
        const CMatrix<Scalar> d = st.inverse - st.b;
        for (Index start = 0; start < nq; start += detail::kGradientBlock) {
            const Index len = std::min(detail::kGradientBlock, nq - start);
            grad.segment(start, len) = detail::quadratic_forms<Scalar>(d, S.middleCols(start, len));
        }
        return kkt_residual<Scalar>(gamma, grad);
    };

    CdState<Scalar> st;
    refresh(st);
    std::vector<Index> order(static_cast<std::size_t>(nq));
    std::iota(order.begin(), order.end(), Index{0});
    Index since_refresh = 0;

    Scalar residual = residual_of(st);
    if (residual < eps) res.converged = true;

    while (!res.converged && res.sweeps < cfg.max_sweeps) {
        for (Index i = nq - 1; i > 0; --i) {
            std::uniform_int_distribution<Index> pick(0, i);
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick(rng))]);
        }
        for (Index j : order) {
            const auto upd = cd_coordinate_update<Scalar>(st, S.col(j), gamma[j], sigma_hat);
            if (upd.d == Scalar(0)) continue;
            gamma[j] = upd.d == -gamma[j] ? Scalar(0) : std::max(gamma[j] + upd.d, Scalar(0));
            if (upd.refresh_needed || ++since_refresh >= cfg.refresh_period) {
                refresh(st);
                since_refresh = 0;
            }
        }
        ++res.sweeps;
        residual = residual_of(st);
        if (residual < eps) {
            // Confirm against a fresh factorization before declaring success.
            refresh(st);
            since_refresh = 0;
            residual = residual_of(st);
            res.converged = residual < eps;
        }
        if (tracer) {
            const GammaVector<Scalar> snapshot(gamma);
            const auto fresh = build_state<Scalar>(S, snapshot, sigma_hat, sigma_w_sq);
            const Index support = (gamma.array() > Scalar(0)).count();
            tracer({res.sweeps, support, static_cast<double>(evaluate<Scalar>(fresh, sigma_hat)),
                    static_cast<double>(residual), clock.seconds()});
        }
    }

    const GammaVector<Scalar> final_gamma(gamma);
    const auto fresh = build_state<Scalar>(S, final_gamma, sigma_hat, sigma_w_sq);
    res.objective = evaluate<Scalar>(fresh, sigma_hat);
    res.kkt = kkt_residual<Scalar>(gamma, full_gradient<Scalar>(fresh, final_gamma, S));
    res.converged = res.kkt < eps;
    res.gamma = std::move(gamma);
    res.wall_time = clock.seconds();
    return res;
}

// ---------------------------------------------------------------------------
// Oracle (known-support) baselines

enum class OracleMethod { pg, cd };

/// Solves the problem over `support` only, everything else held at zero.
template <typename Scalar>
SolveResult<Scalar> oracle_solve(const CMatrix<Scalar>& S, const CMatrix<Scalar>& sigma_hat, Scalar sigma_w_sq,
                                 const IndexSet& support, OracleMethod method, double eps, const PgConfig& pg_cfg,
                                 CdConfig cd_cfg, Engine& rng)
{
    const detail::Stopwatch clock;
    SolveResult<Scalar> res;
    res.gamma = RVector<Scalar>::Zero(S.cols());
    const CMatrix<Scalar> columns = gather_columns<Scalar>(S, support);

    if (support.empty()) {
        RestrictedObjective<Scalar> empty(columns, sigma_hat, sigma_w_sq);
        res.objective = empty.value(RVector<Scalar>(0));
        res.converged = true;
        res.wall_time = clock.seconds();
        return res;
    }

    if (method == OracleMethod::pg) {
        RestrictedObjective<Scalar> sub(columns, sigma_hat, sigma_w_sq);
        const auto pg = spectral_pg<Scalar>(sub, RVector<Scalar>::Zero(columns.cols()), static_cast<Scalar>(eps), pg_cfg);
        scatter<Scalar>(pg.x, support, res.gamma);
        res.objective = pg.objective;
        res.kkt = pg.residual;
        res.converged = pg.converged;
        res.inner_iters_total = pg.iterations;
    } else {
        cd_cfg.eps = eps;
        const auto cd = coordinate_descent<Scalar>(columns, sigma_hat, sigma_w_sq, cd_cfg, rng);
        scatter<Scalar>(cd.gamma, support, res.gamma);
        res.objective = cd.objective;
        res.kkt = cd.kkt;
        res.converged = cd.converged;
        res.sweeps = cd.sweeps;
    }
    res.wall_time = clock.seconds();
    return res;
}

} // namespace covdet
