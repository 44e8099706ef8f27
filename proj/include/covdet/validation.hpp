#pragma once

// Independent reference computations used to check the objective and solver
// kernels. Everything here works on explicitly formed dense matrices in long
// double with LU factorizations: no Cholesky, no cached inverses, no
// Sherman-Morrison, no closed forms.

#include "covdet/model.hpp"
#include "covdet/objective.hpp"
#include "covdet/solvers.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>

namespace covdet::validation {

using Real = long double;
using DenseMatrix = CMatrix<Real>;

template <typename Scalar>
DenseMatrix widen(const CMatrix<Scalar>& m)
{
    return m.template cast<Complex<Real>>();
}

inline DenseMatrix dense_covariance(const DenseMatrix& S, const RVector<Real>& gamma, Real sigma_w_sq)
{
    DenseMatrix sigma = DenseMatrix::Identity(S.rows(), S.rows()) * sigma_w_sq;
    for (Index j = 0; j < S.cols(); ++j) {
        if (gamma[j] != 0) sigma += gamma[j] * S.col(j) * S.col(j).adjoint();
    }
    return sigma;
}

/// log|Sigma| + Tr(Sigma^{-1} SigmaHat) via LU and an explicit inverse.
inline Real dense_objective(const DenseMatrix& S, const RVector<Real>& gamma, const DenseMatrix& sigma_hat,
                            Real sigma_w_sq)
{
    const DenseMatrix sigma = dense_covariance(S, gamma, sigma_w_sq);
    const Eigen::PartialPivLU<DenseMatrix> lu(sigma);
    Real log_det = 0;
    for (Index i = 0; i < sigma.rows(); ++i) log_det += std::log(std::abs(lu.matrixLU()(i, i)));
    const DenseMatrix inv = lu.inverse();
    return log_det + std::real((inv * sigma_hat).trace());
}

/// log|I + E| from the series sum_k (-1)^{k+1} Tr(E^k) / k when E is small, else from LU.
inline Real log_det_identity_plus(const DenseMatrix& E)
{
    const Index n = E.rows();
    if (E.norm() < Real(0.25)) {
        Real sum = 0;
        DenseMatrix power = E;
        for (int k = 1; k <= 200; ++k) {
            const Real term = std::real(power.trace()) / static_cast<Real>(k);
            sum += k % 2 == 1 ? term : -term;
            if (std::abs(term) <= std::numeric_limits<Real>::epsilon() * std::abs(sum) * Real(1e-3)) break;
            power = power * E;
        }
        return sum;
    }
    const Eigen::PartialPivLU<DenseMatrix> lu(DenseMatrix::Identity(n, n) + E);
    Real log_det = 0;
    for (Index i = 0; i < n; ++i) log_det += std::log(std::abs(lu.matrixLU()(i, i)));
    return log_det;
}

/**
 * f(gamma + u e_j) - f(gamma + v e_j), formed densely so that its rounding
 * error shrinks with |u - v|:
 *
 *   Sigma_u^{-1} - Sigma_v^{-1} = (v - u) Sigma_u^{-1} s s^H Sigma_v^{-1},
 *   log|Sigma_u| - log|Sigma_v| = log|I + (u - v) Sigma_v^{-1} s s^H|.
 */
inline Real dense_coordinate_difference(const DenseMatrix& S, const RVector<Real>& gamma, const DenseMatrix& sigma_hat,
                                        Real sigma_w_sq, Index j, Real u, Real v)
{
    const DenseMatrix base = dense_covariance(S, gamma, sigma_w_sq);
    const DenseMatrix ss = S.col(j) * S.col(j).adjoint();
    const Eigen::PartialPivLU<DenseMatrix> lu_u(base + u * ss);
    const Eigen::PartialPivLU<DenseMatrix> lu_v(base + v * ss);
    const DenseMatrix right = lu_v.solve(sigma_hat);
    const DenseMatrix inv_diff = (v - u) * lu_u.solve(ss * right);
    const DenseMatrix E = (u - v) * lu_v.solve(ss);
    return log_det_identity_plus(E) + std::real(inv_diff.trace());
}

/// Golden-section minimizer on [lo, hi] of a unimodal phi, given diff(a, b) = phi(a) - phi(b).
inline Real golden_section(const std::function<Real(Real, Real)>& diff, Real lo, Real hi, Real tol)
{
    const Real inv_phi = (std::sqrt(Real(5)) - 1) / 2;
    Real a = lo, b = hi;
    Real c = b - inv_phi * (b - a);
    Real d = a + inv_phi * (b - a);
    while (b - a > tol) {
        if (diff(c, d) <= 0) {
            b = d;
            d = c;
            c = b - inv_phi * (b - a);
        } else {
            a = c;
            c = d;
            d = a + inv_phi * (b - a);
        }
    }
    const Real mid = (a + b) / 2;
    // The clipped case: the boundary itself beats every interior probe.
    if (diff(lo, mid) <= 0) return lo;
    return mid;
}

/// Minimizer of d -> f(gamma + d e_j) over d >= -gamma_j.
inline Real coordinate_minimizer(const DenseMatrix& S, const RVector<Real>& gamma, const DenseMatrix& sigma_hat,
                                 Real sigma_w_sq, Index j)
{
    auto diff = [&](Real u, Real v) { return dense_coordinate_difference(S, gamma, sigma_hat, sigma_w_sq, j, u, v); };
    const Real lo = -gamma[j];
    Real hi = 1;
    while (diff(2 * hi, hi) < 0 && hi < Real(1e12)) hi *= 2;
    return golden_section(diff, lo, 2 * hi, Real(1e-13));
}

/// A small random problem: instance data plus an off-truth evaluation point.
struct SmallProblem
{
    CMatrix<double> S;
    CMatrix<double> sigma_hat;
    RVector<double> gamma;
    double sigma_w_sq;
};

inline SmallProblem random_small_problem(std::uint64_t seed, Index max_L = 30, Index max_nq = 60)
{
    Engine rng(derive_seed({seed, 0x5eedULL}));
    std::uniform_int_distribution<Index> pick_L(2, max_L);
    SystemConfig cfg;
    cfg.L = pick_L(rng);
    cfg.Q = std::uniform_int_distribution<Index>(1, 2)(rng);
    cfg.N = std::uniform_int_distribution<Index>(1, max_nq / cfg.Q)(rng);
    cfg.M = std::uniform_int_distribution<Index>(8, 64)(rng);
    cfg.K = std::uniform_int_distribution<Index>(0, cfg.N)(rng);
    cfg.sigma_w_sq = std::uniform_real_distribution<double>(0.3, 2.0)(rng);
    cfg.gain = {std::uniform_real_distribution<double>(0.2, 2.0)(rng)};
    cfg.seed = seed;
    const auto inst = generate_instance<double>(cfg);

    SmallProblem p{inst.S, inst.sigma_hat, RVector<double>::Zero(cfg.num_sequences()), cfg.sigma_w_sq};
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (Index j = 0; j < p.gamma.size(); ++j) {
        if (unit(rng) < 0.5) p.gamma[j] = unit(rng);
    }
    return p;
}

struct GradientCheck
{
    Index checked = 0;
    double max_rel_error = 0;
};

/// Analytic gradient vs. central differences of the dense objective (step h).
inline GradientCheck check_gradient(std::uint64_t seed, Index instances, double h = 1e-6)
{
    GradientCheck out;
    for (Index t = 0; t < instances; ++t) {
        const auto p = random_small_problem(derive_seed({seed, static_cast<std::uint64_t>(t)}));
        const GammaVector<double> gamma(p.gamma);
        const auto state = build_state<double>(p.S, gamma, p.sigma_hat, p.sigma_w_sq);
        const RVector<double> grad = full_gradient<double>(state, gamma, p.S);

        const DenseMatrix S = widen<double>(p.S);
        const DenseMatrix sigma_hat = widen<double>(p.sigma_hat);
        Engine rng(derive_seed({seed, static_cast<std::uint64_t>(t), 7}));
        const Index j = std::uniform_int_distribution<Index>(0, p.gamma.size() - 1)(rng);
        RVector<Real> plus = p.gamma.cast<Real>();
        RVector<Real> minus = plus;
        plus[j] += h;
        minus[j] -= h;
        const Real fd = (dense_objective(S, plus, sigma_hat, p.sigma_w_sq) -
                         dense_objective(S, minus, sigma_hat, p.sigma_w_sq)) /
                        (2 * static_cast<Real>(h));
        const double denom = std::max(std::abs(grad[j]), std::abs(static_cast<double>(fd)));
        const double err = std::abs(grad[j] - static_cast<double>(fd)) / (denom > 0 ? denom : 1.0);
        out.max_rel_error = std::max(out.max_rel_error, err);
        ++out.checked;
    }
    return out;
}

struct CoordinateCheck
{
    Index checked = 0;
    Index boundary_cases = 0;
    double max_abs_error = 0;
};

/// Closed-form coordinate step vs. golden-section minimization of the dense objective.
inline CoordinateCheck check_coordinate_steps(std::uint64_t seed, Index coordinates)
{
    CoordinateCheck out;
    for (Index t = 0; t < coordinates; ++t) {
        auto p = random_small_problem(derive_seed({seed, static_cast<std::uint64_t>(t), 11}), 10, 16);
        Engine rng(derive_seed({seed, static_cast<std::uint64_t>(t), 13}));
        const Index j = std::uniform_int_distribution<Index>(0, p.gamma.size() - 1)(rng);
        // Every third coordinate starts far above its optimum so the clip at -gamma_j is exercised.
        if (t % 3 == 0) p.gamma[j] = 5.0 + 5.0 * std::uniform_real_distribution<double>(0, 1)(rng);

        const GammaVector<double> gamma(p.gamma);
        auto st = CdState<double>::from(build_state<double>(p.S, gamma, p.sigma_hat, p.sigma_w_sq));
        const auto upd = cd_coordinate_update<double>(st, p.S.col(j), p.gamma[j], p.sigma_hat);

        const Real ref = coordinate_minimizer(widen<double>(p.S), p.gamma.cast<Real>(), widen<double>(p.sigma_hat),
                                              p.sigma_w_sq, j);
        if (upd.d == -p.gamma[j] && p.gamma[j] > 0) ++out.boundary_cases;
        out.max_abs_error = std::max(out.max_abs_error, std::abs(upd.d - static_cast<double>(ref)));
        ++out.checked;
    }
    return out;
}

} // namespace covdet::validation
