#pragma once

#include "covdet/types.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <utility>

namespace covdet {

/// sigma_w_sq * I + sum over the support of x of x_j s_j s_j^H.
template <typename Scalar>
CMatrix<Scalar> assemble_covariance(const CMatrix<Scalar>& S, const RVector<Scalar>& x, Scalar sigma_w_sq)
{
    const Index L = S.rows();
    CMatrix<Scalar> sigma = CMatrix<Scalar>::Identity(L, L) * sigma_w_sq;
    IndexSet support;
    for (Index j = 0; j < x.size(); ++j) {
        if (x[j] > Scalar(0)) support.push_back(j);
    }
    if (support.empty()) return sigma;
    const CMatrix<Scalar> cols = gather_columns<Scalar>(S, support);
    const RVector<Scalar> weights = gather<Scalar>(x, support);
    sigma.noalias() += (cols * weights.asDiagonal()) * cols.adjoint();
    return sigma;
}

template <typename Scalar>
CMatrix<Scalar> hermitian_part(const CMatrix<Scalar>& m)
{
    return (m + m.adjoint()) / Scalar(2);
}

template <typename Scalar>
Scalar log_det_from_chol(const Eigen::LLT<CMatrix<Scalar>>& llt)
{
    Scalar acc = 0;
    const auto& lu = llt.matrixLLT();
    for (Index i = 0; i < lu.rows(); ++i) acc += std::log(std::real(lu(i, i)));
    return Scalar(2) * acc;
}

/**
 * Factorized covariance Sigma(gamma) = S Gamma S^H + sigma_w^2 I, with the two
 * matrices the gradient needs:
 *
 *   A = Sigma^{-1},   B = Sigma^{-1} SigmaHat Sigma^{-1}.
 *
 * Immutable once built. Records the stamp of the gamma it was built from.
 */
template <typename Scalar>
class CovarianceState
{
public:
    using Matrix = CMatrix<Scalar>;

    static CovarianceState build(const Matrix& S, const GammaVector<Scalar>& gamma, const Matrix& sigma_hat,
                                 Scalar sigma_w_sq)
    {
        if (!(sigma_w_sq > Scalar(0))) throw std::invalid_argument("build_state: sigma_w_sq must be > 0");
        if (gamma.size() != S.cols() || sigma_hat.rows() != S.rows() || sigma_hat.cols() != S.rows()) {
            throw std::invalid_argument("build_state: dimension mismatch");
        }
        CovarianceState st;
        st.stamp_ = gamma.stamp();
        st.sigma_w_sq_ = sigma_w_sq;
        st.sigma_ = assemble_covariance<Scalar>(S, gamma.values(), sigma_w_sq);
        st.chol_.compute(st.sigma_);
        if (st.chol_.info() != Eigen::Success) {
            throw std::runtime_error("build_state: covariance is not positive definite");
        }
        st.log_det_ = log_det_from_chol<Scalar>(st.chol_);
        const Index L = S.rows();
        st.inverse_ = hermitian_part<Scalar>(st.chol_.solve(Matrix::Identity(L, L)));
        Matrix tmp = sigma_hat * st.inverse_;
        st.b_ = st.inverse_ * tmp;
        st.b_ = hermitian_part<Scalar>(st.b_);
        return st;
    }

    const Matrix& sigma() const { return sigma_; }
    const Eigen::LLT<Matrix>& chol() const { return chol_; }
    const Matrix& inverse() const { return inverse_; }
    const Matrix& b() const { return b_; }
    Scalar log_det() const { return log_det_; }
    Scalar sigma_w_sq() const { return sigma_w_sq_; }
    std::uint64_t stamp() const { return stamp_; }

    bool matches(const GammaVector<Scalar>& gamma) const { return gamma.stamp() == stamp_; }

private:
    CovarianceState() = default;

    Matrix sigma_;
    Eigen::LLT<Matrix> chol_;
    Matrix inverse_;
    Matrix b_;
    Scalar log_det_ = 0;
    Scalar sigma_w_sq_ = 0;
    std::uint64_t stamp_ = 0;
};

template <typename Scalar>
CovarianceState<Scalar> build_state(const CMatrix<Scalar>& S, const GammaVector<Scalar>& gamma,
                                    const CMatrix<Scalar>& sigma_hat, Scalar sigma_w_sq)
{
    return CovarianceState<Scalar>::build(S, gamma, sigma_hat, sigma_w_sq);
}

/// Tr(A X) for Hermitian X, without forming the product.
template <typename Scalar>
Scalar trace_product(const CMatrix<Scalar>& a, const CMatrix<Scalar>& hermitian)
{
    return std::real(a.cwiseProduct(hermitian.conjugate()).sum());
}

/// log|Sigma| + Tr(Sigma^{-1} SigmaHat).
template <typename Scalar>
Scalar evaluate(const CovarianceState<Scalar>& state, const CMatrix<Scalar>& sigma_hat)
{
    return state.log_det() + trace_product<Scalar>(state.inverse(), sigma_hat);
}

namespace detail {

// Re(s^H D s) for each column of `cols`.
template <typename Scalar, typename Cols>
RVector<Scalar> quadratic_forms(const CMatrix<Scalar>& d, const Cols& cols)
{
    const CMatrix<Scalar> dc = d * cols;
    return cols.conjugate().cwiseProduct(dc).colwise().sum().real().transpose();
}

constexpr Index kGradientBlock = 512;

} // namespace detail

/// d f / d gamma_j = s_j^H A s_j - s_j^H B s_j for every j in `indices`.
template <typename Scalar>
RVector<Scalar> gradient(const CovarianceState<Scalar>& state, const GammaVector<Scalar>& gamma,
                         const CMatrix<Scalar>& S, const IndexSet& indices)
{
    if (!state.matches(gamma)) throw std::logic_error("gradient: covariance state is stale");
    const CMatrix<Scalar> d = state.inverse() - state.b();
    RVector<Scalar> out(static_cast<Index>(indices.size()));
    for (Index start = 0; start < out.size(); start += detail::kGradientBlock) {
        const Index len = std::min(detail::kGradientBlock, out.size() - start);
        IndexSet block(indices.begin() + start, indices.begin() + start + len);
        out.segment(start, len) = detail::quadratic_forms<Scalar>(d, gather_columns<Scalar>(S, block));
    }
    return out;
}

/// Full gradient over all NQ sequences, O(NQ L^2).
template <typename Scalar>
RVector<Scalar> full_gradient(const CovarianceState<Scalar>& state, const GammaVector<Scalar>& gamma,
                              const CMatrix<Scalar>& S)
{
    if (!state.matches(gamma)) throw std::logic_error("gradient: covariance state is stale");
    const CMatrix<Scalar> d = state.inverse() - state.b();
    RVector<Scalar> out(S.cols());
    for (Index start = 0; start < S.cols(); start += detail::kGradientBlock) {
        const Index len = std::min(detail::kGradientBlock, S.cols() - start);
        out.segment(start, len) = detail::quadratic_forms<Scalar>(d, S.middleCols(start, len));
    }
    return out;
}

/// || [gamma - grad]_+ - gamma ||_2, zero exactly at first-order stationary points.
template <typename Scalar>
Scalar kkt_residual(const RVector<Scalar>& gamma, const RVector<Scalar>& grad)
{
    if (gamma.size() != grad.size()) throw std::invalid_argument("kkt_residual: size mismatch");
    return ((gamma - grad).cwiseMax(Scalar(0)) - gamma).norm();
}

/// A factor C with SigmaHat = C C^H, from a pivoted LDL^H with negative pivots clipped.
template <typename Scalar>
struct SampleRoot
{
    CMatrix<Scalar> factor;

    static SampleRoot of(const CMatrix<Scalar>& sigma_hat)
    {
        const Eigen::LDLT<CMatrix<Scalar>> ldlt(hermitian_part<Scalar>(sigma_hat));
        const RVector<Scalar> d = ldlt.vectorD().real().cwiseMax(Scalar(0)).cwiseSqrt();
        CMatrix<Scalar> lower = ldlt.matrixL();
        lower = lower * d.asDiagonal();
        return {ldlt.transpositionsP().transpose() * lower};
    }
};

/**
 * f restricted to a fixed column subset S_A (n columns), evaluated without
 * forming Sigma^{-1}. With SigmaHat = C C^H two equivalent routes are used:
 *
 *   full (L-space):   Sigma = R R^H, W = R^{-1} S_A, T = R^{-1} C,
 *                     Tr(Sigma^{-1} SigmaHat) = |T|_F^2,
 *                     grad_j = |w_j|^2 - |T^H w_j|^2;
 *   compact (n-space, Woodbury): with D = diag(sqrt(x)), G = S_A^H S_A,
 *                     F = S_A^H C, P = sigma^2 I + D G D,
 *                     Sigma^{-1} S_A = S_A (I - D P^{-1} D G) / sigma^2.
 *
 * The cheaper route for (L, n, rank C) is fixed at construction. The last
 * point is cached so value and gradient at the same x factorize once.
 * quadratic() exposes s_j^H Sigma^{-1} s_j from the last gradient call.
 */
template <typename Scalar>
class RestrictedObjective
{
public:
    using Matrix = CMatrix<Scalar>;
    using Vector = RVector<Scalar>;

    RestrictedObjective(Matrix columns, const SampleRoot<Scalar>& root, Scalar sigma_w_sq)
        : columns_(std::move(columns)), root_(root.factor), sigma_w_sq_(sigma_w_sq)
    {
        if (!(sigma_w_sq > Scalar(0))) throw std::invalid_argument("RestrictedObjective: sigma_w_sq must be > 0");
        if (root_.rows() != columns_.rows()) throw std::invalid_argument("RestrictedObjective: dimension mismatch");
        const double L = static_cast<double>(columns_.rows());
        const double n = static_cast<double>(columns_.cols());
        const double r = static_cast<double>(root_.cols());
        const double full_cost = L * L * L / 3 + L * L * r / 2 + 2 * L * L * n;
        const double compact_cost = 4 * n * n * n / 3 + 3 * n * n * r / 2;
        compact_ = compact_cost < full_cost;
        if (compact_) {
            gram_ = columns_.adjoint() * columns_;
            cross_ = columns_.adjoint() * root_;
            trace_hat_ = root_.squaredNorm();
        }
    }

    RestrictedObjective(Matrix columns, const Matrix& sigma_hat, Scalar sigma_w_sq)
        : RestrictedObjective(std::move(columns), SampleRoot<Scalar>::of(sigma_hat), sigma_w_sq)
    {
    }

    Index size() const { return columns_.cols(); }
    const Matrix& columns() const { return columns_; }
    bool compact() const { return compact_; }

    Scalar value(const Vector& x)
    {
        factorize(x);
        return value_;
    }

    Vector gradient(const Vector& x)
    {
        factorize(x);
        if (columns_.cols() == 0) return Vector(0);
        return compact_ ? compact_gradient() : full_gradient();
    }

    /// s_j^H Sigma^{-1} s_j at the point of the last gradient call.
    const Vector& quadratic() const { return quad_; }

    Index factorizations() const { return factorizations_; }

private:
    void factorize(const Vector& x)
    {
        if (have_ && x.size() == point_.size() && x == point_) return;
        if (x.size() != columns_.cols()) throw std::invalid_argument("RestrictedObjective: size mismatch");
        root_x_ = x.cwiseMax(Scalar(0)).cwiseSqrt();
        const Index L = columns_.rows();
        if (compact_) {
            Matrix p = root_x_.asDiagonal() * gram_ * root_x_.asDiagonal();
            p.diagonal().array() += sigma_w_sq_;
            chol_.compute(p);
            check_factorization();
            // Tr(Sigma^{-1} SigmaHat) = (Tr SigmaHat - |P^{-1/2} D F|_F^2) / sigma^2
            Matrix dc = root_x_.asDiagonal() * cross_;
            chol_.matrixL().solveInPlace(dc);
            value_ = static_cast<Scalar>(L - columns_.cols()) * std::log(sigma_w_sq_) +
                     log_det_from_chol<Scalar>(chol_) + (trace_hat_ - dc.squaredNorm()) / sigma_w_sq_;
        } else {
            Matrix sigma = Matrix::Identity(L, L) * sigma_w_sq_;
            if (columns_.cols() > 0) {
                const Matrix scaled = columns_ * root_x_.asDiagonal();
                sigma.template selfadjointView<Eigen::Lower>().rankUpdate(scaled);
            }
            chol_.compute(sigma);
            check_factorization();
            white_root_ = root_;
            chol_.matrixL().solveInPlace(white_root_);
            value_ = log_det_from_chol<Scalar>(chol_) + white_root_.squaredNorm();
        }
        point_ = x;
        have_ = true;
        ++factorizations_;
    }

    void check_factorization() const
    {
        if (chol_.info() != Eigen::Success) {
            throw std::runtime_error("RestrictedObjective: covariance is not positive definite");
        }
    }

    Vector full_gradient()
    {
        Matrix w = columns_;
        chol_.matrixL().solveInPlace(w);
        const Matrix tw = white_root_.adjoint() * w;
        quad_ = w.colwise().squaredNorm().transpose();
        return quad_ - tw.colwise().squaredNorm().transpose();
    }

    Vector compact_gradient()
    {
        // V = P^{-1} D G, M = I - D V; sigma^2 Sigma^{-1} S_A = S_A M.
        const Matrix dg = root_x_.asDiagonal() * gram_;
        const Matrix v = chol_.solve(dg);
        // diag(G M) = diag(G) - colsum(conj(D G) .* V), using G = G^H.
        quad_ = (gram_.diagonal().real() - dg.conjugate().cwiseProduct(v).colwise().sum().real().transpose()) /
                sigma_w_sq_;
        // C^H Sigma^{-1} S_A = (F^H - (F^H D) V) / sigma^2
        const Matrix fd = cross_.adjoint() * root_x_.asDiagonal();
        const Matrix cz = cross_.adjoint() - fd * v;
        return quad_ - cz.colwise().squaredNorm().transpose() / (sigma_w_sq_ * sigma_w_sq_);
    }

    Matrix columns_;
    Matrix root_;
    Scalar sigma_w_sq_;
    bool compact_ = false;
    Matrix gram_;
    Matrix cross_;
    Scalar trace_hat_ = 0;

    Eigen::LLT<Matrix> chol_;
    Matrix white_root_;
    Vector root_x_;
    Vector quad_;
    Vector point_;
    Scalar value_ = 0;
    bool have_ = false;
    Index factorizations_ = 0;
};

} // namespace covdet
