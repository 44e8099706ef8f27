#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace covdet {

using Index = Eigen::Index;

template <typename Scalar>
using Complex = std::complex<Scalar>;

template <typename Scalar>
using CMatrix = Eigen::Matrix<Complex<Scalar>, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using CVector = Eigen::Matrix<Complex<Scalar>, Eigen::Dynamic, 1>;

template <typename Scalar>
using RVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Ordered list of flat sequence indices j = n * Q + q.
using IndexSet = std::vector<Index>;

namespace detail {

inline std::uint64_t next_stamp()
{
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

} // namespace detail

/**
 * Nonnegative per-sequence power vector gamma, flat-indexed by n * Q + q.
 *
 * Every mutation draws a fresh stamp from a process-wide monotone counter, so
 * a covariance state built from one snapshot can detect that it is stale with
 * a single integer comparison.
 */
template <typename Scalar>
class GammaVector
{
public:
    GammaVector() : stamp_(detail::next_stamp()) {}

    explicit GammaVector(Index size)
        : values_(RVector<Scalar>::Zero(size)), stamp_(detail::next_stamp())
    {
    }

    explicit GammaVector(RVector<Scalar> values) : stamp_(detail::next_stamp())
    {
        assign(std::move(values));
    }

    Index size() const { return values_.size(); }
    Scalar operator[](Index j) const { return values_[j]; }
    const RVector<Scalar>& values() const { return values_; }
    std::uint64_t stamp() const { return stamp_; }

    void set(Index j, Scalar value)
    {
        if (!(value >= Scalar(0))) {
            throw std::invalid_argument("GammaVector: entries must be nonnegative");
        }
        values_[j] = value;
        stamp_ = detail::next_stamp();
    }

    void assign(RVector<Scalar> values)
    {
        if (values.size() > 0 && !(values.minCoeff() >= Scalar(0))) {
            throw std::invalid_argument("GammaVector: entries must be nonnegative");
        }
        values_ = std::move(values);
        stamp_ = detail::next_stamp();
    }

    IndexSet support() const
    {
        IndexSet out;
        for (Index j = 0; j < values_.size(); ++j) {
            if (values_[j] > Scalar(0)) out.push_back(j);
        }
        return out;
    }

private:
    RVector<Scalar> values_;
    std::uint64_t stamp_;
};

/// Columns of `S` listed in `indices`, in order.
template <typename Scalar>
CMatrix<Scalar> gather_columns(const CMatrix<Scalar>& S, const IndexSet& indices)
{
    CMatrix<Scalar> out(S.rows(), static_cast<Index>(indices.size()));
    for (std::size_t k = 0; k < indices.size(); ++k) {
        out.col(static_cast<Index>(k)) = S.col(indices[k]);
    }
    return out;
}

template <typename Scalar>
RVector<Scalar> gather(const RVector<Scalar>& v, const IndexSet& indices)
{
    RVector<Scalar> out(static_cast<Index>(indices.size()));
    for (std::size_t k = 0; k < indices.size(); ++k) {
        out[static_cast<Index>(k)] = v[indices[k]];
    }
    return out;
}

template <typename Scalar>
void scatter(const RVector<Scalar>& sub, const IndexSet& indices, RVector<Scalar>& full)
{
    for (std::size_t k = 0; k < indices.size(); ++k) {
        full[indices[k]] = sub[static_cast<Index>(k)];
    }
}

inline IndexSet all_indices(Index n)
{
    IndexSet out(static_cast<std::size_t>(n));
    for (Index j = 0; j < n; ++j) out[static_cast<std::size_t>(j)] = j;
    return out;
}

} // namespace covdet
