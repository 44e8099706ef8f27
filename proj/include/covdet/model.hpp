#pragma once

#include "covdet/rng.hpp"
#include "covdet/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace covdet {

/// Dimensions and link parameters of one uplink random-access block.
struct SystemConfig
{
    Index N = 1;            ///< devices
    Index Q = 1;            ///< sequences per device (2^J)
    Index L = 1;            ///< sequence length
    Index M = 1;            ///< BS antennas
    Index K = 0;            ///< active devices
    double sigma_w_sq = 1;  ///< noise power over transmit power
    std::vector<double> gain{1.0};  ///< one shared gain, or one per device
    std::uint64_t seed = 0;

    Index num_sequences() const { return N * Q; }

    double gain_of(Index n) const
    {
        return gain.size() == 1 ? gain.front() : gain[static_cast<std::size_t>(n)];
    }

    void validate() const
    {
        if (N < 1 || Q < 1 || L < 1 || M < 1) {
            throw std::invalid_argument("SystemConfig: N, Q, L, M must be >= 1");
        }
        if (K < 0 || K > N) throw std::invalid_argument("SystemConfig: need 0 <= K <= N");
        if (!(sigma_w_sq > 0)) throw std::invalid_argument("SystemConfig: sigma_w_sq must be > 0");
        if (gain.size() != 1 && gain.size() != static_cast<std::size_t>(N)) {
            throw std::invalid_argument("SystemConfig: gain must be scalar or length N");
        }
        for (double g : gain) {
            if (!(g >= 0)) throw std::invalid_argument("SystemConfig: gains must be >= 0");
        }
    }

    /// Same physical block expressed in units of the noise power (sigma_w_sq = 1).
    SystemConfig noise_normalized() const
    {
        SystemConfig out = *this;
        for (double& g : out.gain) g /= sigma_w_sq;
        out.sigma_w_sq = 1.0;
        return out;
    }
};

/// Ground-truth sequence selection and the implied gamma.
template <typename Scalar>
struct TruthAssignment
{
    Eigen::MatrixXi chi;                 ///< N x Q, at most one 1 per row
    std::vector<Index> selected;         ///< per device: chosen q, or -1 if inactive
    RVector<Scalar> gamma_true;          ///< flat n * Q + q

    IndexSet support() const
    {
        IndexSet out;
        const Index Q = chi.cols();
        for (std::size_t n = 0; n < selected.size(); ++n) {
            if (selected[n] >= 0) out.push_back(static_cast<Index>(n) * Q + selected[n]);
        }
        return out;
    }

    Index active_count() const
    {
        return static_cast<Index>(std::count_if(selected.begin(), selected.end(), [](Index q) { return q >= 0; }));
    }
};

/// L x NQ matrix of i.i.d. unit-variance circular complex Gaussian entries.
template <typename Scalar = double>
CMatrix<Scalar> generate_signatures(const SystemConfig& cfg, Engine& rng)
{
    cfg.validate();
    return complex_normal_matrix<Scalar>(rng, cfg.L, cfg.num_sequences());
}

template <typename Scalar = double>
TruthAssignment<Scalar> sample_activity(const SystemConfig& cfg, Engine& rng)
{
    if (cfg.K < 0 || cfg.K > cfg.N) throw std::invalid_argument("sample_activity: need 0 <= K <= N");
    TruthAssignment<Scalar> truth;
    truth.chi = Eigen::MatrixXi::Zero(cfg.N, cfg.Q);
    truth.selected.assign(static_cast<std::size_t>(cfg.N), -1);
    truth.gamma_true = RVector<Scalar>::Zero(cfg.num_sequences());

    // Partial Fisher-Yates: the first K slots are a uniform K-subset.
    std::vector<Index> devices(static_cast<std::size_t>(cfg.N));
    std::iota(devices.begin(), devices.end(), Index{0});
    for (Index i = 0; i < cfg.K; ++i) {
        std::uniform_int_distribution<Index> pick(i, cfg.N - 1);
        std::swap(devices[static_cast<std::size_t>(i)], devices[static_cast<std::size_t>(pick(rng))]);
    }
    std::sort(devices.begin(), devices.begin() + cfg.K);

    std::uniform_int_distribution<Index> choose_q(0, cfg.Q - 1);
    for (Index i = 0; i < cfg.K; ++i) {
        const Index n = devices[static_cast<std::size_t>(i)];
        const Index q = choose_q(rng);
        truth.chi(n, q) = 1;
        truth.selected[static_cast<std::size_t>(n)] = q;
        truth.gamma_true[n * cfg.Q + q] = static_cast<Scalar>(cfg.gain_of(n));
    }
    return truth;
}

/**
 * Y = sum_n sum_q chi_{n,q} s_{n,q} sqrt(g_n) h_n^T + W.
 *
 * Channels h_n are drawn for active devices only, in increasing device order.
 * `noise_variance` may be zero (noiseless checks); the configured value is
 * `cfg.sigma_w_sq`.
 */
template <typename Scalar>
CMatrix<Scalar> simulate_received(const CMatrix<Scalar>& S, const TruthAssignment<Scalar>& truth, const SystemConfig& cfg,
                                  Scalar noise_variance, Engine& channel_rng, Engine& noise_rng)
{
    if (S.rows() != cfg.L || S.cols() != cfg.num_sequences() || truth.gamma_true.size() != cfg.num_sequences() ||
        static_cast<Index>(truth.selected.size()) != cfg.N) {
        throw std::invalid_argument("simulate_received: dimension mismatch");
    }
    if (!(noise_variance >= 0)) throw std::invalid_argument("simulate_received: negative noise variance");

    CMatrix<Scalar> Y = CMatrix<Scalar>::Zero(cfg.L, cfg.M);
    for (Index n = 0; n < cfg.N; ++n) {
        const Index q = truth.selected[static_cast<std::size_t>(n)];
        if (q < 0) continue;
        CVector<Scalar> h(cfg.M);
        for (Index m = 0; m < cfg.M; ++m) h[m] = complex_normal<Scalar>(channel_rng);
        const Scalar amp = std::sqrt(static_cast<Scalar>(cfg.gain_of(n)));
        Y.noalias() += (amp * S.col(n * cfg.Q + q)) * h.transpose();
    }
    if (noise_variance > 0) Y += complex_normal_matrix<Scalar>(noise_rng, cfg.L, cfg.M, noise_variance);
    return Y;
}

/// YY^H / M, symmetrized.
template <typename Scalar>
CMatrix<Scalar> sample_covariance(const CMatrix<Scalar>& Y)
{
    if (Y.cols() < 1) throw std::invalid_argument("sample_covariance: need at least one antenna");
    CMatrix<Scalar> sigma_hat = (Y * Y.adjoint()) / static_cast<Scalar>(Y.cols());
    CMatrix<Scalar> sym = (sigma_hat + sigma_hat.adjoint()) / Scalar(2);
    return sym;
}

struct LinkBudget
{
    double noise_power_dbm;
    double sigma_w_sq;
    double gain;
};

/// Cell-edge path loss in dB at distance `d_km`.
inline double default_pathloss_db(double d_km) { return 128.1 + 37.6 * std::log10(d_km); }

inline LinkBudget gain_from_link_budget(double tx_power_dbm, double noise_psd_dbm_hz, double bandwidth_hz,
                                        double pathloss_db)
{
    if (!(bandwidth_hz > 0)) throw std::invalid_argument("gain_from_link_budget: bandwidth must be > 0");
    LinkBudget out{};
    out.noise_power_dbm = noise_psd_dbm_hz + 10.0 * std::log10(bandwidth_hz);
    out.sigma_w_sq = std::pow(10.0, (out.noise_power_dbm - tx_power_dbm) / 10.0);
    out.gain = std::pow(10.0, -pathloss_db / 10.0);
    return out;
}

/// Everything a detector sees, plus the truth it is scored against.
template <typename Scalar>
struct Instance
{
    SystemConfig cfg;
    CMatrix<Scalar> S;
    CMatrix<Scalar> sigma_hat;
    TruthAssignment<Scalar> truth;
};

template <typename Scalar = double>
Instance<Scalar> generate_instance(const SystemConfig& cfg)
{
    cfg.validate();
    RngStreams streams(cfg.seed);
    Instance<Scalar> inst;
    inst.cfg = cfg;
    inst.S = generate_signatures<Scalar>(cfg, streams.signatures);
    inst.truth = sample_activity<Scalar>(cfg, streams.activity);
    const CMatrix<Scalar> Y = simulate_received<Scalar>(inst.S, inst.truth, cfg, static_cast<Scalar>(cfg.sigma_w_sq),
                                                        streams.channel, streams.noise);
    inst.sigma_hat = sample_covariance<Scalar>(Y);
    return inst;
}

} // namespace covdet
