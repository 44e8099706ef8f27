#include "covdet/detection.hpp"

#include <stdexcept>

namespace covdet {

DetectionResult detect(const RVector<double>& gamma_hat, double theta, Index Q)
{
    if (!(theta >= 0)) throw std::invalid_argument("detect: theta must be >= 0");
    if (Q < 1 || gamma_hat.size() % Q != 0) throw std::invalid_argument("detect: length is not a multiple of Q");

    const Index n_devices = gamma_hat.size() / Q;
    DetectionResult out;
    out.theta = theta;
    out.decision.assign(static_cast<std::size_t>(n_devices), -1);
    for (Index n = 0; n < n_devices; ++n) {
        Index best = 0;
        for (Index q = 1; q < Q; ++q) {
            if (gamma_hat[n * Q + q] > gamma_hat[n * Q + best]) best = q;
        }
        if (gamma_hat[n * Q + best] > theta) out.decision[static_cast<std::size_t>(n)] = best;
    }
    return out;
}

ErrorReport score(const DetectionResult& result, const std::vector<Index>& truth)
{
    if (result.decision.size() != truth.size()) throw std::invalid_argument("score: device count mismatch");
    ErrorReport rep;
    rep.devices = static_cast<Index>(truth.size());
    for (std::size_t n = 0; n < truth.size(); ++n) {
        const Index want = truth[n];
        const Index got = result.decision[n];
        if (want >= 0 && got < 0) {
            ++rep.missed;
        } else if (want < 0 && got >= 0) {
            ++rep.false_alarm;
        } else if (want >= 0 && got != want) {
            ++rep.data_error;
        }
    }
    return rep;
}

} // namespace covdet
