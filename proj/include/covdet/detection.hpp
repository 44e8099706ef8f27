#pragma once

#include "covdet/types.hpp"

#include <vector>

namespace covdet {

/// Per-device decision: -1 for inactive, otherwise the detected sequence q (0-based).
struct DetectionResult
{
    std::vector<Index> decision;
    double theta = 0;

    Index devices() const { return static_cast<Index>(decision.size()); }
};

struct ErrorReport
{
    Index devices = 0;
    Index missed = 0;       ///< active but declared inactive
    Index false_alarm = 0;  ///< inactive but declared active
    Index data_error = 0;   ///< active, detected active, wrong sequence

    double missed_rate() const { return devices ? static_cast<double>(missed) / devices : 0.0; }
    double false_alarm_rate() const { return devices ? static_cast<double>(false_alarm) / devices : 0.0; }
    double data_error_rate() const { return devices ? static_cast<double>(data_error) / devices : 0.0; }
    double error_rate() const
    {
        return devices ? static_cast<double>(missed + false_alarm + data_error) / devices : 0.0;
    }
};

/// Device n is active iff max_q gamma_hat(n, q) > theta; ties in the argmax go to the smallest q.
DetectionResult detect(const RVector<double>& gamma_hat, double theta, Index Q);

/// `truth[n]` is the transmitted q of device n, or -1 if it was silent.
ErrorReport score(const DetectionResult& result, const std::vector<Index>& truth);

} // namespace covdet
