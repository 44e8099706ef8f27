#pragma once

#include "covdet/model.hpp"
#include "covdet/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace covdet {

/**
 * Binary instance container.
 *
 *   "COVD1"                         5 bytes
 *   N, Q, L, M                      uint32 little-endian each
 *   sigma_w_sq                      float64 little-endian
 *   S          (L x NQ, row-major)  interleaved (re, im) float64
 *   SigmaHat   (L x L,  row-major)  interleaved (re, im) float64
 *   gamma_true (NQ)                 float64
 */
struct InstanceFile
{
    std::uint32_t N = 0;
    std::uint32_t Q = 0;
    std::uint32_t L = 0;
    std::uint32_t M = 0;
    double sigma_w_sq = 0;
    CMatrix<double> S;
    CMatrix<double> sigma_hat;
    RVector<double> gamma_true;

    static InstanceFile from(const Instance<double>& inst);

    /// Support of gamma_true (indices with positive entries).
    IndexSet true_support() const;
    /// Per-device transmitted q, or -1, recovered from gamma_true.
    std::vector<Index> true_selection() const;
};

std::vector<std::uint8_t> encode_instance(const InstanceFile& file);
InstanceFile decode_instance(const std::vector<std::uint8_t>& bytes);

void write_instance(const std::string& path, const InstanceFile& file);
InstanceFile read_instance(const std::string& path);

/// "device,sequence,gamma" rows, one per flat index.
void write_gamma_csv(const std::string& path, const RVector<double>& gamma, Index Q);

} // namespace covdet
