#pragma once

#include "covdet/types.hpp"

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace covdet {

using Engine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Order-sensitive hash of a seed path, e.g. (master, sweep, trial).
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts)
{
    std::uint64_t h = 0x243f6a8885a308d3ULL;
    for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
    return h;
}

enum class Stream : std::uint64_t { signatures = 1, activity = 2, channel = 3, noise = 4, solver = 5 };

inline Engine make_engine(std::uint64_t seed, Stream stream)
{
    return Engine(derive_seed({seed, static_cast<std::uint64_t>(stream)}));
}

/// Independent generators for each random ingredient of one instance.
struct RngStreams
{
    explicit RngStreams(std::uint64_t seed)
        : signatures(make_engine(seed, Stream::signatures)),
          activity(make_engine(seed, Stream::activity)),
          channel(make_engine(seed, Stream::channel)),
          noise(make_engine(seed, Stream::noise))
    {
    }

    Engine signatures;
    Engine activity;
    Engine channel;
    Engine noise;
};

/// Circularly-symmetric complex Gaussian with E|z|^2 = variance.
template <typename Scalar>
Complex<Scalar> complex_normal(Engine& rng, Scalar variance = Scalar(1))
{
    std::normal_distribution<double> normal(0.0, 1.0);
    const Scalar scale = std::sqrt(variance / Scalar(2));
    const Scalar re = static_cast<Scalar>(normal(rng));
    const Scalar im = static_cast<Scalar>(normal(rng));
    return {scale * re, scale * im};
}

template <typename Scalar>
CMatrix<Scalar> complex_normal_matrix(Engine& rng, Index rows, Index cols, Scalar variance = Scalar(1))
{
    CMatrix<Scalar> out(rows, cols);
    for (Index c = 0; c < cols; ++c) {
        for (Index r = 0; r < rows; ++r) out(r, c) = complex_normal<Scalar>(rng, variance);
    }
    return out;
}

} // namespace covdet
