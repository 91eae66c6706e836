#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

#include "todma/common.hpp"

namespace todma {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer. Used to decorrelate seeds derived from counters.
std::uint64_t mix64(std::uint64_t x);

/// Counter-based seed split: the stream for (master, index, stage) is fixed
/// regardless of how many other streams are drawn or in which order.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, std::string_view stage);

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

/// Uniform double in [0, 1) built from the top 53 bits of one draw.
double uniform01(Rng& rng);

/// Draw from CN(0, variance): independent real/imag parts with variance/2 each.
Complex complex_normal(Rng& rng, double variance = 1.0);

/// Inverse-CDF draw of an index from an unnormalized non-negative weight vector.
std::size_t sample_index(std::span<const double> weights, Rng& rng);

/// Uniform integer in [0, n).
std::uint64_t uniform_below(Rng& rng, std::uint64_t n);

}  // namespace todma
