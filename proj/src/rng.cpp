#include "todma/rng.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace todma {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, std::string_view stage) {
  // FNV-1a over the stage tag
  std::uint64_t tag = 0xcbf29ce484222325ULL;
  for (unsigned char c : stage) {
    tag ^= c;
    tag *= 0x100000001b3ULL;
  }
  return mix64(mix64(mix64(master) ^ index) ^ tag);
}

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Complex complex_normal(Rng& rng, double variance) {
  // Box-Muller on our own uniform draws so streams are identical across
  // standard library implementations.
  double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  const double radius = std::sqrt(-variance * std::log(u1));
  const double angle = 2.0 * M_PI * u2;
  return {radius * std::cos(angle), radius * std::sin(angle)};
}

std::size_t sample_index(std::span<const double> weights, Rng& rng) {
  require(!weights.empty(), "sample_index: empty weight vector");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  require(total > 0.0 && std::isfinite(total), "sample_index: weights must have positive finite sum");
  const double target = uniform01(rng) * total;
  double running = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    running += weights[i];
    last_positive = i;
    if (target < running) return i;
  }
  return last_positive;
}

std::uint64_t uniform_below(Rng& rng, std::uint64_t n) {
  require(n > 0, "uniform_below: empty range");
  // Lemire-style rejection keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

}  // namespace todma
