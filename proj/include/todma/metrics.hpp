#pragma once

#include <span>
#include <vector>

#include "todma/common.hpp"
#include "todma/phy_sim.hpp"
#include "todma/rng.hpp"
#include "todma/source_model.hpp"

namespace todma {

/// permutation[e] = true device index of estimated sequence e.
struct DeviceMatching {
  std::vector<std::size_t> permutation;

  static DeviceMatching identity(std::size_t K);
  void validate(std::size_t K) const;
};

/// Minimum total Euclidean distance matching of cluster centroids to the true channels.
DeviceMatching match_devices(std::span<const CVector> centroids, std::span<const DeviceChannel> true_channels);

/// Matching that minimizes the total number of token errors (used when no
/// centroids are available). Its TER never exceeds the identity's.
DeviceMatching match_devices_by_errors(std::span<const std::vector<TokenId>> estimated, const TokenBatch& truth);

/// Per-slot ratio ||H_hat - H||_F / ||H||_F (squared norms when `squared`).
double nmse_ratio(const CMatrix& H_hat, const CMatrix& H_true, bool squared = false);

/// 10 log10 of the mean per-slot ratio. Unsquared Frobenius norms by default.
double nmse_db(std::span<const CMatrix> H_hat, std::span<const CMatrix> H_true, bool squared = false);
double nmse_db_from_ratios(std::span<const double> ratios);

/// Symmetric-difference detection error count summed over slots, over N * K.
double tder(std::span<const std::vector<TokenId>> detected, std::span<const std::vector<TokenId>> truth, std::size_t K);

/// Fraction of wrong tokens after applying the matching.
double ter(std::span<const std::vector<TokenId>> estimated, const TokenBatch& truth, const DeviceMatching& matching);

struct LatencyModel {
  double bandwidth_hz = 1e7;
  double ber = 1e-3;
  double snr_linear = 316.22776601683796;  // 25 dB

  void validate() const;
};

/// Bits carried per token by the orthogonal baseline: ceil(log2 Q).
std::size_t bits_per_token(std::size_t Q);

/// L * N / B.
double latency_todma(std::size_t L, std::size_t N, double bandwidth_hz);

/// Adaptive-QAM rate B log2(1 + 1.5 / (-ln(5 BER)) SNR).
double orth_rate(const LatencyModel& lm);

/// K * N * bits_per_token(Q) / orth_rate.
double latency_orth(std::size_t K, std::size_t N, std::size_t Q, const LatencyModel& lm);

/// Per-token corruption probability 1 - (1 - ber)^bits_per_token(Q).
double orth_token_error_probability(std::size_t Q, double ber);

/// Corrupts each token independently; a corrupted token is replaced by a
/// uniform draw from the other Q - 1 ids.
TokenBatch orth_token_errors(const TokenBatch& batch, double ber, Rng& rng);

}  // namespace todma
