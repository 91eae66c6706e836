#include "todma/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "todma/hungarian.hpp"

namespace todma {

DeviceMatching DeviceMatching::identity(std::size_t K) {
  DeviceMatching m;
  m.permutation.resize(K);
  for (std::size_t k = 0; k < K; ++k) m.permutation[k] = k;
  return m;
}

void DeviceMatching::validate(std::size_t K) const {
  require(permutation.size() == K, "DeviceMatching: wrong size");
  std::vector<char> seen(K, 0);
  for (std::size_t p : permutation) {
    require(p < K && !seen[p], "DeviceMatching: not a bijection");
    seen[p] = 1;
  }
}

DeviceMatching match_devices(std::span<const CVector> centroids, std::span<const DeviceChannel> true_channels) {
  require(centroids.size() == true_channels.size(), "match_devices: centroid and channel counts differ");
  const auto K = static_cast<Eigen::Index>(centroids.size());
  RMatrix cost(K, K);
  for (Eigen::Index e = 0; e < K; ++e) {
    for (Eigen::Index k = 0; k < K; ++k) {
      require(centroids[e].size() == true_channels[k].h.size(), "match_devices: vector length mismatch");
      cost(e, k) = (centroids[e] - true_channels[k].h).norm();
    }
  }
  return {solve_assignment(cost)};
}

DeviceMatching match_devices_by_errors(std::span<const std::vector<TokenId>> estimated, const TokenBatch& truth) {
  require(estimated.size() == truth.K(), "match_devices_by_errors: sequence count mismatch");
  const auto K = static_cast<Eigen::Index>(truth.K());
  RMatrix cost(K, K);
  for (Eigen::Index e = 0; e < K; ++e) {
    require(estimated[e].size() == truth.N, "match_devices_by_errors: sequence length mismatch");
    for (Eigen::Index k = 0; k < K; ++k) {
      double errors = 0.0;
      for (std::size_t n = 0; n < truth.N; ++n) errors += estimated[e][n] != truth.sequences[k][n];
      cost(e, k) = errors;
    }
  }
  return {solve_assignment(cost)};
}

double nmse_ratio(const CMatrix& H_hat, const CMatrix& H_true, bool squared) {
  require(H_hat.rows() == H_true.rows() && H_hat.cols() == H_true.cols(), "nmse: shape mismatch");
  const double denom = squared ? H_true.squaredNorm() : H_true.norm();
  require(denom > 0.0, "nmse: ground-truth channel has zero norm");
  const double num = squared ? (H_hat - H_true).squaredNorm() : (H_hat - H_true).norm();
  return num / denom;
}

double nmse_db_from_ratios(std::span<const double> ratios) {
  require(!ratios.empty(), "nmse: no slots");
  double total = 0.0;
  for (double r : ratios) total += r;
  return 10.0 * std::log10(total / static_cast<double>(ratios.size()));
}

double nmse_db(std::span<const CMatrix> H_hat, std::span<const CMatrix> H_true, bool squared) {
  require(H_hat.size() == H_true.size(), "nmse: slot count mismatch");
  std::vector<double> ratios;
  ratios.reserve(H_hat.size());
  for (std::size_t n = 0; n < H_hat.size(); ++n) ratios.push_back(nmse_ratio(H_hat[n], H_true[n], squared));
  return nmse_db_from_ratios(ratios);
}

double tder(std::span<const std::vector<TokenId>> detected, std::span<const std::vector<TokenId>> truth, std::size_t K) {
  require(detected.size() == truth.size(), "tder: slot count mismatch");
  require(K >= 1 && !truth.empty(), "tder: need K >= 1 and at least one slot");
  std::size_t errors = 0;
  for (std::size_t n = 0; n < truth.size(); ++n) {
    const std::set<TokenId> est(detected[n].begin(), detected[n].end());
    const std::set<TokenId> act(truth[n].begin(), truth[n].end());
    for (TokenId q : act) errors += est.count(q) == 0;
    for (TokenId q : est) errors += act.count(q) == 0;
  }
  return static_cast<double>(errors) / static_cast<double>(truth.size() * K);
}

double ter(std::span<const std::vector<TokenId>> estimated, const TokenBatch& truth, const DeviceMatching& matching) {
  require(estimated.size() == truth.K(), "ter: sequence count mismatch");
  matching.validate(truth.K());
  std::size_t wrong = 0;
  for (std::size_t e = 0; e < estimated.size(); ++e) {
    require(estimated[e].size() == truth.N, "ter: estimated sequence is not fully filled");
    const auto& actual = truth.sequences[matching.permutation[e]];
    for (std::size_t n = 0; n < truth.N; ++n) wrong += estimated[e][n] != actual[n];
  }
  return static_cast<double>(wrong) / static_cast<double>(truth.N * truth.K());
}

void LatencyModel::validate() const {
  require(bandwidth_hz > 0.0, "LatencyModel: bandwidth must be positive");
  require(ber > 0.0 && ber < 0.2, "LatencyModel: target BER must be in (0, 0.2)");
  require(snr_linear > 0.0, "LatencyModel: SNR must be positive");
}

std::size_t bits_per_token(std::size_t Q) {
  require(Q >= 2, "bits_per_token: Q must be >= 2");
  std::size_t bits = 0;
  while ((std::size_t{1} << bits) < Q) ++bits;
  return bits;
}

double latency_todma(std::size_t L, std::size_t N, double bandwidth_hz) {
  require(L >= 1 && N >= 1, "latency_todma: L and N must be positive");
  require(bandwidth_hz > 0.0, "latency_todma: bandwidth must be positive");
  return static_cast<double>(L) * static_cast<double>(N) / bandwidth_hz;
}

double orth_rate(const LatencyModel& lm) {
  lm.validate();
  const double gap = 1.5 / -std::log(5.0 * lm.ber);
  return lm.bandwidth_hz * std::log2(1.0 + gap * lm.snr_linear);
}

double latency_orth(std::size_t K, std::size_t N, std::size_t Q, const LatencyModel& lm) {
  require(K >= 1 && N >= 1, "latency_orth: K and N must be positive");
  const double bits = static_cast<double>(K) * static_cast<double>(N) * static_cast<double>(bits_per_token(Q));
  return bits / orth_rate(lm);
}

double orth_token_error_probability(std::size_t Q, double ber) {
  require(ber >= 0.0 && ber <= 1.0, "orth_token_error_probability: ber must be in [0, 1]");
  return 1.0 - std::pow(1.0 - ber, static_cast<double>(bits_per_token(Q)));
}

TokenBatch orth_token_errors(const TokenBatch& batch, double ber, Rng& rng) {
  batch.validate();
  require(ber >= 0.0 && ber <= 1.0, "orth_token_errors: ber must be in [0, 1]");
  TokenBatch out = batch;
  if (ber == 0.0) return out;
  require(batch.Q >= 2, "orth_token_errors: need Q >= 2 to corrupt tokens");
  const double p = orth_token_error_probability(batch.Q, ber);
  for (auto& seq : out.sequences) {
    for (auto& t : seq) {
      if (uniform01(rng) >= p) continue;
      auto other = static_cast<TokenId>(uniform_below(rng, batch.Q - 1));
      if (other >= t) ++other;
      t = other;
    }
  }
  return out;
}

}  // namespace todma
