#include "todma/phy_sim.hpp"

#include <cmath>
#include <limits>

namespace todma {

CMatrix EquivalentChannel::dense(std::size_t Q) const {
  CMatrix H = CMatrix::Zero(static_cast<Eigen::Index>(Q), static_cast<Eigen::Index>(M));
  for (const auto& [q, row] : rows) {
    require(q < Q, "EquivalentChannel::dense: row index out of range");
    H.row(q) = row.transpose();
  }
  return H;
}

double ReceivedFrame::snr_db() const { return noise_variance_to_snr_db(noise_variance); }

void SimConfig::validate() const {
  require(K >= 1, "SimConfig: K must be >= 1");
  require(K <= K_T, "SimConfig: K must not exceed K_T");
  require(M >= 1, "SimConfig: M must be >= 1");
  require(L >= 1, "SimConfig: L must be >= 1");
  require(N >= 1, "SimConfig: N must be >= 1");
  require(Q > K, "SimConfig: Q must exceed K");
  require(std::isfinite(snr_db), "SimConfig: snr_db must be finite");
}

double SimConfig::noise_variance() const { return snr_db_to_noise_variance(snr_db); }

double snr_db_to_noise_variance(double snr_db) { return std::pow(10.0, -snr_db / 10.0); }

double noise_variance_to_snr_db(double noise_variance) {
  if (noise_variance <= 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(noise_variance);
}

ModulationCodebook gen_codebook(std::size_t L, std::size_t Q, Rng& rng) {
  require(L >= 1 && Q >= 1, "gen_codebook: dimensions must be positive");
  ModulationCodebook cb;
  cb.U.resize(static_cast<Eigen::Index>(L), static_cast<Eigen::Index>(Q));
  for (Eigen::Index q = 0; q < cb.U.cols(); ++q)
    for (Eigen::Index l = 0; l < cb.U.rows(); ++l) cb.U(l, q) = complex_normal(rng);
  return cb;
}

CVector modulate(const ModulationCodebook& cb, TokenId token) {
  require(token < cb.Q(), "modulate: token id out of range");
  return cb.U.col(token);
}

std::vector<DeviceChannel> gen_channels(std::size_t K, std::size_t M, Rng& rng) {
  require(K >= 1 && M >= 1, "gen_channels: dimensions must be positive");
  std::vector<DeviceChannel> channels(K);
  for (auto& ch : channels) {
    ch.h.resize(static_cast<Eigen::Index>(M));
    for (Eigen::Index m = 0; m < ch.h.size(); ++m) ch.h[m] = complex_normal(rng);
  }
  return channels;
}

EquivalentChannel equivalent_channel(const TokenBatch& batch, std::span<const DeviceChannel> channels,
                                     std::size_t n) {
  require(n < batch.N, "equivalent_channel: slot out of range");
  require(channels.size() == batch.K(), "equivalent_channel: one channel per device required");
  EquivalentChannel eq;
  eq.slot = n;
  eq.M = channels.empty() ? 0 : static_cast<std::size_t>(channels.front().h.size());
  for (std::size_t k = 0; k < batch.K(); ++k) {
    const TokenId q = batch.sequences[k][n];
    auto [it, inserted] = eq.rows.try_emplace(q, channels[k].h);
    if (!inserted) it->second += channels[k].h;
  }
  return eq;
}

CMatrix apply_codebook(const ModulationCodebook& cb, const EquivalentChannel& eq) {
  CMatrix X = CMatrix::Zero(cb.U.rows(), static_cast<Eigen::Index>(eq.M));
  for (const auto& [q, row] : eq.rows) X.noalias() += cb.U.col(q) * row.transpose();
  return X;
}

ReceivedFrame transmit_frame(const ModulationCodebook& cb, const TokenBatch& batch,
                             std::span<const DeviceChannel> channels, double noise_variance, Rng& rng) {
  require(cb.Q() == batch.Q, "transmit_frame: codebook Q does not match batch Q");
  require(channels.size() == batch.K(), "transmit_frame: one channel per device required");
  require(noise_variance >= 0.0, "transmit_frame: noise variance must be non-negative");
  batch.validate();
  if (!channels.empty()) {
    const auto M = channels.front().h.size();
    for (const auto& ch : channels) require(ch.h.size() == M, "transmit_frame: inconsistent antenna count");
  }

  ReceivedFrame frame;
  frame.noise_variance = noise_variance;
  frame.slots.reserve(batch.N);
  for (std::size_t n = 0; n < batch.N; ++n) {
    CMatrix Y = apply_codebook(cb, equivalent_channel(batch, channels, n));
    if (noise_variance > 0.0) {
      for (Eigen::Index m = 0; m < Y.cols(); ++m)
        for (Eigen::Index l = 0; l < Y.rows(); ++l) Y(l, m) += complex_normal(rng, noise_variance);
    }
    frame.slots.push_back(std::move(Y));
  }
  return frame;
}

}  // namespace todma
