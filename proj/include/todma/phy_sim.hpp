#pragma once

#include <map>
#include <span>
#include <vector>

#include "todma/common.hpp"
#include "todma/rng.hpp"
#include "todma/source_model.hpp"

namespace todma {

/// Shared L x Q modulation codebook; token q is sent as column q.
struct ModulationCodebook {
  CMatrix U;

  std::size_t L() const { return static_cast<std::size_t>(U.rows()); }
  std::size_t Q() const { return static_cast<std::size_t>(U.cols()); }
};

/// Slow Rayleigh channel of one single-antenna device to an M-antenna receiver.
struct DeviceChannel {
  CVector h;
};

/// Row-sparse equivalent channel of one slot. Rows that are absent are zero.
struct EquivalentChannel {
  std::size_t slot = 0;
  std::size_t M = 0;
  std::map<TokenId, CVector> rows;

  /// Dense Q x M form.
  CMatrix dense(std::size_t Q) const;
};

/// Observations Y_n (L x M) for every slot plus the known noise variance.
struct ReceivedFrame {
  std::vector<CMatrix> slots;
  double noise_variance = 0.0;

  double snr_db() const;
};

/// Simulation dimensions. SNR is defined as 1 / sigma^2 (unit-power codebook
/// entries and channel coefficients, per symbol and per receive antenna).
struct SimConfig {
  std::size_t K_T = 400;
  std::size_t K = 20;
  std::size_t M = 64;
  std::size_t L = 21;
  std::size_t Q = 256;
  std::size_t N = 32;
  double snr_db = 25.0;
  std::uint64_t seed = 1;

  void validate() const;
  double noise_variance() const;
};

double snr_db_to_noise_variance(double snr_db);
double noise_variance_to_snr_db(double noise_variance);

/// i.i.d. CN(0,1) entries, column by column. Columns are not normalized.
ModulationCodebook gen_codebook(std::size_t L, std::size_t Q, Rng& rng);

/// Codeword of `token`, i.e. U * one_hot(token).
CVector modulate(const ModulationCodebook& cb, TokenId token);

/// K channel vectors of length M with CN(0,1) entries.
std::vector<DeviceChannel> gen_channels(std::size_t K, std::size_t M, Rng& rng);

/// Row q holds the sum of channels of every device sending token q in slot n.
EquivalentChannel equivalent_channel(const TokenBatch& batch, std::span<const DeviceChannel> channels,
                                     std::size_t n);

/// Noiseless received block U * H for a row-sparse H.
CMatrix apply_codebook(const ModulationCodebook& cb, const EquivalentChannel& eq);

/// Y_n = U H_n + Z_n, Z_n i.i.d. CN(0, noise_variance).
ReceivedFrame transmit_frame(const ModulationCodebook& cb, const TokenBatch& batch,
                             std::span<const DeviceChannel> channels, double noise_variance, Rng& rng);

}  // namespace todma
