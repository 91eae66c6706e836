#pragma once

#include <functional>
#include <map>
#include <span>
#include <vector>

#include "todma/common.hpp"
#include "todma/phy_sim.hpp"

namespace todma {

struct DetectorConfig {
  int iterations = 30;               // T0
  double activity_threshold = 0.5;   // Th_r, strict: gamma > Th_r is active
  double damping = 0.0;              // blend factor applied to h_hat and v
  double early_stop_tol = 1e-6;      // 0 disables early stopping
  double gamma_init = 0.5;
  bool known_k = false;              // pick the K largest gammas instead of thresholding

  void validate() const;
};

/// Scalar posterior moments of the spike-and-slab denoiser for one entry.
struct DenoiserMoments {
  double pi = 0.0;     // activity indicator
  Complex mu{};        // slab posterior mean
  double tau = 0.0;    // slab posterior variance
  Complex h_hat{};     // posterior mean
  double v = 0.0;      // posterior variance
};

/// Posterior of h given R = h + CN(0, Sigma) under the prior
/// (1 - gamma) delta(h) + gamma CN(h; 0, 1).
DenoiserMoments denoiser_moments(Complex R, double Sigma, double gamma);

/// EM update of one row's sparsity ratio: the mean activity across antennas.
double em_update_gamma(std::span<const double> pi_row);

/// Full message state after the last executed iteration.
struct AmpState {
  int t = 0;
  CMatrix h_hat;       // Q x M posterior means
  RMatrix v;           // Q x M posterior variances
  CMatrix Z;           // L x M Onsager-corrected fits
  RMatrix V;           // L x M
  RMatrix Sigma;       // Q x M
  CMatrix R;           // Q x M pseudo-observations
  RMatrix pi;          // Q x M activity indicators
  RVector gamma;       // Q sparsity ratios
  bool converged = false;
};

using IterationObserver = std::function<void(const AmpState&)>;

/// Active-token decision for one slot.
struct DetectionOutput {
  std::vector<TokenId> active_set;     // sorted
  std::map<TokenId, CVector> csi;      // row of h_hat for each active token
  CMatrix h_hat_full;
  RVector gamma;
  bool empty_detection = false;
};

/// AMP with EM-learned per-row sparsity for Y = U H + Z. Precomputes the
/// codebook-derived matrices once so many slots can share them.
class AmpDetector {
 public:
  AmpDetector(const ModulationCodebook& cb, DetectorConfig cfg);

  /// Runs up to T0 sweeps (V, Z) -> (Sigma, R) -> denoiser -> EM. The
  /// observer, if set, sees the state after every sweep.
  AmpState iterate(const CMatrix& Y, double noise_variance, const IterationObserver& observer = {}) const;
  DetectionOutput detect(const CMatrix& Y, double noise_variance, std::size_t known_k = 0) const;

  const DetectorConfig& config() const { return cfg_; }

 private:
  CMatrix U_;
  CMatrix U_adj_;
  RMatrix U_abs2_;
  RMatrix U_abs2_t_;
  DetectorConfig cfg_;
};

AmpState amp_iterate(const CMatrix& Y, const ModulationCodebook& cb, double noise_variance,
                     const DetectorConfig& cfg);

/// P = { q : gamma_q > threshold }.
DetectionOutput detect_tokens(const AmpState& state, double threshold);

/// Known-K variant: the K rows with the largest gamma (ties to the smaller id).
DetectionOutput detect_top_k(const AmpState& state, std::size_t K);

}  // namespace todma
