#include "todma/amp_detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace todma {

namespace {

constexpr double kMinDenominator = 1e-12;
constexpr double kMaxExponent = 700.0;

[[noreturn]] void non_finite(int t, const char* what) {
  throw NumericalError("AMP produced a non-finite " + std::string(what) + " at iteration " + std::to_string(t));
}

DetectionOutput make_output(const AmpState& state, std::vector<TokenId> active) {
  std::sort(active.begin(), active.end());
  DetectionOutput out;
  for (TokenId q : active) out.csi.emplace(q, state.h_hat.row(q).transpose());
  out.active_set = std::move(active);
  out.h_hat_full = state.h_hat;
  out.gamma = state.gamma;
  out.empty_detection = out.active_set.empty();
  return out;
}

}  // namespace

void DetectorConfig::validate() const {
  require(iterations >= 1, "DetectorConfig: iterations must be >= 1");
  require(activity_threshold > 0.0 && activity_threshold < 1.0, "DetectorConfig: Th_r must be in (0, 1)");
  require(damping >= 0.0 && damping < 1.0, "DetectorConfig: damping must be in [0, 1)");
  require(early_stop_tol >= 0.0, "DetectorConfig: early_stop_tol must be >= 0");
  require(gamma_init >= 0.0 && gamma_init <= 1.0, "DetectorConfig: gamma_init must be in [0, 1]");
}

DenoiserMoments denoiser_moments(Complex R, double Sigma, double gamma) {
  require(Sigma > 0.0, "denoiser_moments: Sigma must be positive");
  require(gamma >= 0.0 && gamma <= 1.0, "denoiser_moments: gamma must be in [0, 1]");

  DenoiserMoments out;
  out.mu = R / (1.0 + Sigma);
  out.tau = Sigma / (1.0 + Sigma);

  if (gamma <= 0.0) {
    out.pi = 0.0;
  } else if (gamma >= 1.0) {
    out.pi = 1.0;
  } else {
    // log-likelihood ratio slab vs spike
    const double llr = std::log(out.tau) + std::norm(R) * (1.0 / Sigma - 1.0 / (1.0 + Sigma));
    const double a = std::clamp(std::log1p(-gamma) - std::log(gamma) - llr, -kMaxExponent, kMaxExponent);
    out.pi = 1.0 / (1.0 + std::exp(a));
  }
  out.h_hat = out.pi * out.mu;
  // pi(|mu|^2 + tau) - |pi mu|^2, grouped so it cannot go negative
  out.v = out.pi * ((1.0 - out.pi) * std::norm(out.mu) + out.tau);
  return out;
}

double em_update_gamma(std::span<const double> pi_row) {
  require(!pi_row.empty(), "em_update_gamma: empty row");
  double total = 0.0;
  for (double p : pi_row) total += p;
  return total / static_cast<double>(pi_row.size());
}

AmpDetector::AmpDetector(const ModulationCodebook& cb, DetectorConfig cfg) : U_(cb.U), cfg_(cfg) {
  cfg_.validate();
  require(U_.size() > 0, "AmpDetector: empty codebook");
  U_adj_ = U_.adjoint();
  U_abs2_ = U_.cwiseAbs2();
  U_abs2_t_ = U_abs2_.transpose();
}

AmpState AmpDetector::iterate(const CMatrix& Y, double noise_variance, const IterationObserver& observer) const {
  const Eigen::Index L = U_.rows();
  const Eigen::Index Q = U_.cols();
  const Eigen::Index M = Y.cols();
  require(Y.rows() == L, "amp_iterate: Y must have L rows");
  require(M >= 1, "amp_iterate: Y must have at least one column");
  require(noise_variance > 0.0, "amp_iterate: noise variance must be positive");

  AmpState s;
  s.h_hat = CMatrix::Zero(Q, M);
  s.v = RMatrix::Ones(Q, M);
  s.Z = Y;
  s.gamma = RVector::Constant(Q, cfg_.gamma_init);
  s.pi = RMatrix::Zero(Q, M);
  s.R = CMatrix::Zero(Q, M);

  RMatrix denom_prev;
  CMatrix h_new(Q, M);
  RMatrix v_new(Q, M);
  RVector gamma_new(Q);

  for (int t = 1; t <= cfg_.iterations; ++t) {
    // factor-node messages
    s.V.noalias() = U_abs2_ * s.v;
    const RMatrix denom = (s.V.array() + noise_variance).max(kMinDenominator).matrix();
    CMatrix Z_next = U_ * s.h_hat;
    if (t > 1) {
      Z_next.array() -= (s.V.array() / denom_prev.array()).cast<Complex>() * (Y - s.Z).array();
    }
    s.Z = std::move(Z_next);

    // variable-node messages
    const CMatrix scaled_residual = ((Y - s.Z).array() / denom.array().cast<Complex>()).matrix();
    s.Sigma = (U_abs2_t_ * denom.cwiseInverse()).cwiseInverse();
    s.R = s.h_hat + (s.Sigma.cast<Complex>().array() * (U_adj_ * scaled_residual).array()).matrix();

    // denoiser + EM; same algebra as denoiser_moments with the prior log-odds hoisted per row
    for (Eigen::Index q = 0; q < Q; ++q) {
      const double gamma_q = s.gamma[q];
      const bool spike_only = gamma_q <= 0.0;
      const bool slab_only = gamma_q >= 1.0;
      const double prior_log_odds = (spike_only || slab_only) ? 0.0 : std::log1p(-gamma_q) - std::log(gamma_q);
      double pi_sum = 0.0;
      for (Eigen::Index m = 0; m < M; ++m) {
        const double sigma = s.Sigma(q, m);
        if (!(sigma > 0.0) || !std::isfinite(sigma)) non_finite(t, "Sigma");
        const Complex r = s.R(q, m);
        const Complex mu = r / (1.0 + sigma);
        const double tau = sigma / (1.0 + sigma);
        double pi_qm;
        if (spike_only) {
          pi_qm = 0.0;
        } else if (slab_only) {
          pi_qm = 1.0;
        } else {
          const double llr = std::log(tau) + std::norm(r) * (1.0 / sigma - 1.0 / (1.0 + sigma));
          pi_qm = 1.0 / (1.0 + std::exp(std::clamp(prior_log_odds - llr, -kMaxExponent, kMaxExponent)));
        }
        s.pi(q, m) = pi_qm;
        h_new(q, m) = pi_qm * mu;
        v_new(q, m) = pi_qm * ((1.0 - pi_qm) * std::norm(mu) + tau);
        pi_sum += pi_qm;
      }
      gamma_new[q] = std::clamp(pi_sum / static_cast<double>(M), 0.0, 1.0);
    }

    if (cfg_.damping > 0.0) {
      h_new = (1.0 - cfg_.damping) * h_new + cfg_.damping * s.h_hat;
      v_new = (1.0 - cfg_.damping) * v_new + cfg_.damping * s.v;
    }
    if (!h_new.allFinite()) non_finite(t, "posterior mean");
    if (!v_new.allFinite()) non_finite(t, "posterior variance");
    if (v_new.minCoeff() < 0.0 || gamma_new.minCoeff() < 0.0 || gamma_new.maxCoeff() > 1.0) {
      throw NumericalError("AMP state left its valid range at iteration " + std::to_string(t));
    }

    const double change = (h_new - s.h_hat).norm();
    const double scale = std::max(h_new.norm(), 1e-300);
    const double gamma_change = (gamma_new - s.gamma).cwiseAbs().maxCoeff();

    denom_prev = denom;
    s.h_hat = h_new;
    s.v = v_new;
    s.gamma = gamma_new;
    s.t = t;
    if (observer) observer(s);

    if (cfg_.early_stop_tol > 0.0 && change <= cfg_.early_stop_tol * scale &&
        gamma_change <= cfg_.early_stop_tol) {
      s.converged = true;
      break;
    }
  }
  return s;
}

DetectionOutput AmpDetector::detect(const CMatrix& Y, double noise_variance, std::size_t known_k) const {
  const AmpState state = iterate(Y, noise_variance);
  if (cfg_.known_k && known_k > 0) return detect_top_k(state, known_k);
  return detect_tokens(state, cfg_.activity_threshold);
}

AmpState amp_iterate(const CMatrix& Y, const ModulationCodebook& cb, double noise_variance,
                     const DetectorConfig& cfg) {
  return AmpDetector(cb, cfg).iterate(Y, noise_variance);
}

DetectionOutput detect_tokens(const AmpState& state, double threshold) {
  std::vector<TokenId> active;
  for (Eigen::Index q = 0; q < state.gamma.size(); ++q) {
    if (state.gamma[q] > threshold) active.push_back(static_cast<TokenId>(q));
  }
  return make_output(state, std::move(active));
}

DetectionOutput detect_top_k(const AmpState& state, std::size_t K) {
  std::vector<TokenId> order(static_cast<std::size_t>(state.gamma.size()));
  std::iota(order.begin(), order.end(), TokenId{0});
  const std::size_t keep = std::min(K, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                    [&](TokenId a, TokenId b) {
                      if (state.gamma[a] != state.gamma[b]) return state.gamma[a] > state.gamma[b];
                      return a < b;
                    });
  order.resize(keep);
  return make_output(state, std::move(order));
}

}  // namespace todma
