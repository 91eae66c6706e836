#pragma once

#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "todma/amp_detector.hpp"
#include "todma/common.hpp"
#include "todma/rng.hpp"

namespace todma {

/// One estimated equivalent-channel vector psi_n(phi).
struct CsiSample {
  std::size_t slot = 0;
  TokenId token = 0;
  CVector h;
};

/// Flattens per-slot detections into the CSI set, ordered by (slot, token).
std::vector<CsiSample> collect_csi(std::span<const DetectionOutput> detections);

struct KMeansOptions {
  int max_iterations = 100;  // Tc
  int restarts = 5;
};

struct ClusterModel {
  std::size_t K = 0;
  std::vector<CVector> centroids;
  std::vector<CsiSample> points;
  std::vector<std::size_t> labels;      // cluster of points[i]
  std::vector<double> distances;        // ||points[i] - centroid||, unsquared
  std::map<std::pair<std::size_t, TokenId>, std::size_t> membership;
  double inertia = 0.0;                 // sum of unsquared distances
  double sse = 0.0;                     // sum of squared distances (the minimized objective)
  std::vector<double> sse_history;      // objective after each assignment step of the kept run
  int iterations = 0;
};

/// k-means++ seeding followed by Lloyd iterations on the 2M-dimensional real
/// embedding; the run with the lowest SSE across restarts is kept.
ClusterModel kmeanspp_cluster(std::span<const CsiSample> samples, std::size_t K, Rng& rng,
                              KMeansOptions options = {});

/// Token-to-device assignment with confidence scores. Empty optional means
/// no token is assigned (or the cell is masked for prediction).
struct AssignmentState {
  std::size_t K = 0;
  std::size_t N = 0;
  std::vector<std::vector<std::optional<TokenId>>> B_hat;          // [k][n]
  std::vector<std::vector<std::optional<std::size_t>>> sample_of;  // [k][n] -> ClusterModel::points
  RMatrix D;           // K x N scores, +inf when the vector sits on its centroid
  RMatrix distances;   // K x N, +inf for empty cells
  std::vector<std::vector<TokenId>> candidates;  // per slot, sorted
  std::vector<std::vector<TokenId>> demoted;     // same-slot/same-cluster losers, per slot
  double score_threshold = 0.0;                  // Th_s
  std::size_t same_cluster_conflicts = 0;
  bool scored = false;
  bool refined = false;

  bool is_masked(std::size_t k, std::size_t n) const { return !B_hat[k][n].has_value(); }
  std::size_t masked_count() const;
};

/// Assigns each detected token to the device of its cluster. When two vectors
/// of one slot fall in the same cluster only the nearer one is kept; the
/// other is recorded in `demoted` and counted as a conflict.
AssignmentState coarse_assign(const ClusterModel& cm, std::span<const DetectionOutput> detections);

/// D[k,n] = 1 / ||psi - c_k|| for assigned cells, 0 for empty ones.
void score_matrix(AssignmentState& st, const ClusterModel& cm);

/// Reciprocal of twice the mean point-to-centroid distance; +inf when every
/// point sits on its centroid.
double compute_score_threshold(const ClusterModel& cm);

/// Clears low-confidence cells, builds the per-slot candidate sets and fills
/// every low-confidence cell of a slot whose candidate set is a single token.
/// Comparisons are made on distances (d > 1/Th_s) so zero distances are safe.
void refine_assignment(AssignmentState& st);

}  // namespace todma
