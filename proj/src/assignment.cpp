#include "todma/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace todma {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

std::size_t AssignmentState::masked_count() const {
  std::size_t count = 0;
  for (const auto& row : B_hat)
    for (const auto& cell : row)
      if (!cell) ++count;
  return count;
}

AssignmentState coarse_assign(const ClusterModel& cm, std::span<const DetectionOutput> detections) {
  std::size_t detected = 0;
  for (const auto& det : detections) detected += det.active_set.size();
  require(detected == cm.points.size(), "coarse_assign: cluster model does not cover the detections");

  AssignmentState st;
  st.K = cm.K;
  st.N = detections.size();
  st.B_hat.assign(st.K, std::vector<std::optional<TokenId>>(st.N));
  st.sample_of.assign(st.K, std::vector<std::optional<std::size_t>>(st.N));
  st.D = RMatrix::Zero(static_cast<Eigen::Index>(st.K), static_cast<Eigen::Index>(st.N));
  st.distances = RMatrix::Constant(static_cast<Eigen::Index>(st.K), static_cast<Eigen::Index>(st.N), kInf);
  st.candidates.assign(st.N, {});
  st.demoted.assign(st.N, {});

  for (std::size_t i = 0; i < cm.points.size(); ++i) {
    const auto& p = cm.points[i];
    require(p.slot < st.N, "coarse_assign: CSI sample slot out of range");
    const auto key = std::make_pair(p.slot, p.token);
    const auto it = cm.membership.find(key);
    require(it != cm.membership.end(), "coarse_assign: detected token has no cluster");
    const std::size_t k = it->second;

    auto& cell = st.sample_of[k][p.slot];
    if (!cell) {
      cell = i;
      st.B_hat[k][p.slot] = p.token;
      continue;
    }
    // one token per device per slot: the vector nearer the centroid wins
    ++st.same_cluster_conflicts;
    const std::size_t j = *cell;
    const double di = cm.distances[i];
    const double dj = cm.distances[j];
    const bool incoming_wins = di < dj || (di == dj && p.token < cm.points[j].token);
    if (incoming_wins) {
      st.demoted[p.slot].push_back(cm.points[j].token);
      cell = i;
      st.B_hat[k][p.slot] = p.token;
    } else {
      st.demoted[p.slot].push_back(p.token);
    }
  }
  for (auto& d : st.demoted) std::sort(d.begin(), d.end());
  return st;
}

void score_matrix(AssignmentState& st, const ClusterModel& cm) {
  for (std::size_t k = 0; k < st.K; ++k) {
    for (std::size_t n = 0; n < st.N; ++n) {
      const auto& cell = st.sample_of[k][n];
      if (!cell) {
        st.D(k, n) = 0.0;
        st.distances(k, n) = kInf;
        continue;
      }
      const double d = (cm.points.at(*cell).h - cm.centroids.at(k)).norm();
      st.distances(k, n) = d;
      st.D(k, n) = d > 0.0 ? 1.0 / d : kInf;
    }
  }
  st.score_threshold = compute_score_threshold(cm);
  st.scored = true;
}

double compute_score_threshold(const ClusterModel& cm) {
  require(!cm.points.empty(), "compute_score_threshold: no clustered vectors");
  double total = 0.0;
  for (std::size_t i = 0; i < cm.points.size(); ++i) total += cm.distances.at(i);
  if (total <= 0.0) return kInf;
  const double mean = total / static_cast<double>(cm.points.size());
  return 1.0 / (2.0 * mean);
}

void refine_assignment(AssignmentState& st) {
  require(st.scored, "refine_assignment: score matrix not computed");
  st.refined = true;
  if (std::isinf(st.score_threshold)) return;

  const double cutoff = 1.0 / st.score_threshold;
  for (std::size_t n = 0; n < st.N; ++n) {
    std::set<TokenId> candidates(st.demoted[n].begin(), st.demoted[n].end());
    std::vector<std::size_t> low;
    for (std::size_t k = 0; k < st.K; ++k) {
      if (!st.B_hat[k][n]) {
        low.push_back(k);
        continue;
      }
      if (st.distances(k, n) > cutoff) {
        candidates.insert(*st.B_hat[k][n]);
        st.B_hat[k][n].reset();
        st.sample_of[k][n].reset();
        low.push_back(k);
      }
    }
    if (candidates.size() == 1) {
      // one token shared by several devices
      const TokenId token = *candidates.begin();
      for (std::size_t k : low) {
        st.B_hat[k][n] = token;
        st.D(k, n) = 1.0;
        st.distances(k, n) = 1.0;
      }
      candidates.clear();
    }
    st.candidates[n].assign(candidates.begin(), candidates.end());
  }
}

}  // namespace todma
