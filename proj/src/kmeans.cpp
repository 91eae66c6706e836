#include <cmath>
#include <limits>

#include "todma/assignment.hpp"

namespace todma {

namespace {

struct Run {
  std::vector<CVector> centroids;
  std::vector<std::size_t> labels;
  std::vector<double> sse_history;
  double sse = std::numeric_limits<double>::infinity();
  int iterations = 0;
};

std::vector<CVector> seed_centroids(std::span<const CsiSample> pts, std::size_t K, Rng& rng) {
  std::vector<CVector> centroids;
  centroids.reserve(K);
  centroids.push_back(pts[uniform_below(rng, pts.size())].h);

  std::vector<double> d2(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) d2[i] = (pts[i].h - centroids[0]).squaredNorm();

  while (centroids.size() < K) {
    double total = 0.0;
    for (double x : d2) total += x;
    std::size_t pick;
    if (total > 0.0) {
      pick = sample_index(d2, rng);
    } else {
      // every point already coincides with a centroid
      pick = uniform_below(rng, pts.size());
    }
    centroids.push_back(pts[pick].h);
    for (std::size_t i = 0; i < pts.size(); ++i) d2[i] = std::min(d2[i], (pts[i].h - centroids.back()).squaredNorm());
  }
  return centroids;
}

Run lloyd(std::span<const CsiSample> pts, std::size_t K, Rng& rng, int max_iterations) {
  Run run;
  run.centroids = seed_centroids(pts, K, rng);
  run.labels.assign(pts.size(), K);
  std::vector<double> d2(pts.size());
  const Eigen::Index M = pts.front().h.size();

  for (int it = 0; it < max_iterations; ++it) {
    bool changed = false;
    double sse = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < K; ++k) {
        const double d = (pts[i].h - run.centroids[k]).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      if (run.labels[i] != best) changed = true;
      run.labels[i] = best;
      d2[i] = best_d;
      sse += best_d;
    }
    if (!run.sse_history.empty() && sse > run.sse_history.back() * (1.0 + 1e-12) + 1e-12) {
      throw NumericalError("k-means objective increased during Lloyd iterations");
    }
    run.sse_history.push_back(sse);
    run.sse = sse;
    run.iterations = it + 1;
    if (!changed) break;

    std::vector<CVector> sums(K, CVector::Zero(M));
    std::vector<std::size_t> counts(K, 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      sums[run.labels[i]] += pts[i].h;
      ++counts[run.labels[i]];
    }
    for (std::size_t k = 0; k < K; ++k) {
      if (counts[k] > 0) {
        run.centroids[k] = sums[k] / static_cast<double>(counts[k]);
        continue;
      }
      // empty cluster: steal the point farthest from its own centroid
      std::size_t far = 0;
      for (std::size_t i = 1; i < pts.size(); ++i)
        if (d2[i] > d2[far]) far = i;
      run.centroids[k] = pts[far].h;
      d2[far] = 0.0;
    }
  }

  // coincident points can leave clusters empty after the last step; hand each
  // one the farthest point of a cluster that can spare it
  std::vector<std::size_t> counts(K, 0);
  for (std::size_t label : run.labels) ++counts[label];
  for (std::size_t k = 0; k < K; ++k) {
    if (counts[k] > 0) continue;
    std::size_t far = pts.size();
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (counts[run.labels[i]] > 1 && (far == pts.size() || d2[i] > d2[far])) far = i;
    --counts[run.labels[far]];
    ++counts[k];
    run.labels[far] = k;
    run.centroids[k] = pts[far].h;
    run.sse -= d2[far];
    d2[far] = 0.0;
  }
  return run;
}

}  // namespace

std::vector<CsiSample> collect_csi(std::span<const DetectionOutput> detections) {
  std::vector<CsiSample> out;
  for (std::size_t n = 0; n < detections.size(); ++n) {
    for (const auto& [token, h] : detections[n].csi) out.push_back({n, token, h});
  }
  return out;
}

ClusterModel kmeanspp_cluster(std::span<const CsiSample> samples, std::size_t K, Rng& rng, KMeansOptions options) {
  require(K >= 1, "kmeanspp_cluster: K must be >= 1");
  require(samples.size() >= K, "kmeanspp_cluster: fewer CSI vectors than clusters");
  require(options.max_iterations >= 1 && options.restarts >= 1, "kmeanspp_cluster: bad options");
  const auto M = samples.front().h.size();
  for (const auto& s : samples) require(s.h.size() == M, "kmeanspp_cluster: inconsistent vector length");

  Run best;
  for (int r = 0; r < options.restarts; ++r) {
    Run run = lloyd(samples, K, rng, options.max_iterations);
    if (run.sse < best.sse) best = std::move(run);
  }

  ClusterModel cm;
  cm.K = K;
  cm.points.assign(samples.begin(), samples.end());
  cm.labels = std::move(best.labels);
  cm.sse_history = std::move(best.sse_history);
  cm.iterations = best.iterations;

  // centroids consistent with the final partition
  cm.centroids.assign(K, CVector::Zero(M));
  std::vector<std::size_t> counts(K, 0);
  for (std::size_t i = 0; i < cm.points.size(); ++i) {
    cm.centroids[cm.labels[i]] += cm.points[i].h;
    ++counts[cm.labels[i]];
  }
  for (std::size_t k = 0; k < K; ++k) {
    if (counts[k] > 0)
      cm.centroids[k] /= static_cast<double>(counts[k]);
    else
      cm.centroids[k] = best.centroids[k];
  }

  cm.distances.resize(cm.points.size());
  for (std::size_t i = 0; i < cm.points.size(); ++i) {
    const double d = (cm.points[i].h - cm.centroids[cm.labels[i]]).norm();
    cm.distances[i] = d;
    cm.inertia += d;
    cm.sse += d * d;
    cm.membership[{cm.points[i].slot, cm.points[i].token}] = cm.labels[i];
  }
  return cm;
}

}  // namespace todma
