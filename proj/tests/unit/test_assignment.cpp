#include <doctest.h>

#include <cmath>
#include <limits>

#include "todma/assignment.hpp"

using namespace todma;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Hand-built cluster model: scalar (M=1) CSI, centroids at 0 and 10.
// Each entry is (slot, token, value, cluster).
struct Point {
  std::size_t slot;
  TokenId token;
  double value;
  std::size_t cluster;
};

struct Scene {
  ClusterModel cm;
  std::vector<DetectionOutput> detections;
};

Scene make_scene(std::size_t N, const std::vector<Point>& points, std::vector<double> centroids = {0.0, 10.0}) {
  Scene s;
  s.cm.K = centroids.size();
  for (double c : centroids) s.cm.centroids.push_back(CVector::Constant(1, Complex(c, 0)));
  s.detections.resize(N);
  for (const auto& p : points) {
    CVector h = CVector::Constant(1, Complex(p.value, 0));
    s.detections[p.slot].active_set.push_back(p.token);
    s.detections[p.slot].csi[p.token] = h;
  }
  for (auto& d : s.detections) {
    std::sort(d.active_set.begin(), d.active_set.end());
    d.empty_detection = d.active_set.empty();
  }
  s.cm.points = collect_csi(s.detections);
  for (const auto& sample : s.cm.points) {
    const auto it = std::find_if(points.begin(), points.end(),
                                 [&](const Point& p) { return p.slot == sample.slot && p.token == sample.token; });
    s.cm.labels.push_back(it->cluster);
    const double d = std::abs(it->value - centroids[it->cluster]);
    s.cm.distances.push_back(d);
    s.cm.inertia += d;
    s.cm.sse += d * d;
    s.cm.membership[{sample.slot, sample.token}] = it->cluster;
  }
  return s;
}

}  // namespace

TEST_SUITE("assignment") {
  TEST_CASE("collect_csi orders by slot then token") {
    std::vector<DetectionOutput> det(2);
    det[0].active_set = {4, 1};
    det[0].csi[4] = CVector::Ones(1);
    det[0].csi[1] = CVector::Zero(1);
    det[1].active_set = {2};
    det[1].csi[2] = CVector::Ones(1);
    const auto s = collect_csi(det);
    REQUIRE(s.size() == 3);
    CHECK(s[0].slot == 0);
    CHECK(s[0].token == 1);
    CHECK(s[1].token == 4);
    CHECK(s[2].slot == 1);
  }

  TEST_CASE("each device gets the token of its cluster") {
    const auto s = make_scene(2, {{0, 3, 0.5, 0}, {0, 7, 9.0, 1}, {1, 2, -1.0, 0}, {1, 5, 10.5, 1}});
    const auto st = coarse_assign(s.cm, s.detections);
    CHECK(st.B_hat[0][0] == 3u);
    CHECK(st.B_hat[1][0] == 7u);
    CHECK(st.B_hat[0][1] == 2u);
    CHECK(st.B_hat[1][1] == 5u);
    CHECK(st.masked_count() == 0);
    CHECK(st.same_cluster_conflicts == 0);
  }

  TEST_CASE("a collision slot with K-1 tokens leaves a device empty") {
    const auto s = make_scene(1, {{0, 4, 5.5, 1}});
    auto st = coarse_assign(s.cm, s.detections);
    CHECK(st.is_masked(0, 0));
    CHECK(st.B_hat[1][0] == 4u);
    score_matrix(st, s.cm);
    CHECK(st.D(0, 0) == 0.0);
    CHECK(st.distances(0, 0) == kInf);
  }

  TEST_CASE("same-slot vectors in one cluster: nearer one kept, other demoted") {
    const auto s = make_scene(1, {{0, 1, 2.0, 0}, {0, 6, 0.5, 0}});
    const auto st = coarse_assign(s.cm, s.detections);
    CHECK(st.B_hat[0][0] == 6u);
    CHECK(st.is_masked(1, 0));
    CHECK(st.demoted[0] == std::vector<TokenId>{1});
    CHECK(st.same_cluster_conflicts == 1);
  }

  TEST_CASE("scores are reciprocal distances") {
    const auto s = make_scene(1, {{0, 1, 0.5, 0}, {0, 2, 10.0, 1}});
    auto st = coarse_assign(s.cm, s.detections);
    score_matrix(st, s.cm);
    CHECK(st.D(0, 0) == 2.0);
    CHECK(st.distances(0, 0) == 0.5);
    CHECK(st.D(1, 0) == kInf);  // sits on its centroid
    CHECK(st.distances(1, 0) == 0.0);
  }

  TEST_CASE("score threshold") {
    auto s = make_scene(1, {{0, 1, 1.0, 0}, {0, 2, 13.0, 1}});  // distances {1, 3}
    CHECK(compute_score_threshold(s.cm) == 0.25);
    s = make_scene(1, {{0, 1, 2.0, 0}, {0, 2, 12.0, 1}});  // both 2
    CHECK(compute_score_threshold(s.cm) == 0.25);
    s = make_scene(1, {{0, 1, 0.0, 0}, {0, 2, 10.0, 1}});
    CHECK(compute_score_threshold(s.cm) == kInf);
    ClusterModel empty;
    CHECK_THROWS_AS(compute_score_threshold(empty), InvalidArgument);
  }

  TEST_CASE("all vectors on their centroids: refine is a no-op") {
    const auto s = make_scene(2, {{0, 1, 0.0, 0}, {0, 2, 10.0, 1}, {1, 3, 10.0, 1}});
    auto st = coarse_assign(s.cm, s.detections);
    score_matrix(st, s.cm);
    const auto before = st.B_hat;
    refine_assignment(st);
    CHECK(st.B_hat == before);
    CHECK(st.candidates[1].empty());
  }

  TEST_CASE("singleton candidate set fills every low cell with D=1") {
    // slot 0: token 9 is the sum of both channels, far from either centroid
    // slot 1: clean
    const auto s = make_scene(3, {{0, 9, 5.0, 0}, {1, 1, 0.1, 0}, {1, 2, 10.1, 1}, {2, 3, -0.1, 0}, {2, 4, 9.9, 1}});
    auto st = coarse_assign(s.cm, s.detections);
    score_matrix(st, s.cm);
    // mean distance 1.04 -> cutoff 2.08 < 5
    refine_assignment(st);
    CHECK(st.B_hat[0][0] == 9u);
    CHECK(st.B_hat[1][0] == 9u);
    CHECK(st.D(0, 0) == 1.0);
    CHECK(st.D(1, 0) == 1.0);
    CHECK(st.candidates[0].empty());
    CHECK(st.B_hat[0][1] == 1u);
    CHECK(st.masked_count() == 0);
  }

  TEST_CASE("two low-score tokens: both cells masked, two candidates") {
    const auto s = make_scene(3, {{0, 5, 4.0, 0}, {0, 8, 6.0, 1}, {1, 1, 0.1, 0}, {1, 2, 10.1, 1}, {2, 3, -0.1, 0},
                                  {2, 4, 9.9, 1}});
    auto st = coarse_assign(s.cm, s.detections);
    score_matrix(st, s.cm);
    refine_assignment(st);
    CHECK(st.is_masked(0, 0));
    CHECK(st.is_masked(1, 0));
    CHECK(st.candidates[0] == std::vector<TokenId>{5, 8});
    CHECK(st.masked_count() == 2);
  }

  TEST_CASE("nothing below the threshold leaves the state unchanged") {
    const auto s = make_scene(2, {{0, 1, 1.0, 0}, {0, 2, 11.0, 1}, {1, 3, 1.0, 0}, {1, 4, 9.0, 1}});
    auto st = coarse_assign(s.cm, s.detections);
    score_matrix(st, s.cm);
    const auto B = st.B_hat;
    const RMatrix D = st.D;
    refine_assignment(st);
    CHECK(st.B_hat == B);
    CHECK(st.D == D);
    for (const auto& c : st.candidates) CHECK(c.empty());
  }

  TEST_CASE("demoted tokens join the candidate set") {
    const auto s = make_scene(2, {{0, 1, 0.2, 0}, {0, 6, 0.3, 0}, {1, 3, 0.1, 0}, {1, 4, 9.9, 1}});
    auto st = coarse_assign(s.cm, s.detections);
    score_matrix(st, s.cm);
    refine_assignment(st);
    // device 1 in slot 0 is empty; the demoted token is the only candidate
    CHECK(st.B_hat[1][0] == 6u);
    CHECK(st.B_hat[0][0] == 1u);
  }

  TEST_CASE("post-refine cell invariant") {
    Rng rng = make_rng(44);
    for (int rep = 0; rep < 30; ++rep) {
      std::vector<Point> pts;
      const std::size_t N = 6;
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t count = uniform_below(rng, 4);
        for (std::size_t i = 0; i < count; ++i) {
          const double v = 12.0 * uniform01(rng) - 1.0;
          pts.push_back({n, static_cast<TokenId>(i * 3 + 1), v, v < 5.0 ? 0u : 1u});
        }
      }
      if (pts.empty()) continue;
      const auto s = make_scene(N, pts);
      auto st = coarse_assign(s.cm, s.detections);
      score_matrix(st, s.cm);
      refine_assignment(st);
      if (std::isinf(st.score_threshold)) continue;
      for (std::size_t k = 0; k < 2; ++k) {
        for (std::size_t n = 0; n < N; ++n) {
          if (st.is_masked(k, n)) {
            CHECK(st.D(k, n) < st.score_threshold);
          } else {
            CHECK((st.D(k, n) >= st.score_threshold || st.D(k, n) == 1.0));
          }
        }
      }
    }
  }

  TEST_CASE("refine requires scores") {
    const auto s = make_scene(1, {{0, 1, 1.0, 0}});
    auto st = coarse_assign(s.cm, s.detections);
    CHECK_THROWS_AS(refine_assignment(st), InvalidArgument);
  }
}
