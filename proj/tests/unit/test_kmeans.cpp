#include <doctest.h>

#include <cmath>
#include <set>

#include "todma/assignment.hpp"

using namespace todma;

namespace {

std::vector<CsiSample> blob(std::size_t count, const CVector& center, double spread, Rng& rng, std::size_t first_slot) {
  std::vector<CsiSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    CVector h = center;
    for (Eigen::Index m = 0; m < h.size(); ++m) h(m) += complex_normal(rng, spread * spread);
    out.push_back({first_slot + i, static_cast<TokenId>(i % 7), h});
  }
  return out;
}

}  // namespace

TEST_SUITE("kmeans") {
  TEST_CASE("K=1 centroid is the mean") {
    Rng rng = make_rng(1);
    const auto pts = blob(25, CVector::Zero(3), 1.0, rng, 0);
    CVector mean = CVector::Zero(3);
    for (const auto& p : pts) mean += p.h;
    mean /= 25.0;
    Rng krng = make_rng(2);
    const auto cm = kmeanspp_cluster(pts, 1, krng);
    CHECK((cm.centroids[0] - mean).norm() < 1e-12);
    for (auto l : cm.labels) CHECK(l == 0);
  }

  TEST_CASE("well separated groups are recovered exactly") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng = make_rng(seed);
      CVector a = CVector::Zero(4), b = CVector::Constant(4, Complex(100.0, 0.0));
      auto pts = blob(30, a, 0.5, rng, 0);
      const auto pb = blob(20, b, 0.5, rng, 30);
      pts.insert(pts.end(), pb.begin(), pb.end());
      Rng krng = make_rng(1000 + seed);
      const auto cm = kmeanspp_cluster(pts, 2, krng);
      const std::size_t la = cm.labels[0], lb = cm.labels[30];
      CHECK(la != lb);
      for (std::size_t i = 0; i < 30; ++i) CHECK(cm.labels[i] == la);
      for (std::size_t i = 30; i < 50; ++i) CHECK(cm.labels[i] == lb);
    }
  }

  TEST_CASE("same inputs and seed give the same membership") {
    Rng rng = make_rng(5);
    const auto pts = blob(60, CVector::Zero(5), 1.0, rng, 0);
    Rng r1 = make_rng(9), r2 = make_rng(9);
    const auto a = kmeanspp_cluster(pts, 4, r1);
    const auto b = kmeanspp_cluster(pts, 4, r2);
    CHECK(a.membership == b.membership);
    CHECK(a.labels == b.labels);
  }

  TEST_CASE("bookkeeping is consistent") {
    Rng rng = make_rng(6);
    const auto pts = blob(80, CVector::Zero(4), 1.0, rng, 0);
    Rng krng = make_rng(7);
    const auto cm = kmeanspp_cluster(pts, 5, krng, {100, 3});
    REQUIRE(cm.labels.size() == 80);
    double inertia = 0.0, sse = 0.0;
    for (std::size_t i = 0; i < 80; ++i) {
      const double d = (pts[i].h - cm.centroids[cm.labels[i]]).norm();
      CHECK(cm.distances[i] == doctest::Approx(d).epsilon(1e-12));
      inertia += d;
      sse += d * d;
      // nearest centroid
      for (std::size_t k = 0; k < 5; ++k) CHECK((pts[i].h - cm.centroids[k]).norm() >= d - 1e-9);
      CHECK(cm.membership.at({pts[i].slot, pts[i].token}) == cm.labels[i]);
    }
    CHECK(cm.inertia == doctest::Approx(inertia).epsilon(1e-12));
    CHECK(cm.sse == doctest::Approx(sse).epsilon(1e-12));
    for (std::size_t i = 1; i < cm.sse_history.size(); ++i) CHECK(cm.sse_history[i] <= cm.sse_history[i - 1] * (1 + 1e-12));
    std::set<std::size_t> used(cm.labels.begin(), cm.labels.end());
    CHECK(used.size() == 5);
  }

  TEST_CASE("more restarts never raise the objective") {
    Rng rng = make_rng(8);
    const auto pts = blob(100, CVector::Zero(3), 1.0, rng, 0);
    Rng r1 = make_rng(3), r2 = make_rng(3);
    const auto one = kmeanspp_cluster(pts, 6, r1, {100, 1});
    const auto many = kmeanspp_cluster(pts, 6, r2, {100, 8});
    CHECK(many.sse <= one.sse + 1e-12);
  }

  TEST_CASE("identical points still give K non-empty clusters") {
    std::vector<CsiSample> pts;
    for (std::size_t i = 0; i < 6; ++i) pts.push_back({i, 0, CVector::Ones(2)});
    Rng rng = make_rng(1);
    const auto cm = kmeanspp_cluster(pts, 3, rng);
    std::set<std::size_t> used(cm.labels.begin(), cm.labels.end());
    CHECK(used.size() == 3);
    CHECK(cm.inertia == 0.0);
  }

  TEST_CASE("errors") {
    Rng rng = make_rng(1);
    std::vector<CsiSample> pts{{0, 0, CVector::Ones(2)}};
    CHECK_THROWS_AS(kmeanspp_cluster(pts, 2, rng), InvalidArgument);
    CHECK_THROWS_AS(kmeanspp_cluster(pts, 0, rng), InvalidArgument);
    pts.push_back({1, 0, CVector::Ones(3)});
    CHECK_THROWS_AS(kmeanspp_cluster(pts, 1, rng), InvalidArgument);
  }
}
