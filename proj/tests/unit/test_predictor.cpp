#include <doctest.h>

#include <cmath>

#include "todma/predictor.hpp"

using namespace todma;

namespace {

SourceModel chain(std::vector<std::vector<double>> P, std::vector<double> init) {
  SourceModel m;
  m.vocab_size = P.size();
  for (std::size_t i = 0; i < P.size(); ++i) m.transitions[{static_cast<TokenId>(i)}] = P[i];
  m.initial_dist = std::move(init);
  return m;
}

MaskedSequence seq_of(std::vector<std::optional<TokenId>> tokens, std::map<std::size_t, std::vector<TokenId>> cands = {}) {
  return {std::move(tokens), std::move(cands)};
}

// Scores every masked position with a fixed vector over the codebook.
class FixedPredictor final : public MaskedTokenPredictor {
 public:
  explicit FixedPredictor(std::vector<double> scores) : scores_(std::move(scores)) {}
  std::vector<PredictionDistribution> predict(std::span<const MaskedSequence> batch) override {
    std::vector<PredictionDistribution> out;
    for (const auto& s : batch) {
      PredictionDistribution d;
      for (auto pos : s.masked_positions()) d.positions.push_back({pos, {}, scores_});
      out.push_back(d);
    }
    return out;
  }

 private:
  std::vector<double> scores_;
};

}  // namespace

TEST_SUITE("predictor") {
  TEST_CASE("masked sequence invariants") {
    auto s = seq_of({1, std::nullopt, 3}, {{1, {2, 4}}});
    s.validate();
    CHECK(s.masked_positions() == std::vector<std::size_t>{1});
    REQUIRE(s.candidates_at(1) != nullptr);
    CHECK(s.candidates_at(0) == nullptr);
    CHECK_THROWS_AS(seq_of({1, 2}, {{0, {3}}}).validate(), InvalidArgument);
    CHECK_THROWS_AS(seq_of({1, std::nullopt}, {{5, {3}}}).validate(), InvalidArgument);
  }

  TEST_CASE("posterior: hand example") {
    const auto m = chain({{0.9, 0.1}, {0.5, 0.5}}, {0.5, 0.5});
    const auto p = markov_posterior(m, seq_of({0, std::nullopt, 0}), 1);
    CHECK(p[0] == doctest::Approx(0.81 / 0.86).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(0.05 / 0.86).epsilon(1e-12));
    CHECK(p[0] == doctest::Approx(0.942).epsilon(1e-3));
    CHECK(p[1] == doctest::Approx(0.058).epsilon(1e-2));
  }

  TEST_CASE("posterior: uniform chain is uniform") {
    const auto m = uniform_model(5);
    const auto p = markov_posterior(m, seq_of({2, std::nullopt, 4}), 1);
    for (double x : p) CHECK(x == doctest::Approx(0.2).epsilon(1e-12));
  }

  TEST_CASE("posterior: deterministic chain is one-hot") {
    const auto m = chain({{0, 1, 0}, {0, 0, 1}, {1, 0, 0}}, {1, 0, 0});
    const auto p = markov_posterior(m, seq_of({0, std::nullopt, 2}), 1);
    CHECK(p == std::vector<double>{0, 1, 0});
  }

  TEST_CASE("posterior: gaps and the sequence start") {
    const auto m = chain({{0.9, 0.1}, {0.5, 0.5}}, {0.2, 0.8});
    // start, right neighbour 0: init(q) * P(q -> 0)
    auto p = markov_posterior(m, seq_of({std::nullopt, 0}), 0);
    CHECK(p[0] == doctest::Approx(0.2 * 0.9 / (0.2 * 0.9 + 0.8 * 0.5)).epsilon(1e-12));
    // both neighbours masked: initial distribution
    p = markov_posterior(m, seq_of({1, std::nullopt, std::nullopt, std::nullopt, 1}), 2);
    CHECK(p == std::vector<double>{0.2, 0.8});
    // left only
    p = markov_posterior(m, seq_of({0, std::nullopt, std::nullopt}), 1);
    CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-12));
    // right only
    p = markov_posterior(m, seq_of({std::nullopt, std::nullopt, 1}), 1);
    CHECK(p[0] == doctest::Approx(0.1 / 0.6).epsilon(1e-12));
  }

  TEST_CASE("constructed chain a -> b picks b over c") {
    // 0 (a) -> 1 (b) deterministically, b -> 3, c (2) -> 3 too
    const auto m = chain({{0, 1, 0, 0}, {0, 0, 0, 1}, {0, 0, 0, 1}, {1, 0, 0, 0}}, {1, 0, 0, 0});
    MarkovPredictor pred(m);
    const auto out = predict_masked(seq_of({0, std::nullopt, 3}, {{1, {1, 2}}}), pred);
    CHECK(out == std::vector<TokenId>{0, 1, 3});
  }

  TEST_CASE("singleton candidate wins regardless of scores") {
    FixedPredictor pred({0.0, 0.0, 0.0, 1.0});
    const auto out = predict_masked(seq_of({std::nullopt}, {{0, {1}}}), pred);
    CHECK(out == std::vector<TokenId>{1});
  }

  TEST_CASE("restricted argmax, fallback and ties") {
    FixedPredictor pred({0.1, 0.4, 0.4, 0.9});
    // restricted: 3 is best overall but not a candidate
    CHECK(predict_masked(seq_of({std::nullopt}, {{0, {0, 1, 2}}}), pred) == std::vector<TokenId>{1});
    // empty candidate set: full codebook
    CHECK(predict_masked(seq_of({std::nullopt}), pred) == std::vector<TokenId>{3});
    FixedPredictor flat({0.5, 0.5, 0.5});
    CHECK(predict_masked(seq_of({std::nullopt}), flat) == std::vector<TokenId>{0});
    CHECK(predict_masked(seq_of({std::nullopt}, {{0, {2, 1}}}), flat) == std::vector<TokenId>{1});
  }

  TEST_CASE("unmasked positions are never changed") {
    Rng rng = make_rng(2);
    const auto m = random_sparse_model(8, 3, rng);
    MarkovPredictor markov(m);
    RandomScorePredictor random(8, 5);
    for (int rep = 0; rep < 50; ++rep) {
      MaskedSequence s;
      for (int n = 0; n < 12; ++n) {
        if (uniform01(rng) < 0.3) {
          s.tokens.push_back(std::nullopt);
          if (uniform01(rng) < 0.5) s.candidates[n] = {static_cast<TokenId>(uniform_below(rng, 8)), 7};
        } else {
          s.tokens.push_back(static_cast<TokenId>(uniform_below(rng, 8)));
        }
      }
      for (MaskedTokenPredictor* p : {static_cast<MaskedTokenPredictor*>(&markov), static_cast<MaskedTokenPredictor*>(&random)}) {
        const auto out = predict_masked(s, *p);
        for (std::size_t n = 0; n < 12; ++n) {
          if (s.tokens[n]) CHECK(out[n] == *s.tokens[n]);
          if (const auto* c = s.candidates_at(n)) CHECK(std::find(c->begin(), c->end(), out[n]) != c->end());
        }
      }
    }
  }

  TEST_CASE("random fill") {
    Rng a = make_rng(3), b = make_rng(3);
    const auto s = seq_of({1, std::nullopt, 2, std::nullopt});
    CHECK(random_fill(s, 10, a) == random_fill(s, 10, b));
    Rng c = make_rng(4);
    CHECK(random_fill(seq_of({5, 6}), 10, c) == std::vector<TokenId>{5, 6});

    MaskedSequence many;
    many.tokens.assign(100000, std::nullopt);
    Rng d = make_rng(6);
    const auto out = random_fill(many, 4, d);
    std::vector<double> freq(4, 0.0);
    for (auto t : out) freq[t] += 1.0 / 100000;
    for (double f : freq) CHECK(std::abs(f - 0.25) < 0.01);
  }

  TEST_CASE("missing scores are a malformed prediction") {
    class Lazy final : public MaskedTokenPredictor {
     public:
      std::vector<PredictionDistribution> predict(std::span<const MaskedSequence> batch) override {
        return std::vector<PredictionDistribution>(batch.size());
      }
    } lazy;
    try {
      predict_masked(seq_of({1, std::nullopt, std::nullopt}), lazy);
      FAIL("expected PredictorError");
    } catch (const PredictorError& e) {
      CHECK(e.kind() == PredictorError::Kind::Malformed);
      CHECK(e.positions() == std::vector<std::size_t>{1, 2});
    }
  }

  TEST_CASE("masked_sequence exports the candidate sets") {
    AssignmentState st;
    st.K = 2;
    st.N = 3;
    st.B_hat = {{1, std::nullopt, 3}, {std::nullopt, std::nullopt, 4}};
    st.candidates = {{}, {6, 9}, {}};
    const auto s = masked_sequence(st, 0);
    CHECK(s.masked_positions() == std::vector<std::size_t>{1});
    CHECK(*s.candidates_at(1) == std::vector<TokenId>{6, 9});
    const auto t = masked_sequence(st, 1);
    CHECK(t.candidates_at(0) == nullptr);
    CHECK_THROWS_AS(masked_sequence(st, 2), InvalidArgument);
  }
}
