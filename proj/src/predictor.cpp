#include "todma/predictor.hpp"

#include <algorithm>
#include <numeric>

namespace todma {

void MaskedSequence::validate() const {
  for (const auto& [pos, cands] : candidates) {
    require(pos < tokens.size(), "MaskedSequence: candidate position out of range");
    require(!tokens[pos].has_value(), "MaskedSequence: candidates given for an unmasked position");
  }
}

std::vector<std::size_t> MaskedSequence::masked_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t n = 0; n < tokens.size(); ++n)
    if (!tokens[n]) out.push_back(n);
  return out;
}

const std::vector<TokenId>* MaskedSequence::candidates_at(std::size_t pos) const {
  const auto it = candidates.find(pos);
  return it == candidates.end() ? nullptr : &it->second;
}

const PositionScores* PredictionDistribution::find(std::size_t position) const {
  for (const auto& p : positions)
    if (p.position == position) return &p;
  return nullptr;
}

const char* to_string(PredictorError::Kind kind) {
  switch (kind) {
    case PredictorError::Kind::Timeout: return "timeout";
    case PredictorError::Kind::Malformed: return "malformed";
    case PredictorError::Kind::IdMismatch: return "id-mismatch";
    case PredictorError::Kind::Service: return "service";
    case PredictorError::Kind::Transport: return "transport";
  }
  return "unknown";
}

std::vector<double> markov_posterior(const SourceModel& model, const MaskedSequence& seq, std::size_t pos) {
  const std::size_t Q = model.vocab_size;
  require(pos < seq.tokens.size(), "markov_posterior: position out of range");

  const bool at_start = pos == 0;
  const bool has_left = !at_start && seq.tokens[pos - 1].has_value();
  const bool has_right = pos + 1 < seq.tokens.size() && seq.tokens[pos + 1].has_value();

  std::vector<double> left(Q, 1.0);
  std::vector<double> right(Q, 1.0);
  if (at_start) {
    left = model.initial_dist;
  } else if (has_left) {
    const TokenId history[1] = {*seq.tokens[pos - 1]};
    const auto row = model.next_distribution(history);
    left.assign(row.begin(), row.end());
  }
  if (has_right) {
    const TokenId next = *seq.tokens[pos + 1];
    for (TokenId q = 0; q < Q; ++q) right[q] = model.transition_probability(q, next);
  }

  auto normalized = [](std::vector<double> p) -> std::optional<std::vector<double>> {
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    if (!(total > 0.0)) return std::nullopt;
    for (double& x : p) x /= total;
    return p;
  };

  if (at_start || has_left || has_right) {
    std::vector<double> both(Q);
    for (std::size_t q = 0; q < Q; ++q) both[q] = left[q] * right[q];
    if (auto p = normalized(both)) return *p;
    // incompatible neighbours: trust one side at a time
    if (at_start || has_left)
      if (auto p = normalized(left)) return *p;
    if (has_right)
      if (auto p = normalized(right)) return *p;
  }
  return model.initial_dist;
}

MarkovPredictor::MarkovPredictor(SourceModel model) : model_(std::move(model)) { model_.validate(); }

std::vector<PredictionDistribution> MarkovPredictor::predict(std::span<const MaskedSequence> batch) {
  std::vector<PredictionDistribution> out;
  out.reserve(batch.size());
  for (const auto& seq : batch) {
    PredictionDistribution dist;
    for (std::size_t pos : seq.masked_positions()) dist.positions.push_back({pos, {}, markov_posterior(model_, seq, pos)});
    out.push_back(std::move(dist));
  }
  return out;
}

std::vector<PredictionDistribution> RandomScorePredictor::predict(std::span<const MaskedSequence> batch) {
  std::vector<PredictionDistribution> out;
  out.reserve(batch.size());
  for (const auto& seq : batch) {
    PredictionDistribution dist;
    for (std::size_t pos : seq.masked_positions()) {
      std::vector<double> scores(Q_);
      for (double& s : scores) s = uniform01(rng_);
      dist.positions.push_back({pos, {}, std::move(scores)});
    }
    out.push_back(std::move(dist));
  }
  return out;
}

std::vector<TokenId> choose_tokens(const MaskedSequence& seq, const PredictionDistribution& dist) {
  std::vector<TokenId> out(seq.tokens.size());
  std::vector<std::size_t> missing;
  for (std::size_t n = 0; n < seq.tokens.size(); ++n) {
    if (seq.tokens[n]) {
      out[n] = *seq.tokens[n];
      continue;
    }
    const PositionScores* ps = dist.find(n);
    if (ps == nullptr || ps->scores.empty()) {
      missing.push_back(n);
      continue;
    }
    auto score_of = [&](TokenId q) -> std::optional<double> {
      if (ps->support.empty()) {
        if (q < ps->scores.size()) return ps->scores[q];
        return std::nullopt;
      }
      const auto it = std::find(ps->support.begin(), ps->support.end(), q);
      if (it == ps->support.end()) return std::nullopt;
      return ps->scores[static_cast<std::size_t>(it - ps->support.begin())];
    };

    std::optional<TokenId> best;
    double best_score = 0.0;
    auto consider = [&](TokenId q) {
      const auto s = score_of(q);
      if (!s) return;
      if (!best || *s > best_score || (*s == best_score && q < *best)) {
        best = q;
        best_score = *s;
      }
    };

    const auto* cands = seq.candidates_at(n);
    if (cands && !cands->empty()) {
      for (TokenId q : *cands) consider(q);
      if (!best) {
        // scores did not cover the candidates; the candidate set still rules
        best = *std::min_element(cands->begin(), cands->end());
      }
    } else if (ps->support.empty()) {
      for (TokenId q = 0; q < ps->scores.size(); ++q) consider(q);
    } else {
      for (TokenId q : ps->support) consider(q);
    }
    out[n] = *best;
  }
  if (!missing.empty()) {
    throw PredictorError(PredictorError::Kind::Malformed, "predictor returned no scores for some masked positions",
                         std::move(missing));
  }
  return out;
}

std::vector<TokenId> predict_masked(const MaskedSequence& seq, MaskedTokenPredictor& model) {
  return predict_masked(std::span<const MaskedSequence>(&seq, 1), model).front();
}

std::vector<std::vector<TokenId>> predict_masked(std::span<const MaskedSequence> batch, MaskedTokenPredictor& model) {
  for (const auto& seq : batch) seq.validate();
  const auto dists = model.predict(batch);
  if (dists.size() != batch.size()) {
    throw PredictorError(PredictorError::Kind::Malformed, "predictor returned the wrong number of distributions");
  }
  std::vector<std::vector<TokenId>> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) out.push_back(choose_tokens(batch[i], dists[i]));
  return out;
}

std::vector<TokenId> random_fill(const MaskedSequence& seq, std::size_t Q, Rng& rng) {
  require(Q >= 1, "random_fill: Q must be >= 1");
  std::vector<TokenId> out(seq.tokens.size());
  for (std::size_t n = 0; n < seq.tokens.size(); ++n)
    out[n] = seq.tokens[n] ? *seq.tokens[n] : static_cast<TokenId>(uniform_below(rng, Q));
  return out;
}

MaskedSequence masked_sequence(const AssignmentState& st, std::size_t k) {
  require(k < st.K, "masked_sequence: device index out of range");
  MaskedSequence seq;
  seq.tokens = st.B_hat[k];
  for (std::size_t n = 0; n < st.N; ++n) {
    if (!seq.tokens[n] && n < st.candidates.size() && !st.candidates[n].empty()) {
      seq.candidates.emplace(n, st.candidates[n]);
    }
  }
  return seq;
}

}  // namespace todma
