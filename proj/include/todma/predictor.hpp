#pragma once

#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "todma/assignment.hpp"
#include "todma/common.hpp"
#include "todma/rng.hpp"
#include "todma/source_model.hpp"

namespace todma {

/// A device's estimated sequence with holes. Candidate sets are keyed by
/// masked position; a masked position without an entry has no candidates.
struct MaskedSequence {
  std::vector<std::optional<TokenId>> tokens;
  std::map<std::size_t, std::vector<TokenId>> candidates;

  void validate() const;
  std::vector<std::size_t> masked_positions() const;
  const std::vector<TokenId>* candidates_at(std::size_t pos) const;
};

/// Scores for one masked position. An empty support means the scores cover
/// the whole codebook (index = token id); otherwise scores[i] belongs to support[i].
struct PositionScores {
  std::size_t position = 0;
  std::vector<TokenId> support;
  std::vector<double> scores;
};

struct PredictionDistribution {
  std::vector<PositionScores> positions;

  const PositionScores* find(std::size_t position) const;
};

class PredictorError : public std::runtime_error {
 public:
  enum class Kind { Timeout, Malformed, IdMismatch, Service, Transport };

  PredictorError(Kind kind, const std::string& message, std::vector<std::size_t> positions = {})
      : std::runtime_error(message), kind_(kind), positions_(std::move(positions)) {}

  Kind kind() const { return kind_; }
  const std::vector<std::size_t>& positions() const { return positions_; }

 private:
  Kind kind_;
  std::vector<std::size_t> positions_;
};

const char* to_string(PredictorError::Kind kind);

/// Anything that can score every masked position of a batch of sequences in
/// one pass.
class MaskedTokenPredictor {
 public:
  virtual ~MaskedTokenPredictor() = default;
  virtual std::vector<PredictionDistribution> predict(std::span<const MaskedSequence> batch) = 0;
};

/// Order-1 context posterior: P(q | left) * P(right | q) from the adjacent
/// unmasked neighbours. Positions whose neighbour is masked drop that factor;
/// with no usable factor the initial distribution is returned. Always normalized.
std::vector<double> markov_posterior(const SourceModel& model, const MaskedSequence& seq, std::size_t pos);

class MarkovPredictor final : public MaskedTokenPredictor {
 public:
  explicit MarkovPredictor(SourceModel model);
  std::vector<PredictionDistribution> predict(std::span<const MaskedSequence> batch) override;

 private:
  SourceModel model_;
};

/// Context-free scorer: i.i.d. uniform scores, so the restricted argmax is a
/// uniform draw from the candidate set.
class RandomScorePredictor final : public MaskedTokenPredictor {
 public:
  RandomScorePredictor(std::size_t Q, std::uint64_t seed) : Q_(Q), rng_(seed) {}
  std::vector<PredictionDistribution> predict(std::span<const MaskedSequence> batch) override;

 private:
  std::size_t Q_;
  Rng rng_;
};

/// Restricted argmax for every masked position: over the candidate set when
/// it is non-empty, otherwise over the whole codebook. Ties go to the
/// smallest token id. Unmasked positions are copied through.
std::vector<TokenId> choose_tokens(const MaskedSequence& seq, const PredictionDistribution& dist);

std::vector<TokenId> predict_masked(const MaskedSequence& seq, MaskedTokenPredictor& model);
std::vector<std::vector<TokenId>> predict_masked(std::span<const MaskedSequence> batch, MaskedTokenPredictor& model);

/// Uniform draw from [0, Q) for every masked position.
std::vector<TokenId> random_fill(const MaskedSequence& seq, std::size_t Q, Rng& rng);

/// Device k's row of the assignment as a masked sequence. Masked positions
/// of slots with a non-empty candidate set carry that set.
MaskedSequence masked_sequence(const AssignmentState& st, std::size_t k);

}  // namespace todma
