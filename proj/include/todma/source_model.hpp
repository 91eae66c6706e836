#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "todma/common.hpp"
#include "todma/rng.hpp"

namespace todma {

/// Ground-truth token sequences of K devices, all of length N over a codebook of size Q.
struct TokenBatch {
  std::size_t Q = 0;
  std::size_t N = 0;
  std::vector<std::vector<TokenId>> sequences;

  std::size_t K() const { return sequences.size(); }
  void validate() const;

  /// Distinct active tokens in slot n (sorted).
  std::vector<TokenId> active_set(std::size_t n) const;
  /// Number of slots in which at least two devices share a token.
  std::size_t collision_slots() const;
};

using Corpus = std::vector<std::vector<TokenId>>;

/// Variable-order Markov source with backoff. A context is the list of up to
/// `order` previous tokens, oldest first.
struct SourceModel {
  int order = 1;
  std::size_t vocab_size = 0;
  std::map<std::vector<TokenId>, std::vector<double>> transitions;
  std::vector<double> initial_dist;
  double smoothing = 0.0;

  /// Throws InvalidArgument on malformed rows or out-of-range ids.
  void validate() const;

  /// Next-token distribution given the history so far. Uses the longest
  /// stored suffix of the history; unknown contexts back off to initial_dist.
  std::span<const double> next_distribution(std::span<const TokenId> history) const;

  /// P(next | prev) for first-order lookups; falls back to initial_dist when
  /// the context row is absent.
  double transition_probability(TokenId prev, TokenId next) const;
};

/// Sample K independent sequences of length N. Deterministic given the RNG state.
TokenBatch gen_markov_sources(const SourceModel& model, std::size_t K, std::size_t N, Rng& rng);

/// Maximum-likelihood fit with additive smoothing:
///   P(q | ctx) = (count(ctx, q) + eps) / (count(ctx) + eps * Q).
/// Contexts of every length 1..order are counted so backoff has rows to use.
/// For order 1 with eps > 0 every row is populated (unseen rows become uniform).
SourceModel fit_markov(const Corpus& corpus, std::size_t Q, double smoothing, int order = 1);

/// i.i.d. uniform tokens (order-1 chain with identical uniform rows).
SourceModel uniform_model(std::size_t Q);

/// Order-1 chain in which every row puts its mass on `successors` random
/// tokens with random (Dirichlet(1)) weights. Gives sources with strong,
/// exploitable context at small Q.
SourceModel random_sparse_model(std::size_t Q, std::size_t successors, Rng& rng);

/// One sequence per line, whitespace-separated decimal ids.
Corpus read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, const Corpus& corpus);

}  // namespace todma
