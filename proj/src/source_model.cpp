#include "todma/source_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace todma {

namespace {

constexpr double kNormTolerance = 1e-9;

void check_distribution(std::span<const double> p, std::size_t Q, const std::string& what) {
  require(p.size() == Q, what + ": distribution has wrong length");
  double total = 0.0;
  for (double x : p) {
    require(std::isfinite(x) && x >= 0.0, what + ": negative or non-finite probability");
    total += x;
  }
  require(std::abs(total - 1.0) <= kNormTolerance, what + ": probabilities do not sum to 1");
}

std::vector<double> normalized_row(const std::vector<double>& counts, double smoothing) {
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  const double denom = total + smoothing * static_cast<double>(counts.size());
  std::vector<double> row(counts.size());
  for (std::size_t q = 0; q < counts.size(); ++q) row[q] = (counts[q] + smoothing) / denom;
  return row;
}

}  // namespace

void TokenBatch::validate() const {
  require(Q > 0, "TokenBatch: Q must be positive");
  for (const auto& seq : sequences) {
    require(seq.size() == N, "TokenBatch: all sequences must have length N");
    for (TokenId t : seq) require(t < Q, "TokenBatch: token id out of range");
  }
}

std::vector<TokenId> TokenBatch::active_set(std::size_t n) const {
  std::set<TokenId> active;
  for (const auto& seq : sequences) active.insert(seq.at(n));
  return {active.begin(), active.end()};
}

std::size_t TokenBatch::collision_slots() const {
  std::size_t count = 0;
  for (std::size_t n = 0; n < N; ++n) {
    if (active_set(n).size() < K()) ++count;
  }
  return count;
}

void SourceModel::validate() const {
  require(order >= 1 && order <= 3, "SourceModel: order must be in [1, 3]");
  require(vocab_size >= 1, "SourceModel: empty vocabulary");
  require(smoothing >= 0.0, "SourceModel: smoothing must be non-negative");
  check_distribution(initial_dist, vocab_size, "SourceModel initial_dist");
  for (const auto& [context, row] : transitions) {
    require(!context.empty() && context.size() <= static_cast<std::size_t>(order),
            "SourceModel: context length must be in [1, order]");
    for (TokenId t : context) require(t < vocab_size, "SourceModel: context token out of range");
    check_distribution(row, vocab_size, "SourceModel transition row");
  }
}

std::span<const double> SourceModel::next_distribution(std::span<const TokenId> history) const {
  const std::size_t longest = std::min<std::size_t>(history.size(), static_cast<std::size_t>(order));
  for (std::size_t len = longest; len >= 1; --len) {
    std::vector<TokenId> context(history.end() - static_cast<std::ptrdiff_t>(len), history.end());
    if (auto it = transitions.find(context); it != transitions.end()) return it->second;
  }
  return initial_dist;
}

double SourceModel::transition_probability(TokenId prev, TokenId next) const {
  const TokenId history[1] = {prev};
  return next_distribution(history)[next];
}

TokenBatch gen_markov_sources(const SourceModel& model, std::size_t K, std::size_t N, Rng& rng) {
  require(K >= 1, "gen_markov_sources: K must be >= 1");
  require(N >= 1, "gen_markov_sources: N must be >= 1");
  model.validate();

  TokenBatch batch;
  batch.Q = model.vocab_size;
  batch.N = N;
  batch.sequences.resize(K);
  for (auto& seq : batch.sequences) {
    seq.reserve(N);
    seq.push_back(static_cast<TokenId>(sample_index(model.initial_dist, rng)));
    while (seq.size() < N) {
      seq.push_back(static_cast<TokenId>(sample_index(model.next_distribution(seq), rng)));
    }
  }
  return batch;
}

SourceModel fit_markov(const Corpus& corpus, std::size_t Q, double smoothing, int order) {
  require(Q >= 2, "fit_markov: Q must be >= 2");
  require(smoothing >= 0.0, "fit_markov: smoothing must be non-negative");
  require(order >= 1 && order <= 3, "fit_markov: order must be in [1, 3]");
  require(!corpus.empty(), "fit_markov: empty corpus");

  std::vector<double> first_counts(Q, 0.0);
  std::map<std::vector<TokenId>, std::vector<double>> counts;
  std::size_t non_empty = 0;
  for (const auto& seq : corpus) {
    for (TokenId t : seq) require(t < Q, "fit_markov: token id >= Q");
    if (seq.empty()) continue;
    ++non_empty;
    first_counts[seq.front()] += 1.0;
    for (std::size_t n = 1; n < seq.size(); ++n) {
      const std::size_t longest = std::min<std::size_t>(n, static_cast<std::size_t>(order));
      for (std::size_t len = 1; len <= longest; ++len) {
        std::vector<TokenId> context(seq.begin() + static_cast<std::ptrdiff_t>(n - len),
                                     seq.begin() + static_cast<std::ptrdiff_t>(n));
        auto& row = counts[context];
        if (row.empty()) row.assign(Q, 0.0);
        row[seq[n]] += 1.0;
      }
    }
  }
  require(non_empty > 0, "fit_markov: corpus contains no tokens");

  SourceModel model;
  model.order = order;
  model.vocab_size = Q;
  model.smoothing = smoothing;
  model.initial_dist = normalized_row(first_counts, smoothing);
  if (order == 1 && smoothing > 0.0) {
    for (TokenId q = 0; q < Q; ++q) counts.try_emplace({q}, std::vector<double>(Q, 0.0));
  }
  for (const auto& [context, row] : counts) model.transitions.emplace(context, normalized_row(row, smoothing));
  return model;
}

SourceModel uniform_model(std::size_t Q) {
  require(Q >= 1, "uniform_model: Q must be >= 1");
  SourceModel model;
  model.vocab_size = Q;
  model.initial_dist.assign(Q, 1.0 / static_cast<double>(Q));
  for (TokenId q = 0; q < Q; ++q) model.transitions.emplace(std::vector<TokenId>{q}, model.initial_dist);
  return model;
}

SourceModel random_sparse_model(std::size_t Q, std::size_t successors, Rng& rng) {
  require(Q >= 2, "random_sparse_model: Q must be >= 2");
  require(successors >= 1 && successors <= Q, "random_sparse_model: successors must be in [1, Q]");
  SourceModel model;
  model.vocab_size = Q;
  model.initial_dist.assign(Q, 1.0 / static_cast<double>(Q));

  std::vector<TokenId> ids(Q);
  std::iota(ids.begin(), ids.end(), TokenId{0});
  for (TokenId q = 0; q < Q; ++q) {
    // partial Fisher-Yates picks the successor set
    for (std::size_t i = 0; i < successors; ++i) {
      const auto j = i + uniform_below(rng, Q - i);
      std::swap(ids[i], ids[j]);
    }
    std::vector<double> row(Q, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < successors; ++i) {
      // Exp(1) draws normalized -> Dirichlet(1, ..., 1)
      const double w = -std::log1p(-uniform01(rng)) + 1e-12;
      row[ids[i]] = w;
      total += w;
    }
    for (double& p : row) p /= total;
    model.transitions.emplace(std::vector<TokenId>{q}, std::move(row));
  }
  return model;
}

Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "read_corpus: cannot open " + path.string());
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<TokenId> seq;
    std::string field;
    while (fields >> field) {
      std::size_t consumed = 0;
      unsigned long long value = 0;
      try {
        value = std::stoull(field, &consumed, 10);
      } catch (const std::exception&) {
        consumed = 0;
      }
      require(consumed == field.size() && field.front() != '-',
              "read_corpus: bad token '" + field + "' on line " + std::to_string(line_no));
      seq.push_back(static_cast<TokenId>(value));
    }
    if (!seq.empty()) corpus.push_back(std::move(seq));
  }
  return corpus;
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "write_corpus: cannot open " + path.string());
  for (const auto& seq : corpus) {
    for (std::size_t i = 0; i < seq.size(); ++i) out << (i ? " " : "") << seq[i];
    out << '\n';
  }
}

}  // namespace todma
