#pragma once

#include <algorithm>
#include <cstddef>
#include <tuple>
#include <utility>
#include <vector>

#include "headliner/bpe.hpp"
#include "headliner/model.hpp"
#include "headliner/tensor.hpp"

namespace headliner {

/// A partial decode. `ids` starts with BOS and, once finished, ends with the
/// EOS whose log-probability is already folded into `log_prob`.
struct Hypothesis {
  std::vector<TokenId> ids{kBosId};
  double log_prob = 0.0;
  bool finished = false;

  /// Number of generated tokens (everything after BOS, EOS included).
  std::size_t length() const { return ids.size() - 1; }

  /// The headline itself: tokens strictly between BOS and EOS.
  std::vector<TokenId> tokens() const {
    auto end = ids.end();
    if (finished) --end;
    return std::vector<TokenId>(ids.begin() + 1, end);
  }
};

/// Search-state extremes, for bounding-the-frontier checks.
struct BeamStats {
  std::size_t max_unfinished = 0;
  std::size_t max_completed = 0;
};

/// Selection score: raw summed log-probability, or per-token when
/// normalizing (raw scores favor the shortest headlines).
inline double hypothesis_score(const Hypothesis& h, bool length_normalize) {
  if (!length_normalize) return h.log_prob;
  double len = static_cast<double>(std::max<std::size_t>(h.length(), 1));
  return h.log_prob / len;
}

namespace detail {

/// Log-probabilities of every next token given the prefix, as a copied row.
inline std::vector<double> next_token_log_probs(SequenceModel& model,
                                                const Tensor& memory,
                                                const std::vector<TokenId>& ids,
                                                Rng& rng) {
  Graph g(false);
  Tensor lp = model.decode_log_probs(g, memory, ids, false, rng);
  std::size_t V = lp.dim(1);
  const double* row = lp.data() + (lp.dim(0) - 1) * V;
  return std::vector<double>(row, row + V);
}

}  // namespace detail

/// Repeatedly appends the most probable next token (ties to the lowest id)
/// until EOS or `max_len` generated tokens. Returns the headline tokens.
inline std::vector<TokenId> greedy_decode(SequenceModel& model,
                                          const std::vector<TokenId>& src,
                                          std::size_t max_len = 20) {
  if (max_len == 0) throw ValueError("greedy_decode: max_len must be >= 1");
  Rng rng(0);
  Graph g(false);
  Tensor memory = model.encode(g, src, false, rng);

  std::vector<TokenId> ids{kBosId};
  for (std::size_t step = 0; step < max_len; ++step) {
    std::vector<double> row = detail::next_token_log_probs(model, memory, ids, rng);
    std::size_t best = 0;
    for (std::size_t v = 1; v < row.size(); ++v) {
      if (row[v] > row[best]) best = v;  // strict: ties keep the lowest id
    }
    if (static_cast<TokenId>(best) == kEosId) break;
    ids.push_back(static_cast<TokenId>(best));
  }
  return std::vector<TokenId>(ids.begin() + 1, ids.end());
}

/// Beam search. Each step expands every unfinished hypothesis over the full
/// vocabulary, keeps the top `beam` extensions by cumulative log-probability
/// (ties broken toward earlier parents, then lower token ids), and retires
/// those that just emitted EOS to a completed pool of at most `beam`
/// entries. Returns the completed hypothesis with the best selection score;
/// if nothing finished within `max_len`, the best surviving prefix.
inline Hypothesis beam_search(SequenceModel& model,
                              const std::vector<TokenId>& src,
                              std::size_t beam, std::size_t max_len = 20,
                              bool length_normalize = true,
                              BeamStats* stats = nullptr) {
  if (beam == 0) throw ValueError("beam_search: beam must be >= 1");
  if (max_len == 0) throw ValueError("beam_search: max_len must be >= 1");
  Rng rng(0);
  Graph g(false);
  Tensor memory = model.encode(g, src, false, rng);

  auto better = [length_normalize](const Hypothesis& a, const Hypothesis& b) {
    double sa = hypothesis_score(a, length_normalize);
    double sb = hypothesis_score(b, length_normalize);
    if (sa != sb) return sa > sb;
    return a.ids < b.ids;  // deterministic on exact ties
  };

  std::vector<Hypothesis> frontier{Hypothesis{}};
  std::vector<Hypothesis> completed;
  if (stats) *stats = BeamStats{1, 0};

  for (std::size_t step = 0; step < max_len && !frontier.empty(); ++step) {
    // (cumulative score, parent, token) for every possible extension
    std::vector<std::tuple<double, std::size_t, TokenId>> candidates;
    for (std::size_t p = 0; p < frontier.size(); ++p) {
      std::vector<double> row =
          detail::next_token_log_probs(model, memory, frontier[p].ids, rng);
      candidates.reserve(candidates.size() + row.size());
      for (std::size_t v = 0; v < row.size(); ++v) {
        candidates.emplace_back(frontier[p].log_prob + row[v], p,
                                static_cast<TokenId>(v));
      }
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const auto& a, const auto& b) {
                if (std::get<0>(a) != std::get<0>(b)) {
                  return std::get<0>(a) > std::get<0>(b);
                }
                if (std::get<1>(a) != std::get<1>(b)) {
                  return std::get<1>(a) < std::get<1>(b);
                }
                return std::get<2>(a) < std::get<2>(b);
              });
    if (candidates.size() > beam) candidates.resize(beam);

    std::vector<Hypothesis> next;
    for (const auto& [score, parent, token] : candidates) {
      Hypothesis h = frontier[parent];
      h.ids.push_back(token);
      h.log_prob = score;
      if (token == kEosId) {
        h.finished = true;
        completed.push_back(std::move(h));
        std::sort(completed.begin(), completed.end(), better);
        if (completed.size() > beam) completed.resize(beam);
      } else {
        next.push_back(std::move(h));
      }
    }
    frontier = std::move(next);
    if (stats) {
      stats->max_unfinished = std::max(stats->max_unfinished, frontier.size());
      stats->max_completed = std::max(stats->max_completed, completed.size());
    }
  }

  const std::vector<Hypothesis>& pool =
      completed.empty() ? frontier : completed;
  const Hypothesis* best = &pool.front();
  for (const Hypothesis& h : pool) {
    if (better(h, *best)) best = &h;
  }
  return *best;
}

/// Beam-search headline: the token sequence of the selected hypothesis.
inline std::vector<TokenId> beam_decode(SequenceModel& model,
                                        const std::vector<TokenId>& src,
                                        std::size_t beam,
                                        std::size_t max_len = 20,
                                        bool length_normalize = true) {
  return beam_search(model, src, beam, max_len, length_normalize).tokens();
}

/// Teacher-forced re-score of a hypothesis: the summed log-probability of
/// every generated token (EOS included when finished). Audit tool for the
/// search bookkeeping.
inline double rescore(SequenceModel& model, const std::vector<TokenId>& src,
                      const Hypothesis& h) {
  if (h.ids.empty() || h.ids.front() != kBosId) {
    throw ValueError("rescore: hypothesis must start with BOS");
  }
  if (h.ids.size() < 2) return 0.0;
  Rng rng(0);
  Graph g(false);
  Tensor memory = model.encode(g, src, false, rng);
  std::vector<TokenId> tgt_in(h.ids.begin(), h.ids.end() - 1);
  Tensor lp = model.decode_log_probs(g, memory, tgt_in, false, rng);
  std::size_t V = lp.dim(1);
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < h.ids.size(); ++t) {
    total += lp.values()[t * V + static_cast<std::size_t>(h.ids[t + 1])];
  }
  return total;
}

}  // namespace headliner
