#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "headliner/common.hpp"
#include "headliner/text.hpp"

namespace headliner {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct RougeReport {
  RougeScore rouge1;
  RougeScore rouge2;
  RougeScore rougeL;
  std::size_t count = 0;
};

inline double f1_score(double precision, double recall) {
  double denom = precision + recall;
  return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

/// Lowercased whitespace tokens, the unit every ROUGE variant scores over.
inline std::vector<std::string> metric_tokens(std::string_view text) {
  std::string lowered = utf8_lowercase(std::string(text));
  std::vector<std::string> out;
  for (std::string_view w : split_words(lowered)) out.emplace_back(w);
  return out;
}

/// N-gram overlap with clipping: each reference n-gram can satisfy at most
/// as many hypothesis n-grams as it occurs times. Either side shorter than
/// n scores zero.
inline RougeScore rouge_n(const std::vector<std::string>& hyp,
                          const std::vector<std::string>& ref,
                          std::size_t n) {
  if (n == 0) throw ValueError("rouge_n: n must be positive");
  if (hyp.size() < n || ref.size() < n) return {};

  // words contain no whitespace, so '\n' cannot collide inside a key
  auto gram_at = [n](const std::vector<std::string>& toks, std::size_t i) {
    std::string key = toks[i];
    for (std::size_t k = 1; k < n; ++k) {
      key += '\n';
      key += toks[i + k];
    }
    return key;
  };

  std::unordered_map<std::string, long long> ref_counts;
  std::size_t ref_grams = ref.size() - n + 1;
  for (std::size_t i = 0; i < ref_grams; ++i) ++ref_counts[gram_at(ref, i)];

  long long clipped = 0;
  std::size_t hyp_grams = hyp.size() - n + 1;
  for (std::size_t i = 0; i < hyp_grams; ++i) {
    auto it = ref_counts.find(gram_at(hyp, i));
    if (it != ref_counts.end() && it->second > 0) {
      --it->second;
      ++clipped;
    }
  }

  RougeScore s;
  s.precision = static_cast<double>(clipped) / static_cast<double>(hyp_grams);
  s.recall = static_cast<double>(clipped) / static_cast<double>(ref_grams);
  s.f1 = f1_score(s.precision, s.recall);
  return s;
}

/// Longest common subsequence length by dynamic programming.
inline std::size_t lcs_length(const std::vector<std::string>& a,
                              const std::vector<std::string>& b) {
  std::size_t m = a.size(), n = b.size();
  if (m == 0 || n == 0) return 0;
  std::vector<std::size_t> prev(n + 1, 0), cur(n + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j) {
      cur[j] = (a[i - 1] == b[j - 1]) ? prev[j - 1] + 1
                                      : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[n];
}

/// Sequence-level ROUGE-L: LCS length normalized by hypothesis length
/// (precision) and reference length (recall).
inline RougeScore rouge_l(const std::vector<std::string>& hyp,
                          const std::vector<std::string>& ref) {
  if (hyp.empty() || ref.empty()) return {};
  double lcs = static_cast<double>(lcs_length(hyp, ref));
  RougeScore s;
  s.precision = lcs / static_cast<double>(hyp.size());
  s.recall = lcs / static_cast<double>(ref.size());
  s.f1 = f1_score(s.precision, s.recall);
  return s;
}

/// Macro average: score each pair independently, then average precision,
/// recall, and F1 across pairs.
inline RougeReport evaluate_rouge(
    const std::vector<std::vector<std::string>>& hyps,
    const std::vector<std::vector<std::string>>& refs) {
  if (hyps.size() != refs.size()) {
    throw ValueError("evaluate_rouge: " + std::to_string(hyps.size()) +
                     " hypotheses vs " + std::to_string(refs.size()) +
                     " references");
  }
  if (hyps.empty()) throw ValueError("evaluate_rouge: no pairs to score");

  RougeReport report;
  report.count = hyps.size();
  auto accumulate = [](RougeScore& total, const RougeScore& s) {
    total.precision += s.precision;
    total.recall += s.recall;
    total.f1 += s.f1;
  };
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    accumulate(report.rouge1, rouge_n(hyps[i], refs[i], 1));
    accumulate(report.rouge2, rouge_n(hyps[i], refs[i], 2));
    accumulate(report.rougeL, rouge_l(hyps[i], refs[i]));
  }
  double inv = 1.0 / static_cast<double>(report.count);
  for (RougeScore* s : {&report.rouge1, &report.rouge2, &report.rougeL}) {
    s->precision *= inv;
    s->recall *= inv;
    s->f1 *= inv;
  }
  return report;
}

inline RougeReport evaluate_rouge_text(const std::vector<std::string>& hyps,
                                       const std::vector<std::string>& refs) {
  std::vector<std::vector<std::string>> h, r;
  h.reserve(hyps.size());
  r.reserve(refs.size());
  for (const std::string& s : hyps) h.push_back(metric_tokens(s));
  for (const std::string& s : refs) r.push_back(metric_tokens(s));
  return evaluate_rouge(h, r);
}

}  // namespace headliner
