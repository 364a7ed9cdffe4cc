#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "headliner/common.hpp"
#include "headliner/tensor.hpp"
#include "headliner/text.hpp"

namespace headliner {

constexpr TokenId kPadId = 0;
constexpr TokenId kBosId = 1;
constexpr TokenId kEosId = 2;
constexpr std::size_t kNumSpecials = 3;

// Learned byte-pair-encoding model. Merges apply within words only;
// whitespace runs are carried through as single-character tokens, so
// decoding is plain concatenation and round-trips any text whose characters
// were seen at training time. Once trained the model is immutable and can
// be shared freely across threads.
class BpeModel {
 public:
  std::size_t vocab_size() const { return id_to_token_.size(); }
  const std::vector<std::pair<std::string, std::string>>& merges() const {
    return merges_;
  }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  bool has_token(const std::string& tok) const {
    return vocab_.count(tok) > 0;
  }
  TokenId token_id(const std::string& tok) const {
    auto it = vocab_.find(tok);
    if (it == vocab_.end()) {
      throw ValueError("bpe: token not in vocabulary: " + tok);
    }
    return it->second;
  }

  /// Greedy merge replay over each word; characters the model has never
  /// seen are dropped. Never emits an out-of-vocabulary id.
  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> out;
    for (const TextSegment& seg : segment_whitespace(text)) {
      if (seg.is_space) {
        for (const std::string& c : utf8_chars(seg.text)) {
          auto it = vocab_.find(c);
          if (it != vocab_.end()) out.push_back(it->second);
        }
      } else {
        encode_word(seg.text, out);
      }
    }
    return out;
  }

  /// Inverse of encode: token concatenation. Special ids are skipped.
  std::string decode(const std::vector<TokenId>& ids) const {
    std::string out;
    for (TokenId id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_size()) {
        throw ValueError("bpe: id " + std::to_string(id) +
                         " outside vocabulary of size " +
                         std::to_string(vocab_size()));
      }
      if (id < static_cast<TokenId>(kNumSpecials)) continue;
      out += id_to_token_[static_cast<std::size_t>(id)];
    }
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("bpe: cannot open " + path + " for writing");
    write(out);
  }

  void write(std::ostream& out) const {
    out << "bpe-v1 " << vocab_size() << "\n";
    for (const std::string& c : alphabet_) out << escape_token(c) << "\n";
    for (const auto& [l, r] : merges_) {
      out << escape_token(l) << " " << escape_token(r) << "\n";
    }
  }

  static BpeModel load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("bpe: cannot open " + path);
    return read(in, path);
  }

  static BpeModel read(std::istream& in, const std::string& origin = "<stream>") {
    std::string header;
    if (!std::getline(in, header)) {
      throw InputError("bpe: empty vocab file " + origin);
    }
    std::istringstream hs(header);
    std::string magic;
    std::size_t declared = 0;
    if (!(hs >> magic >> declared) || magic != "bpe-v1") {
      throw InputError("bpe: bad header in " + origin);
    }
    BpeModel m;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::size_t sp = line.find(' ');
      if (sp == std::string::npos) {
        m.alphabet_.push_back(unescape_token(line));
      } else {
        std::string left = unescape_token(line.substr(0, sp));
        std::string right = unescape_token(line.substr(sp + 1));
        m.merges_.emplace_back(std::move(left), std::move(right));
      }
    }
    m.index();
    if (m.vocab_size() != declared) {
      throw InputError("bpe: header declares " + std::to_string(declared) +
                       " tokens but file holds " +
                       std::to_string(m.vocab_size()));
    }
    return m;
  }

  friend BpeModel train_bpe(const std::vector<std::string>& corpus,
                            std::size_t vocab_budget);

 private:
  void encode_word(const std::string& word, std::vector<TokenId>& out) const {
    std::vector<std::string> symbols;
    for (std::string& c : utf8_chars(word)) {
      if (vocab_.count(c)) symbols.push_back(std::move(c));
    }
    while (symbols.size() > 1) {
      std::size_t best_rank = merges_.size();
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        auto it = merge_rank_.find(pair_key(symbols[i], symbols[i + 1]));
        if (it != merge_rank_.end() && it->second < best_rank) {
          best_rank = it->second;
        }
      }
      if (best_rank == merges_.size()) break;
      const auto& [left, right] = merges_[best_rank];
      std::vector<std::string> next;
      next.reserve(symbols.size());
      for (std::size_t i = 0; i < symbols.size();) {
        if (i + 1 < symbols.size() && symbols[i] == left &&
            symbols[i + 1] == right) {
          next.push_back(left + right);
          i += 2;
        } else {
          next.push_back(std::move(symbols[i]));
          ++i;
        }
      }
      symbols = std::move(next);
    }
    for (const std::string& s : symbols) out.push_back(vocab_.at(s));
  }

  // Word symbols never contain whitespace, so '\n' is a safe separator.
  static std::string pair_key(const std::string& l, const std::string& r) {
    return l + '\n' + r;
  }

  void index() {
    vocab_.clear();
    id_to_token_.assign({"<pad>", "<bos>", "<eos>"});
    for (const std::string& c : alphabet_) {
      if (!vocab_.emplace(c, static_cast<TokenId>(id_to_token_.size())).second) {
        throw InputError("bpe: duplicate alphabet entry: " + c);
      }
      id_to_token_.push_back(c);
    }
    merge_rank_.clear();
    for (std::size_t r = 0; r < merges_.size(); ++r) {
      const auto& [l, rr] = merges_[r];
      if (!vocab_.count(l) || !vocab_.count(rr)) {
        throw InputError("bpe: merge references unknown token: " + l + " + " +
                         rr);
      }
      merge_rank_.emplace(pair_key(l, rr), r);
      std::string tok = l + rr;
      if (!vocab_.emplace(tok, static_cast<TokenId>(id_to_token_.size()))
               .second) {
        throw InputError("bpe: duplicate merge product: " + tok);
      }
      id_to_token_.push_back(std::move(tok));
    }
  }

  std::vector<std::string> alphabet_;  // codepoint order
  std::vector<std::pair<std::string, std::string>> merges_;
  std::unordered_map<std::string, TokenId> vocab_;
  std::unordered_map<std::string, std::size_t> merge_rank_;
  std::vector<std::string> id_to_token_;
};

/// Learns merges greedily by descending pair frequency until the vocabulary
/// budget is exhausted or no pair occurs at least twice. Ties break toward
/// the lexicographically smallest pair, making training deterministic.
inline BpeModel train_bpe(const std::vector<std::string>& corpus,
                          std::size_t vocab_budget) {
  std::map<std::string, long long> word_freq;
  std::set<std::string> alphabet;
  bool saw_text = false;
  for (const std::string& doc : corpus) {
    for (const TextSegment& seg : segment_whitespace(doc)) {
      saw_text = true;
      for (const std::string& c : utf8_chars(seg.text)) alphabet.insert(c);
      if (!seg.is_space) ++word_freq[seg.text];
    }
  }
  if (!saw_text) throw InputError("train_bpe: corpus is empty");
  if (vocab_budget < alphabet.size() + kNumSpecials) {
    throw ValueError("train_bpe: vocab budget " + std::to_string(vocab_budget) +
                     " cannot cover alphabet of " +
                     std::to_string(alphabet.size()) + " plus " +
                     std::to_string(kNumSpecials) + " specials");
  }

  struct Word {
    std::vector<std::string> symbols;
    long long count;
  };
  std::vector<Word> words;
  words.reserve(word_freq.size());
  for (const auto& [w, n] : word_freq) {
    words.push_back({utf8_chars(w), n});
  }

  BpeModel model;
  model.alphabet_.assign(alphabet.begin(), alphabet.end());
  std::size_t merge_budget = vocab_budget - alphabet.size() - kNumSpecials;

  using Pair = std::pair<std::string, std::string>;
  while (model.merges_.size() < merge_budget) {
    std::map<Pair, long long> pair_freq;
    for (const Word& w : words) {
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) {
        pair_freq[{w.symbols[i], w.symbols[i + 1]}] += w.count;
      }
    }
    const Pair* best = nullptr;
    long long best_count = 1;  // a winning pair must occur at least twice
    for (const auto& [p, n] : pair_freq) {
      if (n > best_count) {
        best = &p;
        best_count = n;
      }
      // std::map iterates pairs in ascending order, so on ties the first
      // (lexicographically smallest) pair sticks.
    }
    if (!best) break;
    const auto [left, right] = *best;
    for (Word& w : words) {
      if (w.symbols.size() < 2) continue;
      std::vector<std::string> next;
      next.reserve(w.symbols.size());
      for (std::size_t i = 0; i < w.symbols.size();) {
        if (i + 1 < w.symbols.size() && w.symbols[i] == left &&
            w.symbols[i + 1] == right) {
          next.push_back(left + right);
          i += 2;
        } else {
          next.push_back(std::move(w.symbols[i]));
          ++i;
        }
      }
      w.symbols = std::move(next);
    }
    model.merges_.emplace_back(left, right);
  }
  model.index();
  return model;
}

}  // namespace headliner
