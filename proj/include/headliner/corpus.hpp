#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "headliner/common.hpp"
#include "headliner/text.hpp"

namespace headliner {

struct Article {
  std::string title;
  std::string body;
};

struct FilterSpec {
  std::size_t min_title_words = 3;
  std::size_t max_title_words = 15;
  std::size_t min_body_words = 20;
  std::size_t max_body_words = 2000;
  bool exclude_obituaries = false;
  std::vector<std::string> obituary_keywords = {"obituary", "dies",
                                                "paid notice"};

  void validate() const {
    if (min_title_words > max_title_words) {
      throw ValueError("filter: min_title_words exceeds max_title_words");
    }
    if (min_body_words > max_body_words) {
      throw ValueError("filter: min_body_words exceeds max_body_words");
    }
  }
};

/// Reads `{"title": str, "text": str}` JSON lines in file order, lowercasing
/// both fields. Lowercasing is the only mutation applied.
inline std::vector<Article> load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("corpus: cannot open " + path);
  std::vector<Article> articles;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw InputError("corpus: line " + std::to_string(line_no) + ": " +
                       e.what());
    }
    auto field = [&](const char* name) {
      if (!obj.contains(name) || !obj[name].is_string()) {
        throw InputError("corpus: line " + std::to_string(line_no) +
                         ": missing string field '" + name + "'");
      }
      return obj[name].get<std::string>();
    };
    articles.push_back(
        {utf8_lowercase(field("title")), utf8_lowercase(field("text"))});
  }
  return articles;
}

namespace detail {

// Keyword presence delimited by word boundaries, so "dies" does not fire on
// "studies". Keywords may span multiple words ("paid notice").
inline bool contains_keyword(const std::string& title,
                             const std::string& keyword) {
  auto is_word_char = [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') ||
           static_cast<unsigned char>(c) >= 0x80;
  };
  std::size_t pos = 0;
  while ((pos = title.find(keyword, pos)) != std::string::npos) {
    bool left_ok = pos == 0 || !is_word_char(title[pos - 1]);
    std::size_t end = pos + keyword.size();
    bool right_ok = end == title.size() || !is_word_char(title[end]);
    if (left_ok && right_ok) return true;
    ++pos;
  }
  return false;
}

}  // namespace detail

inline bool passes_filters(const Article& a, const FilterSpec& spec) {
  std::size_t tw = word_count(a.title);
  if (tw < spec.min_title_words || tw > spec.max_title_words) return false;
  std::size_t bw = word_count(a.body);
  if (bw < spec.min_body_words || bw > spec.max_body_words) return false;
  if (spec.exclude_obituaries) {
    for (const std::string& kw : spec.obituary_keywords) {
      if (detail::contains_keyword(a.title, kw)) return false;
    }
  }
  return true;
}

inline std::vector<Article> apply_filters(const std::vector<Article>& articles,
                                          const FilterSpec& spec) {
  spec.validate();
  std::vector<Article> kept;
  for (const Article& a : articles) {
    if (passes_filters(a, spec)) kept.push_back(a);
  }
  return kept;
}

struct Splits {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
};

/// Seeded partition: the test set is a uniform sample without replacement,
/// the validation set is carved from what remains, and the splits cover the
/// corpus exactly. Indices come back sorted for stable manifests.
inline Splits split_corpus(std::size_t corpus_size, std::size_t test_size,
                           double val_fraction, std::uint64_t seed) {
  if (test_size >= corpus_size) {
    throw ValueError("split: test size " + std::to_string(test_size) +
                     " must be below corpus size " +
                     std::to_string(corpus_size));
  }
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw ValueError("split: val fraction must lie in [0, 1)");
  }
  std::vector<std::size_t> order(corpus_size);
  for (std::size_t i = 0; i < corpus_size; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  Splits s;
  s.seed = seed;
  std::size_t remaining = corpus_size - test_size;
  std::size_t val_size =
      static_cast<std::size_t>(val_fraction * static_cast<double>(remaining));
  s.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(test_size));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(test_size),
               order.begin() + static_cast<std::ptrdiff_t>(test_size + val_size));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(test_size + val_size),
                 order.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

inline std::vector<Article> take_split(const std::vector<Article>& articles,
                                       const std::vector<std::size_t>& idx) {
  std::vector<Article> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(articles.at(i));
  return out;
}

inline void save_manifest(const Splits& s, const std::string& path) {
  nlohmann::ordered_json j;
  j["seed"] = s.seed;
  j["train"] = s.train;
  j["val"] = s.val;
  j["test"] = s.test;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("split: cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
}

}  // namespace headliner
