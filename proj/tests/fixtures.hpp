#pragma once

// Synthetic corpora for integration-level tests. Every document passes the
// default filters (titles 3-15 words, bodies 20-2000 words), and bodies
// carry no sentence terminator, so the first-sentence baseline returns the
// whole body.

#include <fstream>
#include <string>
#include <vector>

#include "headliner/common.hpp"

namespace headliner::testing {

struct Doc {
  std::string title;
  std::string body;
};

inline const std::vector<std::string>& subjects() {
  static const std::vector<std::string> v = {"mayor", "senator", "council",
                                             "board", "union", "guild",
                                             "panel", "jury"};
  return v;
}

inline const std::vector<std::string>& verbs() {
  static const std::vector<std::string> v = {"open", "close", "visit",
                                             "fund", "block", "back",
                                             "audit", "cite"};
  return v;
}

inline const std::vector<std::string>& objects() {
  static const std::vector<std::string> v = {"bridge", "museum", "tunnel",
                                             "library", "stadium", "harbor",
                                             "market", "garden"};
  return v;
}

inline const std::vector<std::string>& places() {
  static const std::vector<std::string> v = {"dover", "fargo", "salem",
                                             "provo", "tulsa", "boise",
                                             "akron", "sparks"};
  return v;
}

/// Headline "<subject> plans new <object>" over a 25-word lead that names
/// the same subject and object but never their title bigrams: the
/// first-sentence baseline tops out at ROUGE-2 recall 1/3 with ~1/24
/// precision, while the mapping stays easy for a trained model.
inline std::vector<Doc> template_corpus(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Doc> docs;
  docs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string& s = subjects()[rng.index(subjects().size())];
    const std::string& v = verbs()[rng.index(verbs().size())];
    const std::string& o = objects()[rng.index(objects().size())];
    const std::string& p = places()[rng.index(places().size())];
    Doc d;
    d.title = s + " plans new " + o;
    d.body = "the " + s + " of " + p + " announced plans to " + v +
             " the new " + o + " before winter as part of a wider program "
             "that residents called ambitious and long overdue";
    docs.push_back(std::move(d));
  }
  return docs;
}

/// 32 distinct documents whose title is the first three body words; the
/// memorization target for the overfitting check.
inline std::vector<Doc> overfit_corpus() {
  std::vector<Doc> docs;
  for (std::size_t i = 0; i < 32; ++i) {
    const std::string& s = subjects()[i % 8];
    const std::string& v = verbs()[(i / 8) % 8];
    const std::string& o = objects()[(i * 3 + 1) % 8];
    const std::string& p = places()[(i * 5 + 2) % 8];
    Doc d;
    d.title = s + " " + v + " " + o;
    d.body = s + " " + v + " " + o + " in " + p +
             " as crowds gathered near the old square to watch the " + o +
             " plan unfold over several busy weeks";
    docs.push_back(std::move(d));
  }
  return docs;
}

inline std::string json_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

inline void write_corpus(const std::string& path,
                         const std::vector<Doc>& docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("fixtures: cannot write " + path);
  for (const Doc& d : docs) {
    out << "{\"title\":\"" << json_escape(d.title) << "\",\"text\":\""
        << json_escape(d.body) << "\"}\n";
  }
}

}  // namespace headliner::testing
