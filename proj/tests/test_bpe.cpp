#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "headliner/bpe.hpp"
#include "headliner/common.hpp"
#include "headliner/text.hpp"

using namespace headliner;

namespace {

using Pair = std::pair<std::string, std::string>;

// Independent reference: split corpus into words, apply an explicit merge
// sequence, then count adjacent pairs from scratch.
std::vector<std::vector<std::string>> reference_words(
    const std::vector<std::string>& corpus, const std::vector<Pair>& merges) {
  std::vector<std::vector<std::string>> words;
  for (const std::string& doc : corpus) {
    for (const TextSegment& seg : segment_whitespace(doc)) {
      if (!seg.is_space) words.push_back(utf8_chars(seg.text));
    }
  }
  for (const auto& [l, r] : merges) {
    for (auto& w : words) {
      std::vector<std::string> next;
      for (std::size_t i = 0; i < w.size();) {
        if (i + 1 < w.size() && w[i] == l && w[i + 1] == r) {
          next.push_back(l + r);
          i += 2;
        } else {
          next.push_back(w[i]);
          ++i;
        }
      }
      w = next;
    }
  }
  return words;
}

std::map<Pair, long long> reference_pair_counts(
    const std::vector<std::vector<std::string>>& words) {
  std::map<Pair, long long> counts;
  for (const auto& w : words) {
    for (std::size_t i = 0; i + 1 < w.size(); ++i) {
      counts[{w[i], w[i + 1]}] += 1;
    }
  }
  return counts;
}

std::string temp_path(const std::string& tag) {
  return "bpe_test_" + tag + ".txt";
}

}  // namespace

TEST_CASE("bpe first merge is the most frequent pair", "[bpe]") {
  std::vector<std::string> corpus = {"abab abab ab"};
  BpeModel m = train_bpe(corpus, 9);

  auto counts = reference_pair_counts(reference_words(corpus, {}));
  REQUIRE(counts[{"a", "b"}] == 5);
  REQUIRE(counts[{"b", "a"}] == 2);

  REQUIRE(m.merges().size() >= 1);
  CHECK(m.merges()[0] == Pair{"a", "b"});
}

TEST_CASE("bpe repeated merges build longer tokens", "[bpe]") {
  std::vector<std::string> corpus = {"aaaa aaaa"};
  // alphabet {a, ' '} + 3 specials + 2 merges
  BpeModel m = train_bpe(corpus, 7);
  REQUIRE(m.merges().size() == 2);
  CHECK(m.merges()[0] == Pair{"a", "a"});
  CHECK(m.merges()[1] == Pair{"aa", "aa"});
  CHECK(m.encode("aaaa") == std::vector<TokenId>{m.token_id("aaaa")});
}

TEST_CASE("bpe encode collapses fully merged words to one token", "[bpe]") {
  BpeModel m = train_bpe({"abab abab ab"}, 16);
  auto ids = m.encode("abab");
  REQUIRE(ids.size() == 1);
  CHECK(m.decode(ids) == "abab");
}

TEST_CASE("bpe every chosen merge maximizes the reference pair count",
          "[bpe]") {
  Rng rng(20240817);
  std::vector<std::string> corpus;
  const std::string letters = "abcde";
  for (int d = 0; d < 40; ++d) {
    std::string doc;
    int n = 3 + static_cast<int>(rng.index(8));
    for (int w = 0; w < n; ++w) {
      if (w) doc += ' ';
      int len = 1 + static_cast<int>(rng.index(6));
      for (int k = 0; k < len; ++k) doc += letters[rng.index(letters.size())];
    }
    corpus.push_back(doc);
  }
  BpeModel m = train_bpe(corpus, 40);
  std::vector<Pair> applied;
  for (const Pair& chosen : m.merges()) {
    auto counts = reference_pair_counts(reference_words(corpus, applied));
    long long chosen_count = counts.at(chosen);
    REQUIRE(chosen_count >= 2);
    for (const auto& [p, n] : counts) {
      if (n > chosen_count) {
        FAIL("pair (" << p.first << "," << p.second << ") count " << n
                      << " beats chosen (" << chosen.first << ","
                      << chosen.second << ") count " << chosen_count);
      }
      if (n == chosen_count) {
        // ties resolve toward the lexicographically smallest pair
        CHECK(chosen <= p);
      }
    }
    applied.push_back(chosen);
  }
}

TEST_CASE("bpe merges stop when no pair repeats", "[bpe]") {
  // every pair occurs exactly once
  BpeModel m = train_bpe({"abc def"}, 100);
  CHECK(m.merges().empty());
  // budget equal to alphabet + specials trains zero merges: pure chars
  BpeModel chars = train_bpe({"abab"}, 2 + 3);
  CHECK(chars.merges().empty());
  auto ids = chars.encode("abab");
  REQUIRE(ids.size() == 4);
  CHECK(chars.decode(ids) == "abab");
}

TEST_CASE("bpe round trip over the trained alphabet", "[bpe]") {
  std::vector<std::string> corpus = {
      "southwest airlines to add 16 flights from chicago",
      "judge dismisses case against mayor",
      "oil prices rise as exports slow\tacross the\nregion"};
  BpeModel m = train_bpe(corpus, 80);

  for (const std::string& doc : corpus) {
    CHECK(m.decode(m.encode(doc)) == doc);
  }

  // arbitrary strings over the trained alphabet, whitespace included
  std::string alpha;
  std::vector<std::string> chars;
  for (const std::string& doc : corpus) {
    for (const std::string& c : utf8_chars(doc)) chars.push_back(c);
  }
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    std::string s;
    std::size_t len = rng.index(40);
    for (std::size_t k = 0; k < len; ++k) s += chars[rng.index(chars.size())];
    CHECK(m.decode(m.encode(s)) == s);
  }
}

TEST_CASE("bpe encode drops characters outside the alphabet", "[bpe]") {
  BpeModel m = train_bpe({"abab ab"}, 10);
  // 'z' and 'q' were never seen; encoding must not fail and must skip them
  auto ids = m.encode("azb qq ab");
  CHECK(m.decode(ids) == "ab  ab");
  CHECK(m.encode("qqq").empty());
  CHECK(m.encode("").empty());
}

TEST_CASE("bpe ids are contiguous with specials lowest", "[bpe]") {
  BpeModel m = train_bpe({"abab abab"}, 10);
  REQUIRE(kPadId == 0);
  REQUIRE(kBosId == 1);
  REQUIRE(kEosId == 2);
  // learned tokens all sit at ids >= 3 and cover the rest of the range
  std::vector<bool> seen(m.vocab_size(), false);
  seen[0] = seen[1] = seen[2] = true;
  for (const std::string& tok : m.tokens()) {
    TokenId id = 0;
    if (tok == "<pad>" || tok == "<bos>" || tok == "<eos>") continue;
    id = m.token_id(tok);
    REQUIRE(id >= 3);
    REQUIRE(static_cast<std::size_t>(id) < m.vocab_size());
    seen[static_cast<std::size_t>(id)] = true;
  }
  for (bool b : seen) CHECK(b);
}

TEST_CASE("bpe token count never exceeds character count", "[bpe]") {
  std::vector<std::string> corpus = {"the cat sat on the mat",
                                     "the bat and the rat sat"};
  BpeModel m = train_bpe(corpus, 60);
  for (const std::string& doc : corpus) {
    CHECK(m.encode(doc).size() <= utf8_chars(doc).size());
  }
}

TEST_CASE("bpe vocabulary files are byte identical across runs", "[bpe]") {
  std::vector<std::string> corpus = {"news in brief", "brief news today",
                                     "today in the news"};
  std::ostringstream a, b;
  train_bpe(corpus, 40).write(a);
  train_bpe(corpus, 40).write(b);
  CHECK(a.str() == b.str());
  CHECK(a.str().rfind("bpe-v1 ", 0) == 0);
}

TEST_CASE("bpe save and load preserve behavior", "[bpe]") {
  std::vector<std::string> corpus = {"stocks fall\tsharply",
                                     "stocks rise sharply\nagain"};
  BpeModel m = train_bpe(corpus, 50);
  std::string path = temp_path("roundtrip");
  m.save(path);
  BpeModel loaded = BpeModel::load(path);
  std::remove(path.c_str());

  CHECK(loaded.vocab_size() == m.vocab_size());
  CHECK(loaded.merges() == m.merges());
  for (const std::string& doc : corpus) {
    CHECK(loaded.encode(doc) == m.encode(doc));
    CHECK(loaded.decode(loaded.encode(doc)) == doc);
  }

  // escaped whitespace survives the file format
  std::ostringstream buf;
  m.write(buf);
  CHECK(buf.str().find("\\s") != std::string::npos);
}

TEST_CASE("bpe load rejects corrupt files", "[bpe]") {
  std::istringstream empty("");
  CHECK_THROWS_AS(BpeModel::read(empty), InputError);
  std::istringstream bad_magic("xxx 5\na\n");
  CHECK_THROWS_AS(BpeModel::read(bad_magic), InputError);
  std::istringstream bad_count("bpe-v1 99\na\nb\n");
  CHECK_THROWS_AS(BpeModel::read(bad_count), InputError);
  std::istringstream unknown_merge("bpe-v1 6\na\nb\na z\n");
  CHECK_THROWS_AS(BpeModel::read(unknown_merge), InputError);
}

TEST_CASE("bpe rejects bad training inputs", "[bpe]") {
  CHECK_THROWS_AS(train_bpe({}, 100), InputError);
  CHECK_THROWS_AS(train_bpe({"", ""}, 100), InputError);
  // budget below alphabet + specials cannot represent the corpus
  CHECK_THROWS_AS(train_bpe({"abc"}, 3), ValueError);
  CHECK_THROWS_AS(train_bpe({"abc"}, 5), ValueError);
  CHECK_NOTHROW(train_bpe({"abc"}, 6));
}

TEST_CASE("bpe decode validates ids", "[bpe]") {
  BpeModel m = train_bpe({"ab ab"}, 8);
  CHECK_THROWS_AS(m.decode({static_cast<TokenId>(m.vocab_size())}), ValueError);
  CHECK_THROWS_AS(m.decode({-1}), ValueError);
  // specials pass through silently as empty text
  CHECK(m.decode({kBosId, kEosId, kPadId}) == "");
}

TEST_CASE("bpe encode applies merges in learned rank order", "[bpe]") {
  // "ab" merges before "bc"; on "abc" the earlier rank wins the shared 'b'
  std::vector<std::string> corpus = {"ab ab ab bc bc"};
  BpeModel m = train_bpe(corpus, 10);
  REQUIRE(m.merges().size() >= 2);
  REQUIRE(m.merges()[0] == Pair{"a", "b"});
  REQUIRE(m.merges()[1] == Pair{"b", "c"});
  auto ids = m.encode("abc");
  REQUIRE(ids.size() == 2);
  CHECK(ids[0] == m.token_id("ab"));
  CHECK(ids[1] == m.token_id("c"));
}

TEST_CASE("bpe headline example round trips", "[bpe]") {
  std::vector<std::string> corpus_lines = {
      "southwest airlines co said friday it plans to add sixteen flights",
      "the airline said the flights from chicago will begin in september",
      "southwest currently operates one hundred forty one flights daily",
      "16 of those flights leave from chicago midway airport"};
  BpeModel m = train_bpe(corpus_lines, 120);
  std::string headline = "southwest airlines to add 16 flights from chicago";
  CHECK(m.decode(m.encode(headline)) == headline);
}
