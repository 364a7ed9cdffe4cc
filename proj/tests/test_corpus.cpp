#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "headliner/common.hpp"
#include "headliner/corpus.hpp"

using namespace headliner;

namespace {

std::string write_file(const std::string& name, const std::string& content) {
  std::string path = "corpus_test_" + name + ".jsonl";
  std::ofstream out(path, std::ios::binary);
  out << content;
  return path;
}

std::string words(std::size_t n, const std::string& stem = "w") {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += stem + std::to_string(i);
  }
  return s;
}

Article make_article(std::size_t title_words, std::size_t body_words) {
  return {words(title_words, "t"), words(body_words, "b")};
}

}  // namespace

TEST_CASE("load_corpus reads and lowercases jsonl records", "[corpus]") {
  std::string path = write_file(
      "basic",
      "{\"title\":\"Mayor OPENS Bridge\",\"text\":\"The CITY said so.\"}\n"
      "\n"
      "{\"title\":\"quiet day\",\"text\":\"nothing happened twice.\"}\n");
  auto articles = load_corpus(path);
  std::remove(path.c_str());
  REQUIRE(articles.size() == 2);
  CHECK(articles[0].title == "mayor opens bridge");
  CHECK(articles[0].body == "the city said so.");
  // already-lowercase input passes through byte-identical
  CHECK(articles[1].title == "quiet day");
  CHECK(articles[1].body == "nothing happened twice.");
}

TEST_CASE("load_corpus on an empty file yields an empty stream", "[corpus]") {
  std::string path = write_file("empty", "");
  CHECK(load_corpus(path).empty());
  std::remove(path.c_str());
}

TEST_CASE("load_corpus reports the offending line number", "[corpus]") {
  SECTION("missing text field") {
    std::string path = write_file(
        "nofield",
        "{\"title\":\"ok\",\"text\":\"ok\"}\n{\"title\":\"only title\"}\n");
    CHECK_THROWS_WITH(load_corpus(path),
                      Catch::Matchers::ContainsSubstring("line 2") &&
                          Catch::Matchers::ContainsSubstring("text"));
    std::remove(path.c_str());
  }
  SECTION("malformed json") {
    std::string path = write_file("badjson", "{not json}\n");
    CHECK_THROWS_WITH(load_corpus(path),
                      Catch::Matchers::ContainsSubstring("line 1"));
    std::remove(path.c_str());
  }
  SECTION("non-string field") {
    std::string path = write_file("badtype", "{\"title\":3,\"text\":\"x\"}\n");
    CHECK_THROWS_AS(load_corpus(path), InputError);
    std::remove(path.c_str());
  }
  SECTION("missing file") {
    CHECK_THROWS_AS(load_corpus("no_such_file.jsonl"), InputError);
  }
}

TEST_CASE("filters enforce closed title bounds of 3 and 15 words",
          "[corpus]") {
  FilterSpec spec;
  CHECK_FALSE(passes_filters(make_article(2, 100), spec));
  CHECK(passes_filters(make_article(3, 100), spec));
  CHECK(passes_filters(make_article(15, 100), spec));
  CHECK_FALSE(passes_filters(make_article(16, 100), spec));
}

TEST_CASE("filters enforce closed body bounds of 20 and 2000 words",
          "[corpus]") {
  FilterSpec spec;
  CHECK_FALSE(passes_filters(make_article(5, 19), spec));
  CHECK(passes_filters(make_article(5, 20), spec));
  CHECK(passes_filters(make_article(5, 2000), spec));
  CHECK_FALSE(passes_filters(make_article(5, 2001), spec));
}

TEST_CASE("obituary exclusion is keyword based and off by default",
          "[corpus]") {
  Article obit{"john doe, 87, dies", words(30)};
  FilterSpec spec;
  CHECK(passes_filters(obit, spec));  // off by default

  spec.exclude_obituaries = true;
  CHECK_FALSE(passes_filters(obit, spec));
  CHECK_FALSE(
      passes_filters({"paid notice for a local figure", words(30)}, spec));
  CHECK_FALSE(passes_filters({"obituary of a poet here", words(30)}, spec));
  // keyword must match whole words
  CHECK(passes_filters({"university studies draw crowds", words(30)}, spec));
  CHECK(passes_filters({"stock market rally continues", words(30)}, spec));
}

TEST_CASE("apply_filters keeps exactly the passing articles", "[corpus]") {
  std::vector<Article> all = {make_article(2, 100), make_article(4, 100),
                              make_article(4, 10), make_article(10, 2000)};
  auto kept = apply_filters(all, FilterSpec{});
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].title == all[1].title);
  CHECK(kept[1].title == all[3].title);

  FilterSpec bad;
  bad.min_title_words = 10;
  bad.max_title_words = 5;
  CHECK_THROWS_AS(apply_filters(all, bad), ValueError);
}

TEST_CASE("split partitions the corpus exactly", "[corpus]") {
  Splits s = split_corpus(100, 10, 0.1, 7);
  CHECK(s.test.size() == 10);
  CHECK(s.val.size() == 9);  // 10% of the remaining 90
  CHECK(s.train.size() == 81);

  std::set<std::size_t> seen;
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    for (std::size_t i : *part) {
      CHECK(i < 100);
      CHECK(seen.insert(i).second);  // no index appears twice
    }
  }
  CHECK(seen.size() == 100);
}

TEST_CASE("split is reproducible per seed", "[corpus]") {
  Splits a = split_corpus(200, 20, 0.05, 42);
  Splits b = split_corpus(200, 20, 0.05, 42);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.test == b.test);

  Splits c = split_corpus(200, 20, 0.05, 43);
  CHECK(a.test != c.test);
}

TEST_CASE("split validates its parameters", "[corpus]") {
  CHECK_THROWS_AS(split_corpus(10, 10, 0.0, 1), ValueError);
  CHECK_THROWS_AS(split_corpus(10, 11, 0.0, 1), ValueError);
  CHECK_THROWS_AS(split_corpus(10, 2, 1.0, 1), ValueError);
  CHECK_THROWS_AS(split_corpus(10, 2, -0.1, 1), ValueError);
  Splits s = split_corpus(10, 2, 0.0, 1);
  CHECK(s.val.empty());
  CHECK(s.train.size() == 8);
}

TEST_CASE("manifest records the seed and all split indices", "[corpus]") {
  Splits s = split_corpus(20, 5, 0.2, 99);
  std::string path = "corpus_test_manifest.json";
  save_manifest(s, path);
  std::ifstream in(path);
  nlohmann::json j = nlohmann::json::parse(in);
  std::remove(path.c_str());
  CHECK(j["seed"] == 99);
  CHECK(j["train"].size() == s.train.size());
  CHECK(j["val"].size() == s.val.size());
  CHECK(j["test"].size() == s.test.size());
  CHECK(j["test"][0] == s.test[0]);
}

TEST_CASE("take_split materializes articles by index", "[corpus]") {
  std::vector<Article> all = {make_article(3, 20), make_article(4, 20),
                              make_article(5, 20)};
  auto picked = take_split(all, {2, 0});
  REQUIRE(picked.size() == 2);
  CHECK(picked[0].title == all[2].title);
  CHECK(picked[1].title == all[0].title);
}

TEST_CASE("licensed corpus counts match published filtering", "[corpus]") {
  const char* nyt = std::getenv("HEADLINER_NYT_JSONL");
  const char* ria = std::getenv("HEADLINER_RIA_JSONL");
  if (!nyt && !ria) {
    SKIP("licensed corpora not present; set HEADLINER_NYT_JSONL / "
         "HEADLINER_RIA_JSONL to enable");
  }
  if (nyt) {
    FilterSpec spec;
    spec.exclude_obituaries = true;
    CHECK(apply_filters(load_corpus(nyt), spec).size() == 1444919);
  }
  if (ria) {
    CHECK(apply_filters(load_corpus(ria), FilterSpec{}).size() == 1003869);
  }
}
