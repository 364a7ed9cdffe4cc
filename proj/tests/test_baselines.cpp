#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <vector>

#include "headliner/baselines.hpp"
#include "headliner/common.hpp"
#include "headliner/embeddings.hpp"
#include "test_support.hpp"

using namespace headliner;
using headliner::testing::max_fd_rel_err;

namespace {

RnnConfig micro_rnn(std::size_t vocab = 11) {
  RnnConfig cfg;
  cfg.d_model = 8;
  cfg.max_src_len = 32;
  cfg.vocab_size = vocab;
  return cfg;
}

RnnModel make_rnn(const RnnConfig& cfg, std::uint64_t seed = 321) {
  Rng rng(seed);
  EmbeddingTable emb = random_embeddings(cfg.vocab_size, cfg.d_model, rng);
  Rng init(seed + 1);
  return RnnModel(cfg, emb, init);
}

}  // namespace

TEST_CASE("first sentence ends at the first terminal period", "[baselines]") {
  std::string body =
      "southwest airlines said yesterday that it would add 16 flights a day "
      "from chicago midway airport. southwest said that the expansion would "
      "take place over the next year.";
  CHECK(first_sentence(body) ==
        "southwest airlines said yesterday that it would add 16 flights a "
        "day from chicago midway airport.");
}

TEST_CASE("first sentence falls back to the whole text", "[baselines]") {
  CHECK(first_sentence("hello world") == "hello world");
  CHECK(first_sentence("  hello world  ") == "hello world");
}

TEST_CASE("first sentence takes the shortest terminated prefix",
          "[baselines]") {
  CHECK(first_sentence("a. b. c.") == "a.");
  CHECK(first_sentence("wait! more text.") == "wait!");
  CHECK(first_sentence("why? because.") == "why?");
  // a period not followed by whitespace does not terminate
  CHECK(first_sentence("www.site.com is fast. really.") ==
        "www.site.com is fast.");
  CHECK(first_sentence("one sentence only.") == "one sentence only.");
}

TEST_CASE("first sentence rejects empty bodies", "[baselines]") {
  CHECK_THROWS_AS(first_sentence(""), InputError);
  CHECK_THROWS_AS(first_sentence("   \t\n"), InputError);
}

TEST_CASE("rnn encoder produces one state per source token", "[baselines]") {
  RnnModel m = make_rnn(micro_rnn());
  Rng rng(1);
  Graph g(false);
  Tensor mem = m.encode(g, {3, 4, 5}, false, rng);
  CHECK(mem.shape() == Shape{3, 8});
  CHECK(mem.all_finite());
}

TEST_CASE("rnn decoder distributions are normalized", "[baselines]") {
  RnnModel m = make_rnn(micro_rnn());
  Rng rng(2);
  Graph g(false);
  Tensor mem = m.encode(g, {3, 4, 5, 6}, false, rng);
  Tensor lp = m.decode_log_probs(g, mem, {kBosId, 7, 8}, false, rng);
  REQUIRE(lp.shape() == Shape{3, 11});
  for (std::size_t t = 0; t < 3; ++t) {
    double mass = 0.0;
    for (std::size_t v = 0; v < 11; ++v) {
      mass += std::exp(lp.values()[t * 11 + v]);
    }
    CHECK(mass == Catch::Approx(1.0).epsilon(0).margin(1e-6));
  }
}

TEST_CASE("rnn attention weights sum to one per step", "[baselines]") {
  RnnModel m = make_rnn(micro_rnn());
  Rng rng(3);
  Graph g(false);
  Tensor mem = m.encode(g, {3, 4, 5, 6, 7}, false, rng);
  Tensor mem_proj = add_rowvec(g, matmul(g, mem, m.params().get("attn.wh")),
                               m.params().get("attn.b"));
  Tensor state = slice_rows(g, mem, 4, 5);
  auto [alpha, context] = m.attend(g, mem, mem_proj, state);
  REQUIRE(alpha.shape() == Shape{5, 1});
  double mass = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(alpha.values()[i] >= 0.0);
    mass += alpha.values()[i];
  }
  CHECK(mass == Catch::Approx(1.0).epsilon(0).margin(1e-6));
  CHECK(context.shape() == Shape{1, 8});
}

TEST_CASE("rnn validates inputs like the main model", "[baselines]") {
  RnnConfig cfg = micro_rnn();
  cfg.max_src_len = 3;
  RnnModel m = make_rnn(cfg);
  Rng rng(4);
  Graph g(false);
  CHECK_THROWS_AS(m.encode(g, {}, false, rng), ValueError);
  CHECK_THROWS_AS(m.encode(g, {3, 4, 5, 6}, false, rng), ValueError);
  Tensor mem = m.encode(g, {3, 4}, false, rng);
  CHECK_THROWS_AS(m.decode_log_probs(g, mem, {}, false, rng), ValueError);
  CHECK_THROWS_AS(m.decode_log_probs(g, mem, {5}, false, rng), ValueError);
}

TEST_CASE("rnn gradients match finite differences on a micro model",
          "[baselines]") {
  RnnModel m = make_rnn(micro_rnn());
  std::vector<TokenId> src = {3, 4, 5};
  std::vector<TokenId> tgt = {kBosId, 8, 9};

  std::vector<Tensor*> inputs;
  for (auto& [name, t] : m.params().items()) inputs.push_back(&t);

  double worst = max_fd_rel_err(
      inputs,
      [&](Graph& g) {
        Rng rng(0);
        Tensor mem = m.encode(g, src, false, rng);
        Tensor lp = m.decode_log_probs(g, mem, tgt, false, rng);
        return sum(g, lp);
      },
      1e-5, 1e-3);
  CHECK(worst < 1e-3);
}

TEST_CASE("rnn checkpoints restore an identical model", "[baselines]") {
  RnnModel m = make_rnn(micro_rnn());
  std::string path = "rnn_test_ckpt.bin";
  save_checkpoint(path, m.config_kv(), m.params());
  Checkpoint ckpt = load_checkpoint(path);
  std::remove(path.c_str());

  CHECK(config_value(ckpt.config, "model") == "rnn");
  RnnConfig cfg = RnnConfig::from_kv(ckpt.config);
  RnnModel restored(cfg, std::move(ckpt.params));

  Rng rng(5);
  Graph g(false);
  Tensor a = m.encode(g, {3, 4, 5}, false, rng);
  Tensor b = restored.encode(g, {3, 4, 5}, false, rng);
  CHECK(a.values() == b.values());
  Tensor la = m.decode_log_probs(g, a, {kBosId, 6}, false, rng);
  Tensor lb = restored.decode_log_probs(g, b, {kBosId, 6}, false, rng);
  CHECK(la.values() == lb.values());
}

TEST_CASE("rnn inference is deterministic", "[baselines]") {
  RnnModel m = make_rnn(micro_rnn());
  Rng r1(6), r2(7);  // rng must not matter outside training
  Graph g(false);
  Tensor a = m.encode(g, {3, 4}, false, r1);
  Tensor b = m.encode(g, {3, 4}, false, r2);
  CHECK(a.values() == b.values());
}
