#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "headliner/bpe.hpp"
#include "headliner/embeddings.hpp"
#include "headliner/model.hpp"
#include "headliner/params.hpp"
#include "headliner/tensor.hpp"
#include "headliner/text.hpp"

namespace headliner {

/// Text up to and including the first ., ! or ? that is followed by
/// whitespace or end of input; the whole body when no terminator exists.
inline std::string first_sentence(std::string_view body) {
  std::string_view trimmed = trim(body);
  if (trimmed.empty()) {
    throw InputError("first_sentence: body is empty");
  }
  for (std::size_t i = 0; i < trimmed.size(); ++i) {
    char c = trimmed[i];
    if (c != '.' && c != '!' && c != '?') continue;
    if (i + 1 == trimmed.size() || is_space_char(trimmed[i + 1])) {
      return std::string(trim(trimmed.substr(0, i + 1)));
    }
  }
  return std::string(trimmed);
}

struct RnnConfig {
  std::size_t d_model = 512;  // hidden width, equal to the embedding width
  std::size_t max_src_len = 2000;
  std::size_t vocab_size = 0;

  void validate() const {
    if (vocab_size == 0) throw ConfigError("rnn: vocab_size must be set");
    if (d_model == 0) throw ConfigError("rnn: d_model must be positive");
    if (max_src_len == 0) {
      throw ConfigError("rnn: max_src_len must be positive");
    }
  }

  ConfigKv to_kv() const {
    return {{"model", "rnn"},
            {"d_model", std::to_string(d_model)},
            {"max_src_len", std::to_string(max_src_len)},
            {"vocab_size", std::to_string(vocab_size)}};
  }

  static RnnConfig from_kv(const ConfigKv& kv) {
    RnnConfig c;
    c.d_model = std::stoul(config_value(kv, "d_model"));
    c.max_src_len = std::stoul(config_value(kv, "max_src_len"));
    c.vocab_size = std::stoul(config_value(kv, "vocab_size"));
    c.validate();
    return c;
  }
};

/// GRU encoder-decoder with additive attention: the encoder reads the
/// source left to right into hidden states H; each decoder step scores H
/// against the previous state, mixes a fresh context vector, and feeds
/// [token embedding; context] through the decoder cell.
class RnnModel : public SequenceModel {
 public:
  RnnModel(RnnConfig cfg, const EmbeddingTable& emb, Rng& rng)
      : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (emb.vocab != cfg_.vocab_size || emb.dim != cfg_.d_model) {
      throw ConfigError("rnn: embedding table is " + std::to_string(emb.vocab) +
                        "x" + std::to_string(emb.dim) + " but config needs " +
                        std::to_string(cfg_.vocab_size) + "x" +
                        std::to_string(cfg_.d_model));
    }
    Rng init = rng.fork("rnn-init");
    for (const auto& [name, shape] : expected_params(cfg_)) {
      store_.add(name, init_tensor(name, shape, emb, init));
    }
  }

  RnnModel(RnnConfig cfg, ParamStore store)
      : cfg_(std::move(cfg)), store_(std::move(store)) {
    cfg_.validate();
    for (const auto& [name, shape] : expected_params(cfg_)) {
      const Tensor& t = store_.get(name);
      if (t.shape() != shape) {
        throw ConfigError("rnn: parameter " + name + " has shape " +
                          shape_str(t.shape()) + ", expected " +
                          shape_str(shape));
      }
    }
  }

  std::size_t vocab_size() const override { return cfg_.vocab_size; }
  std::string model_tag() const override { return "rnn"; }
  const RnnConfig& config() const { return cfg_; }
  ParamStore& params() override { return store_; }
  const ParamStore& params() const override { return store_; }
  ConfigKv config_kv() const override { return cfg_.to_kv(); }

  Tensor encode(Graph& g, const std::vector<TokenId>& src, bool training,
                Rng& rng) const override {
    (void)training;
    (void)rng;
    if (src.empty()) throw ValueError("rnn: source sequence is empty");
    if (src.size() > cfg_.max_src_len) {
      throw ValueError("rnn: source length " + std::to_string(src.size()) +
                       " exceeds max_src_len " +
                       std::to_string(cfg_.max_src_len) +
                       "; truncate upstream");
    }
    Tensor emb = embedding_lookup(g, store_.get("embedding"), src);
    Tensor h(Shape{1, cfg_.d_model});
    std::vector<Tensor> states;
    states.reserve(src.size());
    for (std::size_t t = 0; t < src.size(); ++t) {
      Tensor x = slice_rows(g, emb, t, t + 1);
      h = gru_step(g, "enc", x, h);
      states.push_back(h);
    }
    return states.size() == 1 ? states[0] : concat_rows(g, states);
  }

  Tensor decode_log_probs(Graph& g, const Tensor& memory,
                          const std::vector<TokenId>& tgt_in, bool training,
                          Rng& rng) const override {
    (void)training;
    (void)rng;
    if (tgt_in.empty()) throw ValueError("rnn: target prefix is empty");
    if (tgt_in.front() != kBosId) {
      throw ValueError("rnn: target prefix must start with BOS");
    }
    if (memory.rank() != 2 || memory.dim(1) != cfg_.d_model) {
      throw ShapeError("rnn: memory shape " + shape_str(memory.shape()) +
                       " does not match d_model " +
                       std::to_string(cfg_.d_model));
    }
    std::size_t src_len = memory.dim(0);
    Tensor emb = embedding_lookup(g, store_.get("embedding"), tgt_in);
    // score component that does not depend on the decoder state
    Tensor mem_proj = add_rowvec(g, matmul(g, memory, store_.get("attn.wh")),
                                 store_.get("attn.b"));
    Tensor s = slice_rows(g, memory, src_len - 1, src_len);
    std::vector<Tensor> logit_rows;
    logit_rows.reserve(tgt_in.size());
    for (std::size_t t = 0; t < tgt_in.size(); ++t) {
      Tensor context = attend(g, memory, mem_proj, s).second;
      Tensor x = concat_cols(g, {slice_rows(g, emb, t, t + 1), context});
      s = gru_step(g, "dec", x, s);
      logit_rows.push_back(add_rowvec(g, matmul(g, s, store_.get("out.w")),
                                      store_.get("out.b")));
    }
    Tensor logits = logit_rows.size() == 1 ? logit_rows[0]
                                           : concat_rows(g, logit_rows);
    return log_softmax(g, logits);
  }

  /// Additive attention over the encoder states: weights (softmax over
  /// positions) and the blended context row. Public for normalization
  /// checks.
  std::pair<Tensor, Tensor> attend(Graph& g, const Tensor& memory,
                                   const Tensor& mem_proj,
                                   const Tensor& state) const {
    Tensor s_proj = matmul(g, state, store_.get("attn.ws"));
    Tensor scores =
        matmul(g,
               tanh_op(g, add_rowvec(g, mem_proj,
                                     reshape(g, s_proj, {cfg_.d_model}))),
               store_.get("attn.v"));            // [src_len, 1]
    Tensor alpha = softmax(g, scores, 0);        // normalized over positions
    Tensor context = matmul(g, transpose(g, alpha), memory);  // [1, d]
    return {alpha, context};
  }

  static std::vector<std::pair<std::string, Shape>> expected_params(
      const RnnConfig& cfg) {
    std::size_t d = cfg.d_model, v = cfg.vocab_size;
    std::vector<std::pair<std::string, Shape>> out;
    out.emplace_back("embedding", Shape{v, d});
    for (const char* gate : {"z", "r", "n"}) {
      out.emplace_back(std::string("enc.w") + gate, Shape{d, d});
      out.emplace_back(std::string("enc.u") + gate, Shape{d, d});
      out.emplace_back(std::string("enc.b") + gate, Shape{d});
    }
    for (const char* gate : {"z", "r", "n"}) {
      // decoder input is [embedding; context]
      out.emplace_back(std::string("dec.w") + gate, Shape{2 * d, d});
      out.emplace_back(std::string("dec.u") + gate, Shape{d, d});
      out.emplace_back(std::string("dec.b") + gate, Shape{d});
    }
    out.emplace_back("attn.ws", Shape{d, d});
    out.emplace_back("attn.wh", Shape{d, d});
    out.emplace_back("attn.b", Shape{d});
    out.emplace_back("attn.v", Shape{d, 1});
    out.emplace_back("out.w", Shape{d, v});
    out.emplace_back("out.b", Shape{v});
    return out;
  }

 private:
  static Tensor init_tensor(const std::string& name, const Shape& shape,
                            const EmbeddingTable& emb, Rng& rng) {
    if (name == "embedding") return Tensor(shape, emb.data);
    std::string leaf = name.substr(name.rfind('.') + 1);
    if (!leaf.empty() && leaf[0] == 'b') return Tensor(shape, 0.0);
    return detail::glorot(shape, rng);
  }

  Tensor gru_step(Graph& g, const std::string& side, const Tensor& x,
                  const Tensor& h) const {
    auto gate = [&](const char* name) {
      return std::make_pair(store_.get(side + ".w" + name),
                            store_.get(side + ".u" + name));
    };
    auto [wz, uz] = gate("z");
    auto [wr, ur] = gate("r");
    auto [wn, un] = gate("n");
    Tensor z = sigmoid(
        g, add_rowvec(g, add(g, matmul(g, x, wz), matmul(g, h, uz)),
                      store_.get(side + ".bz")));
    Tensor r = sigmoid(
        g, add_rowvec(g, add(g, matmul(g, x, wr), matmul(g, h, ur)),
                      store_.get(side + ".br")));
    Tensor n = tanh_op(
        g, add_rowvec(g, add(g, matmul(g, x, wn), matmul(g, mul(g, r, h), un)),
                      store_.get(side + ".bn")));
    // h' = (1 - z) * h + z * n
    Tensor one_minus_z = add_scalar(g, scale(g, z, -1.0), 1.0);
    return add(g, mul(g, one_minus_z, h), mul(g, z, n));
  }

  RnnConfig cfg_;
  ParamStore store_;
};

}  // namespace headliner
