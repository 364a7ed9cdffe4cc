#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "headliner/bpe.hpp"
#include "headliner/embeddings.hpp"
#include "headliner/model.hpp"
#include "headliner/params.hpp"
#include "headliner/tensor.hpp"

namespace headliner {

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

struct UtConfig {
  std::size_t d_model = 512;
  std::size_t n_heads = 8;
  std::size_t n_steps = 4;   // depth steps of the shared block
  std::size_t d_ff = 0;      // 0 -> 4 * d_model
  double dropout_p = 0.3;
  std::size_t max_src_len = 2000;
  std::size_t vocab_size = 0;
  bool untied_depth = false;   // independent block per depth step
  bool untied_output = false;  // separate output projection instead of emb^T

  std::size_t ff_width() const { return d_ff ? d_ff : 4 * d_model; }

  void validate() const {
    if (vocab_size == 0) throw ConfigError("ut: vocab_size must be set");
    if (n_heads == 0 || d_model % n_heads != 0) {
      throw ConfigError("ut: d_model " + std::to_string(d_model) +
                        " must divide into " + std::to_string(n_heads) +
                        " heads");
    }
    if (n_steps < 1) throw ConfigError("ut: n_steps must be at least 1");
    if (dropout_p < 0.0 || dropout_p >= 1.0) {
      throw ConfigError("ut: dropout_p must lie in [0, 1)");
    }
    if (max_src_len == 0) throw ConfigError("ut: max_src_len must be positive");
  }

  ConfigKv to_kv() const {
    return {{"model", "ut"},
            {"d_model", std::to_string(d_model)},
            {"n_heads", std::to_string(n_heads)},
            {"n_steps", std::to_string(n_steps)},
            {"d_ff", std::to_string(ff_width())},
            {"dropout_p", detail::format_double(dropout_p)},
            {"max_src_len", std::to_string(max_src_len)},
            {"vocab_size", std::to_string(vocab_size)},
            {"untied_depth", untied_depth ? "1" : "0"},
            {"untied_output", untied_output ? "1" : "0"}};
  }

  static UtConfig from_kv(const ConfigKv& kv) {
    UtConfig c;
    c.d_model = std::stoul(config_value(kv, "d_model"));
    c.n_heads = std::stoul(config_value(kv, "n_heads"));
    c.n_steps = std::stoul(config_value(kv, "n_steps"));
    c.d_ff = std::stoul(config_value(kv, "d_ff"));
    c.dropout_p = std::stod(config_value(kv, "dropout_p"));
    c.max_src_len = std::stoul(config_value(kv, "max_src_len"));
    c.vocab_size = std::stoul(config_value(kv, "vocab_size"));
    c.untied_depth = config_value_or(kv, "untied_depth", "0") == "1";
    c.untied_output = config_value_or(kv, "untied_output", "0") == "1";
    c.validate();
    return c;
  }
};

/// Universal Transformer encoder-decoder: one shared-weight block per side
/// applied n_steps times, sinusoidal position and depth-step embeddings
/// added before every step, post-norm residuals with dropout ahead of each
/// layer norm, and an output projection tied to the embedding table unless
/// configured otherwise.
class UtModel : public SequenceModel {
 public:
  UtModel(UtConfig cfg, const EmbeddingTable& emb, Rng& rng)
      : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (emb.vocab != cfg_.vocab_size || emb.dim != cfg_.d_model) {
      throw ConfigError("ut: embedding table is " + std::to_string(emb.vocab) +
                        "x" + std::to_string(emb.dim) + " but config needs " +
                        std::to_string(cfg_.vocab_size) + "x" +
                        std::to_string(cfg_.d_model));
    }
    Rng init = rng.fork("ut-init");
    for (const auto& [name, shape] : expected_params(cfg_)) {
      store_.add(name, init_tensor(name, shape, emb, init));
    }
    wire();
  }

  UtModel(UtConfig cfg, ParamStore store)
      : cfg_(std::move(cfg)), store_(std::move(store)) {
    cfg_.validate();
    for (const auto& [name, shape] : expected_params(cfg_)) {
      const Tensor& t = store_.get(name);  // throws on missing
      if (t.shape() != shape) {
        throw ConfigError("ut: parameter " + name + " has shape " +
                          shape_str(t.shape()) + ", expected " +
                          shape_str(shape));
      }
    }
    wire();
  }

  std::size_t vocab_size() const override { return cfg_.vocab_size; }
  std::string model_tag() const override { return "ut"; }
  const UtConfig& config() const { return cfg_; }
  ParamStore& params() override { return store_; }
  const ParamStore& params() const override { return store_; }
  ConfigKv config_kv() const override { return cfg_.to_kv(); }

  Tensor encode(Graph& g, const std::vector<TokenId>& src, bool training,
                Rng& rng) const override {
    return encode_at(g, src, training, rng, nullptr);
  }

  /// Encode with caller-chosen position indices (defaults to 0..len-1);
  /// lets tests permute tokens together with their coordinates.
  Tensor encode_at(Graph& g, const std::vector<TokenId>& src, bool training,
                   Rng& rng,
                   const std::vector<std::size_t>* positions) const {
    if (src.empty()) throw ValueError("ut: source sequence is empty");
    if (src.size() > cfg_.max_src_len) {
      throw ValueError("ut: source length " + std::to_string(src.size()) +
                       " exceeds max_src_len " +
                       std::to_string(cfg_.max_src_len) +
                       "; truncate upstream");
    }
    if (positions && positions->size() != src.size()) {
      throw ShapeError("ut: positions length mismatch");
    }
    std::size_t len = src.size();
    Tensor h = scale(g, embedding_lookup(g, embedding_, src),
                     std::sqrt(static_cast<double>(cfg_.d_model)));
    Tensor pos = positions ? sinusoid_at(*positions, cfg_.d_model)
                           : sinusoid_positions(len, cfg_.d_model);
    AttentionMask mask = AttentionMask::full(len, len);
    for (std::size_t step = 0; step < cfg_.n_steps; ++step) {
      const Block& blk = enc_blocks_[cfg_.untied_depth ? step : 0];
      h = add(g, h, pos);
      h = add_rowvec(g, h, timesteps_[step]);
      Tensor attn =
          multi_head_attention(g, h, h, h, mask, blk.self_attn, cfg_.n_heads);
      h = post_norm(g, h, attn, blk.ln1_g, blk.ln1_b, training, rng);
      Tensor ff = feed_forward(g, h, blk);
      h = post_norm(g, h, ff, blk.ln2_g, blk.ln2_b, training, rng);
    }
    return h;
  }

  Tensor decode_log_probs(Graph& g, const Tensor& memory,
                          const std::vector<TokenId>& tgt_in, bool training,
                          Rng& rng) const override {
    if (tgt_in.empty()) throw ValueError("ut: target prefix is empty");
    if (tgt_in.front() != kBosId) {
      throw ValueError("ut: target prefix must start with BOS");
    }
    if (memory.rank() != 2 || memory.dim(1) != cfg_.d_model) {
      throw ShapeError("ut: memory shape " + shape_str(memory.shape()) +
                       " does not match d_model " +
                       std::to_string(cfg_.d_model));
    }
    std::size_t len = tgt_in.size();
    Tensor h = scale(g, embedding_lookup(g, embedding_, tgt_in),
                     std::sqrt(static_cast<double>(cfg_.d_model)));
    Tensor pos = sinusoid_positions(len, cfg_.d_model);
    AttentionMask causal = AttentionMask::causal(len);
    AttentionMask cross = AttentionMask::full(len, memory.dim(0));
    for (std::size_t step = 0; step < cfg_.n_steps; ++step) {
      const Block& blk = dec_blocks_[cfg_.untied_depth ? step : 0];
      h = add(g, h, pos);
      h = add_rowvec(g, h, timesteps_[step]);
      Tensor sa = multi_head_attention(g, h, h, h, causal, blk.self_attn,
                                       cfg_.n_heads);
      h = post_norm(g, h, sa, blk.ln1_g, blk.ln1_b, training, rng);
      Tensor ca = multi_head_attention(g, h, memory, memory, cross,
                                       blk.cross_attn, cfg_.n_heads);
      h = post_norm(g, h, ca, blk.ln2_g, blk.ln2_b, training, rng);
      Tensor ff = feed_forward(g, h, blk);
      h = post_norm(g, h, ff, blk.ln3_g, blk.ln3_b, training, rng);
    }
    Tensor logits = cfg_.untied_output
                        ? add_rowvec(g, matmul(g, h, out_w_), out_b_)
                        : matmul(g, h, transpose(g, embedding_));
    return log_softmax(g, logits);
  }

  static std::vector<std::pair<std::string, Shape>> expected_params(
      const UtConfig& cfg) {
    std::vector<std::pair<std::string, Shape>> out;
    std::size_t d = cfg.d_model, ff = cfg.ff_width(), v = cfg.vocab_size;
    out.emplace_back("embedding", Shape{v, d});
    std::size_t blocks = cfg.untied_depth ? cfg.n_steps : 1;
    auto attn = [&](const std::string& prefix) {
      for (const char* w : {"wq", "wk", "wv", "wo"}) {
        out.emplace_back(prefix + "." + w, Shape{d, d});
      }
      for (const char* b : {"bq", "bk", "bv", "bo"}) {
        out.emplace_back(prefix + "." + b, Shape{d});
      }
    };
    auto norm = [&](const std::string& prefix) {
      out.emplace_back(prefix + ".gain", Shape{d});
      out.emplace_back(prefix + ".bias", Shape{d});
    };
    for (std::size_t b = 0; b < blocks; ++b) {
      std::string enc = cfg.untied_depth ? "enc.s" + std::to_string(b) : "enc";
      attn(enc + ".attn");
      out.emplace_back(enc + ".ffn.w1", Shape{d, ff});
      out.emplace_back(enc + ".ffn.b1", Shape{ff});
      out.emplace_back(enc + ".ffn.w2", Shape{ff, d});
      out.emplace_back(enc + ".ffn.b2", Shape{d});
      norm(enc + ".ln1");
      norm(enc + ".ln2");
    }
    for (std::size_t b = 0; b < blocks; ++b) {
      std::string dec = cfg.untied_depth ? "dec.s" + std::to_string(b) : "dec";
      attn(dec + ".attn");
      attn(dec + ".cross");
      out.emplace_back(dec + ".ffn.w1", Shape{d, ff});
      out.emplace_back(dec + ".ffn.b1", Shape{ff});
      out.emplace_back(dec + ".ffn.w2", Shape{ff, d});
      out.emplace_back(dec + ".ffn.b2", Shape{d});
      norm(dec + ".ln1");
      norm(dec + ".ln2");
      norm(dec + ".ln3");
    }
    if (cfg.untied_output) {
      out.emplace_back("out.w", Shape{d, v});
      out.emplace_back("out.b", Shape{v});
    }
    return out;
  }

 private:
  struct Block {
    AttentionParams self_attn;
    AttentionParams cross_attn;
    Tensor ff_w1, ff_b1, ff_w2, ff_b2;
    Tensor ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
  };

  static Tensor init_tensor(const std::string& name, const Shape& shape,
                            const EmbeddingTable& emb, Rng& rng) {
    if (name == "embedding") {
      return Tensor(shape, emb.data);
    }
    std::string leaf = name.substr(name.rfind('.') + 1);
    if (leaf == "gain") return Tensor(shape, 1.0);
    if (!leaf.empty() && leaf[0] == 'b') return Tensor(shape, 0.0);
    return detail::glorot(shape, rng);
  }

  Tensor post_norm(Graph& g, const Tensor& x, const Tensor& sub,
                   const Tensor& gain, const Tensor& bias, bool training,
                   Rng& rng) const {
    Tensor dropped = dropout(g, sub, cfg_.dropout_p, training, rng);
    return layer_norm(g, add(g, x, dropped), gain, bias);
  }

  Tensor feed_forward(Graph& g, const Tensor& x, const Block& blk) const {
    Tensor hidden = relu(g, add_rowvec(g, matmul(g, x, blk.ff_w1), blk.ff_b1));
    return add_rowvec(g, matmul(g, hidden, blk.ff_w2), blk.ff_b2);
  }

  void wire() {
    embedding_ = store_.get("embedding");
    std::size_t blocks = cfg_.untied_depth ? cfg_.n_steps : 1;
    auto wire_attn = [&](const std::string& prefix) {
      AttentionParams p;
      p.wq = store_.get(prefix + ".wq");
      p.bq = store_.get(prefix + ".bq");
      p.wk = store_.get(prefix + ".wk");
      p.bk = store_.get(prefix + ".bk");
      p.wv = store_.get(prefix + ".wv");
      p.bv = store_.get(prefix + ".bv");
      p.wo = store_.get(prefix + ".wo");
      p.bo = store_.get(prefix + ".bo");
      return p;
    };
    enc_blocks_.clear();
    dec_blocks_.clear();
    for (std::size_t b = 0; b < blocks; ++b) {
      std::string enc = cfg_.untied_depth ? "enc.s" + std::to_string(b) : "enc";
      Block blk;
      blk.self_attn = wire_attn(enc + ".attn");
      blk.ff_w1 = store_.get(enc + ".ffn.w1");
      blk.ff_b1 = store_.get(enc + ".ffn.b1");
      blk.ff_w2 = store_.get(enc + ".ffn.w2");
      blk.ff_b2 = store_.get(enc + ".ffn.b2");
      blk.ln1_g = store_.get(enc + ".ln1.gain");
      blk.ln1_b = store_.get(enc + ".ln1.bias");
      blk.ln2_g = store_.get(enc + ".ln2.gain");
      blk.ln2_b = store_.get(enc + ".ln2.bias");
      enc_blocks_.push_back(std::move(blk));
    }
    for (std::size_t b = 0; b < blocks; ++b) {
      std::string dec = cfg_.untied_depth ? "dec.s" + std::to_string(b) : "dec";
      Block blk;
      blk.self_attn = wire_attn(dec + ".attn");
      blk.cross_attn = wire_attn(dec + ".cross");
      blk.ff_w1 = store_.get(dec + ".ffn.w1");
      blk.ff_b1 = store_.get(dec + ".ffn.b1");
      blk.ff_w2 = store_.get(dec + ".ffn.w2");
      blk.ff_b2 = store_.get(dec + ".ffn.b2");
      blk.ln1_g = store_.get(dec + ".ln1.gain");
      blk.ln1_b = store_.get(dec + ".ln1.bias");
      blk.ln2_g = store_.get(dec + ".ln2.gain");
      blk.ln2_b = store_.get(dec + ".ln2.bias");
      blk.ln3_g = store_.get(dec + ".ln3.gain");
      blk.ln3_b = store_.get(dec + ".ln3.bias");
      dec_blocks_.push_back(std::move(blk));
    }
    if (cfg_.untied_output) {
      out_w_ = store_.get("out.w");
      out_b_ = store_.get("out.b");
    }
    timesteps_.clear();
    for (std::size_t s = 0; s < cfg_.n_steps; ++s) {
      timesteps_.push_back(sinusoid_timestep(s, cfg_.d_model));
    }
  }

  UtConfig cfg_;
  ParamStore store_;
  Tensor embedding_;
  Tensor out_w_, out_b_;
  std::vector<Block> enc_blocks_;
  std::vector<Block> dec_blocks_;
  std::vector<Tensor> timesteps_;
};

}  // namespace headliner
