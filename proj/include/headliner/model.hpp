#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "headliner/common.hpp"
#include "headliner/params.hpp"
#include "headliner/tensor.hpp"

namespace headliner {

/// What training and decoding need from any encoder-decoder: encode a
/// source once, then score target prefixes against the resulting memory.
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;

  virtual std::size_t vocab_size() const = 0;
  virtual std::string model_tag() const = 0;

  /// Source tokens -> memory of shape [src_len, d_model].
  virtual Tensor encode(Graph& g, const std::vector<TokenId>& src,
                        bool training, Rng& rng) const = 0;

  /// Teacher-forced scoring: log P(y_t | y_<t, src) for every position of
  /// tgt_in (which starts with BOS). Returns [len(tgt_in), vocab_size].
  virtual Tensor decode_log_probs(Graph& g, const Tensor& memory,
                                  const std::vector<TokenId>& tgt_in,
                                  bool training, Rng& rng) const = 0;

  virtual ParamStore& params() = 0;
  virtual const ParamStore& params() const = 0;
  virtual ConfigKv config_kv() const = 0;
};

/// Fixed sinusoidal table: row p, column 2i holds sin(p / 10000^(2i/d)),
/// column 2i+1 the matching cosine.
inline Tensor sinusoid_positions(std::size_t len, std::size_t d_model) {
  Tensor t(Shape{len, d_model});
  double* out = t.data();
  for (std::size_t p = 0; p < len; ++p) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      double rate = std::pow(10000.0, static_cast<double>(i) /
                                          static_cast<double>(d_model));
      double angle = static_cast<double>(p) / rate;
      out[p * d_model + i] = std::sin(angle);
      if (i + 1 < d_model) out[p * d_model + i + 1] = std::cos(angle);
    }
  }
  return t;
}

/// The same sinusoid evaluated at one coordinate, used as the depth-step
/// embedding broadcast over all positions.
inline Tensor sinusoid_timestep(std::size_t step, std::size_t d_model) {
  Tensor t(Shape{d_model});
  double* out = t.data();
  for (std::size_t i = 0; i < d_model; i += 2) {
    double rate = std::pow(10000.0, static_cast<double>(i) /
                                        static_cast<double>(d_model));
    double angle = static_cast<double>(step) / rate;
    out[i] = std::sin(angle);
    if (i + 1 < d_model) out[i + 1] = std::cos(angle);
  }
  return t;
}

/// Positions picked per token, for callers that reorder tokens and must
/// carry the coordinate embeddings along.
inline Tensor sinusoid_at(const std::vector<std::size_t>& positions,
                          std::size_t d_model) {
  std::size_t max_pos = 0;
  for (std::size_t p : positions) max_pos = std::max(max_pos, p);
  Tensor full = sinusoid_positions(max_pos + 1, d_model);
  Tensor t(Shape{positions.size(), d_model});
  for (std::size_t r = 0; r < positions.size(); ++r) {
    for (std::size_t c = 0; c < d_model; ++c) {
      t.data()[r * d_model + c] = full.values()[positions[r] * d_model + c];
    }
  }
  return t;
}

struct AttentionParams {
  Tensor wq, bq;
  Tensor wk, bk;
  Tensor wv, bv;
  Tensor wo, bo;
};

/// Scaled dot-product attention with n_heads parallel heads: projections,
/// per-head softmax over masked logits at scale 1/sqrt(d_head), heads
/// concatenated and passed through the output projection. Fully-masked
/// query rows yield zero vectors.
inline Tensor multi_head_attention(Graph& g, const Tensor& queries,
                                   const Tensor& keys, const Tensor& values,
                                   const AttentionMask& mask,
                                   const AttentionParams& p,
                                   std::size_t n_heads) {
  if (queries.rank() != 2 || keys.rank() != 2 || values.rank() != 2) {
    throw ShapeError("attention: inputs must be rank-2");
  }
  std::size_t d_model = queries.dim(1);
  if (d_model % n_heads != 0) {
    throw ConfigError("attention: d_model " + std::to_string(d_model) +
                      " not divisible by " + std::to_string(n_heads) +
                      " heads");
  }
  if (mask.rows != queries.dim(0) || mask.cols != keys.dim(0)) {
    throw ShapeError("attention: mask is " + std::to_string(mask.rows) + "x" +
                     std::to_string(mask.cols) + " for " +
                     std::to_string(queries.dim(0)) + " queries and " +
                     std::to_string(keys.dim(0)) + " keys");
  }
  std::size_t d_head = d_model / n_heads;
  double att_scale = 1.0 / std::sqrt(static_cast<double>(d_head));

  Tensor q = add_rowvec(g, matmul(g, queries, p.wq), p.bq);
  Tensor k = add_rowvec(g, matmul(g, keys, p.wk), p.bk);
  Tensor v = add_rowvec(g, matmul(g, values, p.wv), p.bv);

  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    Tensor qh = slice_cols(g, q, h * d_head, (h + 1) * d_head);
    Tensor kh = slice_cols(g, k, h * d_head, (h + 1) * d_head);
    Tensor vh = slice_cols(g, v, h * d_head, (h + 1) * d_head);
    Tensor logits = scale(g, matmul(g, qh, transpose(g, kh)), att_scale);
    Tensor weights = masked_softmax(g, logits, mask);
    heads.push_back(matmul(g, weights, vh));
  }
  Tensor joined = n_heads == 1 ? heads[0] : concat_cols(g, heads);
  return add_rowvec(g, matmul(g, joined, p.wo), p.bo);
}

/// Attention weights for one head, exposed for normalization checks.
inline Tensor attention_weights_head(Graph& g, const Tensor& queries,
                                     const Tensor& keys,
                                     const AttentionMask& mask,
                                     const AttentionParams& p,
                                     std::size_t n_heads, std::size_t head) {
  std::size_t d_model = queries.dim(1);
  std::size_t d_head = d_model / n_heads;
  double att_scale = 1.0 / std::sqrt(static_cast<double>(d_head));
  Tensor q = add_rowvec(g, matmul(g, queries, p.wq), p.bq);
  Tensor k = add_rowvec(g, matmul(g, keys, p.wk), p.bk);
  Tensor qh = slice_cols(g, q, head * d_head, (head + 1) * d_head);
  Tensor kh = slice_cols(g, k, head * d_head, (head + 1) * d_head);
  Tensor logits = scale(g, matmul(g, qh, transpose(g, kh)), att_scale);
  return masked_softmax(g, logits, mask);
}

namespace detail {

inline Tensor glorot(Shape shape, Rng& rng) {
  double fan_in = static_cast<double>(shape[0]);
  double fan_out = static_cast<double>(shape.size() > 1 ? shape[1] : shape[0]);
  double stddev = std::sqrt(2.0 / (fan_in + fan_out));
  return randn(shape, rng, stddev);
}

}  // namespace detail

}  // namespace headliner
