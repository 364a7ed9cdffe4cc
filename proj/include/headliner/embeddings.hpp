#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "headliner/common.hpp"
#include "headliner/tensor.hpp"

namespace headliner {

struct EmbeddingTable {
  std::size_t vocab = 0;
  std::size_t dim = 0;
  std::vector<double> data;  // row-major [vocab, dim]

  EmbeddingTable() = default;
  EmbeddingTable(std::size_t v, std::size_t d)
      : vocab(v), dim(d), data(v * d, 0.0) {}

  double* row(std::size_t i) { return data.data() + i * dim; }
  const double* row(std::size_t i) const { return data.data() + i * dim; }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("embeddings: cannot open " + path +
                               " for writing");
    out << "emb-v1 " << vocab << " " << dim << "\n";
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!out) throw InputError("embeddings: write to " + path + " failed");
  }

  static EmbeddingTable load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("embeddings: cannot open " + path);
    std::string magic;
    std::size_t v = 0, d = 0;
    in >> magic >> v >> d;
    if (magic != "emb-v1" || v == 0 || d == 0) {
      throw InputError("embeddings: bad header in " + path);
    }
    in.ignore(1);  // newline after the header
    EmbeddingTable t(v, d);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (in.gcount() !=
        static_cast<std::streamsize>(t.data.size() * sizeof(double))) {
      throw InputError("embeddings: truncated payload in " + path);
    }
    return t;
  }
};

/// Skip-gram negative-sampling loss for one (center, positive, negatives)
/// event: -log s(w.c+) - sum_k log s(-w.ck).
inline double sgns_pair_loss(const std::vector<double>& w,
                             const std::vector<double>& cpos,
                             const std::vector<std::vector<double>>& cnegs) {
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  auto log_sigmoid = [](double x) {
    // stable: log s(x) = -log(1 + e^{-x}) = min(x,0) - log1p(e^{-|x|})
    return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x)));
  };
  double loss = -log_sigmoid(dot(w, cpos));
  for (const auto& cn : cnegs) loss += -log_sigmoid(-dot(w, cn));
  return loss;
}

/// Closed-form gradients of sgns_pair_loss with respect to every vector.
inline void sgns_pair_grads(const std::vector<double>& w,
                            const std::vector<double>& cpos,
                            const std::vector<std::vector<double>>& cnegs,
                            std::vector<double>& gw, std::vector<double>& gpos,
                            std::vector<std::vector<double>>& gnegs) {
  std::size_t d = w.size();
  auto sigmoid = [](double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                    : std::exp(x) / (1.0 + std::exp(x));
  };
  gw.assign(d, 0.0);
  gpos.assign(d, 0.0);
  gnegs.assign(cnegs.size(), std::vector<double>(d, 0.0));

  double spos = 0.0;
  for (std::size_t i = 0; i < d; ++i) spos += w[i] * cpos[i];
  double dpos = sigmoid(spos) - 1.0;  // dL/d(w.c+)
  for (std::size_t i = 0; i < d; ++i) {
    gw[i] += dpos * cpos[i];
    gpos[i] = dpos * w[i];
  }
  for (std::size_t k = 0; k < cnegs.size(); ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += w[i] * cnegs[k][i];
    double dneg = sigmoid(s);  // dL/d(w.ck)
    for (std::size_t i = 0; i < d; ++i) {
      gw[i] += dneg * cnegs[k][i];
      gnegs[k][i] = dneg * w[i];
    }
  }
}

struct SgnsConfig {
  std::size_t dim = 512;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double lr = 0.025;
  std::uint64_t seed = 1;
};

namespace detail {

// Inverse-CDF sampler over the unigram distribution raised to 0.75.
class NegativeSampler {
 public:
  NegativeSampler(const std::vector<long long>& counts) {
    cdf_.resize(counts.size());
    double total = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      total += std::pow(static_cast<double>(counts[i]), 0.75);
      cdf_[i] = total;
    }
    if (total <= 0.0) {
      throw InputError("train_sgns: corpus has no countable tokens");
    }
    for (double& c : cdf_) c /= total;
    cdf_.back() = 1.0;
  }

  TokenId sample(Rng& rng) const {
    double u = rng.uniform();
    auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
    if (it == cdf_.end()) --it;
    return static_cast<TokenId>(it - cdf_.begin());
  }

 private:
  std::vector<double> cdf_;
};

}  // namespace detail

inline EmbeddingTable random_embeddings(std::size_t vocab, std::size_t dim,
                                        Rng& rng) {
  EmbeddingTable t(vocab, dim);
  double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (double& v : t.data) v = rng.gaussian() * scale;
  return t;
}

/// Skip-gram with negative sampling over pre-tokenized sequences. Returns
/// the input-side vectors; per-epoch average losses land in epoch_losses
/// when provided.
inline EmbeddingTable train_sgns(
    const std::vector<std::vector<TokenId>>& corpus_tokens,
    std::size_t vocab_size, const SgnsConfig& cfg,
    std::vector<double>* epoch_losses = nullptr) {
  std::vector<long long> counts(vocab_size, 0);
  long long total_tokens = 0;
  for (const auto& seq : corpus_tokens) {
    for (TokenId t : seq) {
      if (t < 0 || static_cast<std::size_t>(t) >= vocab_size) {
        throw ValueError("train_sgns: token id " + std::to_string(t) +
                         " outside vocab of " + std::to_string(vocab_size));
      }
      ++counts[static_cast<std::size_t>(t)];
      ++total_tokens;
    }
  }
  if (total_tokens == 0) throw InputError("train_sgns: corpus is empty");

  Rng init_rng = Rng(cfg.seed).fork("sgns-init");
  EmbeddingTable table(vocab_size, cfg.dim);
  double span = 0.5 / static_cast<double>(cfg.dim);
  for (double& v : table.data) v = init_rng.uniform(-span, span);
  std::vector<double> context(vocab_size * cfg.dim, 0.0);
  for (double& v : context) v = init_rng.uniform(-span, span);

  if (cfg.epochs == 0) return table;

  detail::NegativeSampler sampler(counts);
  Rng rng = Rng(cfg.seed).fork("sgns-train");
  std::vector<double> gw(cfg.dim), gc(cfg.dim);

  auto sigmoid = [](double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                    : std::exp(x) / (1.0 + std::exp(x));
  };
  auto log_sigmoid = [](double x) {
    return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x)));
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    long long loss_events = 0;
    for (const auto& seq : corpus_tokens) {
      for (std::size_t i = 0; i < seq.size(); ++i) {
        std::size_t w = static_cast<std::size_t>(seq[i]);
        double* wv = table.row(w);
        std::size_t lo = i >= cfg.window ? i - cfg.window : 0;
        std::size_t hi = std::min(seq.size(), i + cfg.window + 1);
        for (std::size_t j = lo; j < hi; ++j) {
          if (j == i) continue;
          std::size_t pos = static_cast<std::size_t>(seq[j]);

          std::fill(gw.begin(), gw.end(), 0.0);
          // positive example
          double* cv = context.data() + pos * cfg.dim;
          double s = 0.0;
          for (std::size_t d = 0; d < cfg.dim; ++d) s += wv[d] * cv[d];
          loss_sum += -log_sigmoid(s);
          double g = sigmoid(s) - 1.0;
          for (std::size_t d = 0; d < cfg.dim; ++d) {
            gw[d] += g * cv[d];
            cv[d] -= cfg.lr * g * wv[d];
          }
          // negatives: resample collisions with the positive once, then keep
          for (std::size_t k = 0; k < cfg.negatives; ++k) {
            std::size_t neg = static_cast<std::size_t>(sampler.sample(rng));
            if (neg == pos) neg = static_cast<std::size_t>(sampler.sample(rng));
            if (neg == pos) continue;
            double* nv = context.data() + neg * cfg.dim;
            double sn = 0.0;
            for (std::size_t d = 0; d < cfg.dim; ++d) sn += wv[d] * nv[d];
            loss_sum += -log_sigmoid(-sn);
            double gn = sigmoid(sn);
            for (std::size_t d = 0; d < cfg.dim; ++d) {
              gw[d] += gn * nv[d];
              nv[d] -= cfg.lr * gn * wv[d];
            }
          }
          for (std::size_t d = 0; d < cfg.dim; ++d) wv[d] -= cfg.lr * gw[d];
          ++loss_events;
        }
      }
    }
    if (epoch_losses) {
      epoch_losses->push_back(loss_events > 0
                                  ? loss_sum / static_cast<double>(loss_events)
                                  : 0.0);
    }
  }
  if (!table.all_finite()) {
    throw ValueError("train_sgns: embedding table left finite range");
  }
  return table;
}

enum class InitStrategy { random, pretrained };

/// The model's initial shared embedding table: a fresh random table or a
/// pass-through of a pretrained one whose shape must match.
inline EmbeddingTable init_embeddings(InitStrategy strategy,
                                      const EmbeddingTable* table,
                                      std::size_t vocab_size,
                                      std::size_t d_model, Rng& rng) {
  if (strategy == InitStrategy::pretrained) {
    if (!table) {
      throw ConfigError("init_embeddings: pretrained strategy needs a table");
    }
    if (table->vocab != vocab_size || table->dim != d_model) {
      throw ConfigError(
          "init_embeddings: table is " + std::to_string(table->vocab) + "x" +
          std::to_string(table->dim) + " but model needs " +
          std::to_string(vocab_size) + "x" + std::to_string(d_model));
    }
    return *table;
  }
  return random_embeddings(vocab_size, d_model, rng);
}

inline double cosine(const double* a, const double* b, std::size_t dim) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  double denom = std::sqrt(na) * std::sqrt(nb);
  return denom > 0.0 ? dot / denom : 0.0;
}

}  // namespace headliner
