#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "headliner/bpe.hpp"
#include "headliner/model.hpp"
#include "headliner/params.hpp"
#include "headliner/tensor.hpp"

namespace headliner {

/// lr = d_model^-1/2 * min(step^-1/2, step * warmup^-3/2); linear warmup to
/// a peak at step == warmup, then inverse-sqrt decay.
inline double noam_lr(std::size_t step, std::size_t d_model,
                      std::size_t warmup) {
  if (step == 0) throw ValueError("noam_lr: step must be at least 1");
  if (warmup == 0) throw ValueError("noam_lr: warmup must be at least 1");
  double s = static_cast<double>(step);
  double w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

/// Cross-entropy against q = (1-eps)*onehot + eps*uniform over the non-pad
/// vocabulary, averaged over non-pad target positions. eps = 0 is exact
/// negative log-likelihood. Fused forward/backward over the whole sequence.
inline Tensor smoothed_nll(Graph& g, const Tensor& log_probs,
                           const std::vector<TokenId>& targets, double eps,
                           TokenId pad_id = kPadId) {
  if (eps < 0.0 || eps >= 1.0) {
    throw ValueError("smoothed_nll: eps must lie in [0, 1)");
  }
  if (log_probs.rank() != 2) {
    throw ShapeError("smoothed_nll: log_probs must be [T, vocab], got " +
                     shape_str(log_probs.shape()));
  }
  std::size_t T = log_probs.dim(0), V = log_probs.dim(1);
  if (targets.size() != T) {
    throw ShapeError("smoothed_nll: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(T) + " positions");
  }
  if (V < 2) throw ValueError("smoothed_nll: vocabulary too small");
  for (TokenId t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= V) {
      throw ValueError("smoothed_nll: target id " + std::to_string(t) +
                       " outside vocab of " + std::to_string(V));
    }
  }

  double K = static_cast<double>(V - 1);  // non-pad vocabulary size
  double uniform_q = eps / K;
  const double* lp = log_probs.data();
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t t = 0; t < T; ++t) {
    if (targets[t] == pad_id) continue;
    ++counted;
    double row = 0.0;
    if (eps > 0.0) {
      for (std::size_t v = 0; v < V; ++v) {
        if (static_cast<TokenId>(v) == pad_id) continue;
        row -= uniform_q * lp[t * V + v];
      }
    }
    row -= (1.0 - eps) * lp[t * V + static_cast<std::size_t>(targets[t])];
    total += row;
  }
  if (counted == 0) {
    throw ValueError("smoothed_nll: every target position is padding");
  }
  double inv_n = 1.0 / static_cast<double>(counted);
  Tensor out = Tensor::scalar(total * inv_n);

  int ix = g.input_id(log_probs);
  if (ix >= 0) {
    std::vector<TokenId> tgts = targets;
    g.attach(out, "smoothed_nll", {ix},
             [ix, tgts, eps, pad_id, T, V, uniform_q,
              inv_n](Graph& gg, const std::vector<double>& up) {
               auto& dx = gg.grad_buffer(ix);
               double go = up[0] * inv_n;
               for (std::size_t t = 0; t < T; ++t) {
                 if (tgts[t] == pad_id) continue;
                 if (eps > 0.0) {
                   for (std::size_t v = 0; v < V; ++v) {
                     if (static_cast<TokenId>(v) == pad_id) continue;
                     dx[t * V + v] -= go * uniform_q;
                   }
                 }
                 dx[t * V + static_cast<std::size_t>(tgts[t])] -=
                     go * (1.0 - eps);
               }
             });
  }
  return out;
}

/// How many target positions actually contribute to the loss.
inline std::size_t non_pad_count(const std::vector<TokenId>& targets,
                                 TokenId pad_id = kPadId) {
  std::size_t n = 0;
  for (TokenId t : targets) {
    if (t != pad_id) ++n;
  }
  return n;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double clip_norm = 1.0;  // <= 0 disables global-norm clipping
};

/// Bias-corrected Adam over a ParamStore, with global-norm clipping and a
/// hard stop on non-finite gradients.
class AdamOptimizer {
 public:
  AdamOptimizer(ParamStore& params, AdamConfig cfg = {})
      : params_(params), cfg_(cfg) {
    for (const auto& [name, t] : params_.items()) {
      m_.emplace_back(t.size(), 0.0);
      v_.emplace_back(t.size(), 0.0);
    }
  }

  std::size_t step_count() const { return step_; }

  /// grads[i] pairs with params.items()[i].
  void apply(std::vector<std::vector<double>>& grads, double lr) {
    auto& items = params_.items();
    if (grads.size() != items.size()) {
      throw ShapeError("adam: gradient count mismatch");
    }
    double sq_norm = 0.0;
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (grads[i].size() != items[i].second.size()) {
        throw ShapeError("adam: gradient shape mismatch for " +
                         items[i].first);
      }
      for (double gv : grads[i]) {
        if (!std::isfinite(gv)) {
          throw ValueError("adam: non-finite gradient for parameter " +
                           items[i].first);
        }
        sq_norm += gv * gv;
      }
    }
    if (cfg_.clip_norm > 0.0) {
      double norm = std::sqrt(sq_norm);
      if (norm > cfg_.clip_norm) {
        double scale = cfg_.clip_norm / norm;
        for (auto& gr : grads) {
          for (double& gv : gr) gv *= scale;
        }
      }
    }
    ++step_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < grads.size(); ++i) {
      Tensor& p = items[i].second;
      double* pd = p.data();
      for (std::size_t j = 0; j < grads[i].size(); ++j) {
        double gv = grads[i][j];
        m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * gv;
        v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * gv * gv;
        double mhat = m_[i][j] / bc1;
        double vhat = v_[i][j] / bc2;
        pd[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  ParamStore& params_;
  AdamConfig cfg_;
  std::size_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

struct TokenPair {
  std::vector<TokenId> src;  // already truncated to max_src_tokens
  std::vector<TokenId> tgt;  // title tokens without BOS/EOS
};

struct TrainConfig {
  std::size_t warmup_steps = 4000;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-9;
  double clip_norm = 1.0;
  double label_smoothing = 0.0;
  std::size_t batch_tokens = 2048;  // source+target token budget per step
  std::size_t max_src_tokens = 2000;
  std::uint64_t seed = 1;
  // convergence: stop after `patience` evaluations without improvement;
  // evaluations run every eval_every steps (0 = at the end of each epoch)
  std::size_t patience = 3;
  std::size_t eval_every = 0;
  std::size_t max_steps = 0;   // 0 = no cap
  std::size_t max_epochs = 1000;

  void validate() const {
    if (warmup_steps == 0) throw ConfigError("train: warmup_steps must be >= 1");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
      throw ConfigError("train: label_smoothing must lie in [0, 1)");
    }
    if (batch_tokens == 0) throw ConfigError("train: batch_tokens must be >= 1");
    if (max_epochs == 0) throw ConfigError("train: max_epochs must be >= 1");
  }
};

struct TrainResult {
  std::vector<double> step_losses;
  std::vector<double> val_losses;
  double best_val_loss = 0.0;
  std::size_t steps = 0;
};

/// Teacher-forced MLE training with the Noam schedule. Batches are filled
/// up to a token budget; each sequence runs on its own tape and gradients
/// are token-weighted, which matches padding each batch to its longest
/// sequence without spending compute on pads. The model is left holding the
/// parameters of its best validation checkpoint.
class Trainer {
 public:
  Trainer(SequenceModel& model, TrainConfig cfg)
      : model_(model), cfg_(cfg) {
    cfg_.validate();
  }

  TrainResult train(const std::vector<TokenPair>& train_data,
                    const std::vector<TokenPair>& val_data,
                    std::ostream* log = nullptr) {
    if (train_data.empty()) throw InputError("train: no training examples");
    for (const TokenPair& p : train_data) check_pair(p);
    // convergence needs something to hold out; fall back to the training
    // set itself when no validation split was provided
    const std::vector<TokenPair>& val =
        val_data.empty() ? train_data : val_data;

    AdamConfig adam_cfg{cfg_.beta1, cfg_.beta2, cfg_.adam_eps, cfg_.clip_norm};
    AdamOptimizer opt(model_.params(), adam_cfg);
    Rng root(cfg_.seed);
    Rng dropout_rng = root.fork("dropout");

    TrainResult result;
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_snapshot = snapshot();
    std::size_t bad_evals = 0;
    bool stop = false;

    std::vector<std::size_t> order(train_data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg_.max_epochs && !stop; ++epoch) {
      Rng shuffle_rng = root.fork("epoch-" + std::to_string(epoch));
      shuffle_rng.shuffle(order);

      std::size_t cursor = 0;
      while (cursor < order.size() && !stop) {
        // pack one batch under the token budget (always >= 1 example)
        std::vector<std::size_t> batch;
        std::size_t budget = 0;
        while (cursor < order.size()) {
          const TokenPair& p = train_data[order[cursor]];
          std::size_t cost = p.src.size() + p.tgt.size() + 2;
          if (!batch.empty() && budget + cost > cfg_.batch_tokens) break;
          batch.push_back(order[cursor]);
          budget += cost;
          ++cursor;
        }

        double batch_loss = run_batch(train_data, batch, opt, dropout_rng,
                                      result, log);
        (void)batch_loss;

        bool step_cap = cfg_.max_steps > 0 && result.steps >= cfg_.max_steps;
        bool eval_now =
            cfg_.eval_every > 0 && result.steps % cfg_.eval_every == 0;
        if (eval_now || step_cap) {
          stop = evaluate_and_maybe_stop(val, result, best, best_snapshot,
                                         bad_evals) ||
                 step_cap;
        }
      }
      if (!stop && cfg_.eval_every == 0) {
        stop = evaluate_and_maybe_stop(val, result, best, best_snapshot,
                                       bad_evals);
      }
    }
    restore(best_snapshot);
    result.best_val_loss = best;
    return result;
  }

  /// Token-weighted average loss over a dataset, no gradients.
  double evaluate(const std::vector<TokenPair>& data) const {
    if (data.empty()) throw InputError("evaluate: no examples");
    double total = 0.0;
    std::size_t tokens = 0;
    Rng unused(0);
    for (const TokenPair& p : data) {
      Graph g(false);
      auto [tgt_in, tgt_out] = shifted_targets(p.tgt);
      Tensor mem = model_.encode(g, p.src, false, unused);
      Tensor lp = model_.decode_log_probs(g, mem, tgt_in, false, unused);
      Tensor loss = smoothed_nll(g, lp, tgt_out, cfg_.label_smoothing);
      std::size_t n = non_pad_count(tgt_out);
      total += loss.item() * static_cast<double>(n);
      tokens += n;
    }
    return total / static_cast<double>(tokens);
  }

  static std::pair<std::vector<TokenId>, std::vector<TokenId>>
  shifted_targets(const std::vector<TokenId>& tgt) {
    std::vector<TokenId> tgt_in, tgt_out;
    tgt_in.reserve(tgt.size() + 1);
    tgt_out.reserve(tgt.size() + 1);
    tgt_in.push_back(kBosId);
    for (TokenId t : tgt) {
      tgt_in.push_back(t);
      tgt_out.push_back(t);
    }
    tgt_out.push_back(kEosId);
    return {std::move(tgt_in), std::move(tgt_out)};
  }

 private:
  void check_pair(const TokenPair& p) const {
    if (p.src.empty()) throw InputError("train: example with empty source");
    if (p.src.size() > cfg_.max_src_tokens) {
      throw InputError("train: source of " + std::to_string(p.src.size()) +
                       " tokens exceeds max_src_tokens " +
                       std::to_string(cfg_.max_src_tokens) +
                       "; truncate upstream");
    }
  }

  double run_batch(const std::vector<TokenPair>& data,
                   const std::vector<std::size_t>& batch, AdamOptimizer& opt,
                   Rng& dropout_rng, TrainResult& result, std::ostream* log) {
    auto& items = model_.params().items();
    std::vector<std::vector<double>> grads;
    grads.reserve(items.size());
    for (const auto& [name, t] : items) grads.emplace_back(t.size(), 0.0);

    double loss_weighted = 0.0;
    std::size_t total_tokens = 0;
    for (std::size_t idx : batch) {
      const TokenPair& p = data[idx];
      auto [tgt_in, tgt_out] = shifted_targets(p.tgt);
      Graph g;
      Tensor mem = model_.encode(g, p.src, true, dropout_rng);
      Tensor lp = model_.decode_log_probs(g, mem, tgt_in, true, dropout_rng);
      Tensor loss = smoothed_nll(g, lp, tgt_out, cfg_.label_smoothing);
      g.backward(loss);
      std::size_t n = non_pad_count(tgt_out);
      double w = static_cast<double>(n);
      loss_weighted += loss.item() * w;
      total_tokens += n;
      for (std::size_t i = 0; i < items.size(); ++i) {
        const std::vector<double>* gp = g.grad_ptr(items[i].second);
        if (!gp) continue;
        for (std::size_t j = 0; j < grads[i].size(); ++j) {
          grads[i][j] += (*gp)[j] * w;
        }
      }
    }
    double inv = 1.0 / static_cast<double>(total_tokens);
    for (auto& gr : grads) {
      for (double& gv : gr) gv *= inv;
    }
    double lr = noam_lr(opt.step_count() + 1, lr_d_model(), cfg_.warmup_steps);
    opt.apply(grads, lr);

    double batch_loss = loss_weighted * inv;
    result.step_losses.push_back(batch_loss);
    ++result.steps;
    if (log) {
      (*log) << "step=" << result.steps << " lr=" << lr
             << " loss=" << batch_loss << "\n";
    }
    return batch_loss;
  }

  bool evaluate_and_maybe_stop(const std::vector<TokenPair>& val,
                               TrainResult& result, double& best,
                               std::vector<std::vector<double>>& best_snapshot,
                               std::size_t& bad_evals) {
    double val_loss = evaluate(val);
    result.val_losses.push_back(val_loss);
    if (val_loss < best) {
      best = val_loss;
      best_snapshot = snapshot();
      bad_evals = 0;
    } else {
      ++bad_evals;
    }
    return bad_evals >= cfg_.patience;
  }

  std::size_t lr_d_model() const {
    // schedule scale follows the model width (embedding columns)
    return model_.params().get("embedding").dim(1);
  }

  std::vector<std::vector<double>> snapshot() const {
    std::vector<std::vector<double>> s;
    for (const auto& [name, t] : model_.params().items()) {
      s.push_back(t.values());
    }
    return s;
  }

  void restore(const std::vector<std::vector<double>>& s) {
    auto& items = model_.params().items();
    for (std::size_t i = 0; i < items.size(); ++i) {
      std::copy(s[i].begin(), s[i].end(), items[i].second.data());
    }
  }

  SequenceModel& model_;
  TrainConfig cfg_;
};

}  // namespace headliner
