#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "headliner/baselines.hpp"
#include "headliner/bpe.hpp"
#include "headliner/config.hpp"
#include "headliner/corpus.hpp"
#include "headliner/decoding.hpp"
#include "headliner/embeddings.hpp"
#include "headliner/model.hpp"
#include "headliner/params.hpp"
#include "headliner/rouge.hpp"
#include "headliner/training.hpp"
#include "headliner/ut.hpp"

namespace headliner {

/// Every tunable of the toolkit with its full-scale default. Presets,
/// config files, and command-line flags override these in that order.
inline RunConfig default_run_config() {
  RunConfig c;
  c.declare("seed", "1");
  c.declare("model", "ut");
  // model architecture
  c.declare("d_model", "512");
  c.declare("n_heads", "8");
  c.declare("n_steps", "4");
  c.declare("d_ff", "0");  // 0 = 4 * d_model
  c.declare("dropout", "0.3");
  c.declare("max_src_len", "2000");
  c.declare("untied_depth", "0");
  c.declare("untied_output", "0");
  // tokenizer and embedding pre-training
  c.declare("bpe_vocab", "40000");
  c.declare("sgns_epochs", "5");
  // optimization
  c.declare("warmup_steps", "4000");
  c.declare("label_smoothing", "0.1");
  c.declare("batch_tokens", "2048");
  c.declare("beta1", "0.9");
  c.declare("beta2", "0.98");
  c.declare("adam_eps", "1e-9");
  c.declare("clip_norm", "1.0");
  c.declare("patience", "3");
  c.declare("eval_every", "0");  // 0 = once per epoch
  c.declare("max_steps", "0");   // 0 = unlimited
  c.declare("max_epochs", "1000");
  // decoding
  c.declare("beam", "10");
  c.declare("max_len", "20");
  c.declare("length_normalize", "1");
  // corpus filtering and splitting
  c.declare("min_title_words", "3");
  c.declare("max_title_words", "15");
  c.declare("min_body_words", "20");
  c.declare("max_body_words", "2000");
  c.declare("exclude_obituaries", "0");
  c.declare("test_size", "20000");
  c.declare("val_fraction", "0.01");
  return c;
}

/// `micro` shrinks everything to laptop scale; `full` keeps the defaults.
inline void apply_preset(RunConfig& c, const std::string& name) {
  if (name == "full") return;
  if (name == "micro") {
    c.set("d_model", "64");
    c.set("n_heads", "2");
    c.set("n_steps", "2");
    c.set("dropout", "0.1");
    c.set("max_src_len", "256");
    c.set("bpe_vocab", "500");
    c.set("sgns_epochs", "2");
    c.set("warmup_steps", "50");
    c.set("batch_tokens", "1024");
    c.set("max_epochs", "30");
    c.set("test_size", "20");
    c.set("val_fraction", "0.1");
    return;
  }
  throw ConfigError("unknown preset '" + name + "' (expected micro or full)");
}

inline FilterSpec filter_spec_from(const RunConfig& c) {
  FilterSpec spec;
  spec.min_title_words = c.u64("min_title_words");
  spec.max_title_words = c.u64("max_title_words");
  spec.min_body_words = c.u64("min_body_words");
  spec.max_body_words = c.u64("max_body_words");
  spec.exclude_obituaries = c.flag("exclude_obituaries");
  return spec;
}

inline UtConfig ut_config_from(const RunConfig& c, std::size_t vocab) {
  UtConfig mc;
  mc.d_model = c.u64("d_model");
  mc.n_heads = c.u64("n_heads");
  mc.n_steps = c.u64("n_steps");
  mc.d_ff = c.u64("d_ff");
  mc.dropout_p = c.f64("dropout");
  mc.max_src_len = c.u64("max_src_len");
  mc.vocab_size = vocab;
  mc.untied_depth = c.flag("untied_depth");
  mc.untied_output = c.flag("untied_output");
  return mc;
}

inline RnnConfig rnn_config_from(const RunConfig& c, std::size_t vocab) {
  RnnConfig rc;
  rc.d_model = c.u64("d_model");
  rc.max_src_len = c.u64("max_src_len");
  rc.vocab_size = vocab;
  return rc;
}

inline TrainConfig train_config_from(const RunConfig& c) {
  TrainConfig tc;
  tc.warmup_steps = c.u64("warmup_steps");
  tc.beta1 = c.f64("beta1");
  tc.beta2 = c.f64("beta2");
  tc.adam_eps = c.f64("adam_eps");
  tc.clip_norm = c.f64("clip_norm");
  tc.label_smoothing = c.f64("label_smoothing");
  tc.batch_tokens = c.u64("batch_tokens");
  tc.max_src_tokens = c.u64("max_src_len");
  tc.patience = c.u64("patience");
  tc.eval_every = c.u64("eval_every");
  tc.max_steps = c.u64("max_steps");
  tc.max_epochs = c.u64("max_epochs");
  return tc;
}

/// Constructs a freshly initialized model of the configured family.
inline std::unique_ptr<SequenceModel> build_model(const RunConfig& c,
                                                  const EmbeddingTable& emb,
                                                  Rng& init) {
  const std::string& tag = c.str("model");
  if (tag == "ut") {
    return std::make_unique<UtModel>(ut_config_from(c, emb.vocab), emb, init);
  }
  if (tag == "rnn") {
    return std::make_unique<RnnModel>(rnn_config_from(c, emb.vocab), emb, init);
  }
  throw ConfigError("unknown model '" + tag + "' (expected ut or rnn)");
}

/// Reconstructs a trained model from its checkpoint, dispatching on the tag.
inline std::unique_ptr<SequenceModel> load_model(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  std::string tag = config_value(ck.config, "model");
  if (tag == "ut") {
    return std::make_unique<UtModel>(UtConfig::from_kv(ck.config),
                                     std::move(ck.params));
  }
  if (tag == "rnn") {
    return std::make_unique<RnnModel>(RnnConfig::from_kv(ck.config),
                                      std::move(ck.params));
  }
  throw InputError("checkpoint: unknown model tag '" + tag + "'");
}

inline void save_model(const std::string& path, SequenceModel& model) {
  save_checkpoint(path, model.config_kv(), model.params());
}

/// The source length cap a model was built with, recovered from its config.
inline std::size_t model_max_src_len(SequenceModel& model) {
  return std::stoul(config_value(model.config_kv(), "max_src_len"));
}

/// (body, title) token pairs for teacher-forced training. The RNN baseline
/// reads only the first sentence of each body. Articles whose fields encode
/// to nothing (all characters outside the alphabet) are dropped.
inline std::vector<TokenPair> make_pairs(const std::vector<Article>& articles,
                                         const BpeModel& bpe,
                                         bool first_sentence_only,
                                         std::size_t max_src_tokens) {
  std::vector<TokenPair> out;
  out.reserve(articles.size());
  for (const Article& a : articles) {
    TokenPair p;
    p.src = bpe.encode(first_sentence_only ? first_sentence(a.body) : a.body);
    if (p.src.size() > max_src_tokens) p.src.resize(max_src_tokens);
    p.tgt = bpe.encode(a.title);
    if (p.src.empty() || p.tgt.empty()) continue;
    out.push_back(std::move(p));
  }
  return out;
}

/// One token sequence per article field, for embedding pre-training;
/// context windows never cross a title/body boundary.
inline std::vector<std::vector<TokenId>> token_sequences(
    const std::vector<Article>& articles, const BpeModel& bpe) {
  std::vector<std::vector<TokenId>> out;
  out.reserve(articles.size() * 2);
  for (const Article& a : articles) {
    std::vector<TokenId> t = bpe.encode(a.title);
    if (!t.empty()) out.push_back(std::move(t));
    std::vector<TokenId> b = bpe.encode(a.body);
    if (!b.empty()) out.push_back(std::move(b));
  }
  return out;
}

/// Decodes one headline per article, in input order.
inline std::vector<std::string> generate_titles(SequenceModel& model,
                                                const BpeModel& bpe,
                                                const std::vector<Article>& articles,
                                                std::size_t beam,
                                                std::size_t max_len,
                                                bool length_normalize) {
  bool first_only = model.model_tag() == "rnn";
  std::size_t cap = model_max_src_len(model);
  std::vector<std::string> out;
  out.reserve(articles.size());
  for (const Article& a : articles) {
    std::vector<TokenId> src =
        bpe.encode(first_only ? first_sentence(a.body) : a.body);
    if (src.size() > cap) src.resize(cap);
    if (src.empty()) {
      out.emplace_back();  // nothing encodable; keep the line alignment
      continue;
    }
    out.push_back(bpe.decode(beam_decode(model, src, beam, max_len,
                                         length_normalize)));
  }
  return out;
}

/// The one serialization of a RougeReport, shared by `evaluate` and
/// `pipeline` so identical scores are identical bytes.
inline nlohmann::ordered_json rouge_report_json(const RougeReport& r) {
  auto block = [](const RougeScore& s) {
    return nlohmann::ordered_json{
        {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
  };
  nlohmann::ordered_json j;
  j["rouge1"] = block(r.rouge1);
  j["rouge2"] = block(r.rouge2);
  j["rougeL"] = block(r.rougeL);
  j["count"] = r.count;
  return j;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw InputError("failed writing " + path);
}

inline void write_jsonl_titles(const std::string& path,
                               const std::vector<std::string>& titles) {
  std::string buf;
  for (const std::string& t : titles) {
    nlohmann::ordered_json j{{"title_hyp", t}};
    buf += j.dump();
    buf += '\n';
  }
  write_text_file(path, buf);
}

struct PipelineArtifacts {
  RougeReport report;
  std::string workdir;
  std::string manifest_path;
  std::string bpe_path;
  std::string embeddings_path;
  std::string checkpoint_path;
  std::string hypotheses_path;
  std::string report_path;
};

/// The whole study in one call: filter, split, learn the tokenizer and
/// embeddings on the training split, train the model, decode the test
/// split, and score it. Every stage seeds its own stream from the root
/// seed, so a rerun with the same inputs is byte-identical.
inline PipelineArtifacts run_pipeline(const std::string& corpus_path,
                                      const std::string& workdir,
                                      const RunConfig& cfg,
                                      std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(workdir);
  auto say = [log](const std::string& msg) {
    if (log) (*log) << msg << "\n";
  };
  PipelineArtifacts art;
  art.workdir = workdir;
  art.manifest_path = workdir + "/splits.json";
  art.bpe_path = workdir + "/bpe.vocab";
  art.embeddings_path = workdir + "/embeddings.bin";
  art.checkpoint_path = workdir + "/model.ckpt";
  art.hypotheses_path = workdir + "/hypotheses.jsonl";
  art.report_path = workdir + "/report.json";

  std::uint64_t seed = cfg.u64("seed");

  std::vector<Article> articles = load_corpus(corpus_path);
  std::vector<Article> kept = apply_filters(articles, filter_spec_from(cfg));
  say("pipeline: " + std::to_string(kept.size()) + " of " +
      std::to_string(articles.size()) + " articles pass the filters");
  if (kept.size() < 3) {
    throw InputError("pipeline: need at least 3 articles after filtering");
  }

  std::size_t test_size = std::min(cfg.u64("test_size"), kept.size() / 5);
  if (test_size == 0) test_size = 1;
  Splits splits = split_corpus(kept.size(), test_size,
                               cfg.f64("val_fraction"), seed);
  save_manifest(splits, art.manifest_path);
  std::vector<Article> train_articles = take_split(kept, splits.train);
  std::vector<Article> val_articles = take_split(kept, splits.val);
  std::vector<Article> test_articles = take_split(kept, splits.test);
  say("pipeline: split " + std::to_string(train_articles.size()) + "/" +
      std::to_string(val_articles.size()) + "/" +
      std::to_string(test_articles.size()) + " train/val/test");

  std::vector<std::string> bpe_texts;
  bpe_texts.reserve(train_articles.size() * 2);
  for (const Article& a : train_articles) {
    bpe_texts.push_back(a.title);
    bpe_texts.push_back(a.body);
  }
  BpeModel bpe = train_bpe(bpe_texts, cfg.u64("bpe_vocab"));
  bpe.save(art.bpe_path);
  say("pipeline: tokenizer ready, vocab " + std::to_string(bpe.vocab_size()));

  SgnsConfig scfg;
  scfg.dim = cfg.u64("d_model");
  scfg.epochs = cfg.u64("sgns_epochs");
  scfg.seed = hash64(seed, "sgns");
  EmbeddingTable emb =
      train_sgns(token_sequences(train_articles, bpe), bpe.vocab_size(), scfg);
  emb.save(art.embeddings_path);
  say("pipeline: embeddings pre-trained");

  Rng init(hash64(seed, "model-init"));
  std::unique_ptr<SequenceModel> model = build_model(cfg, emb, init);
  bool first_only = model->model_tag() == "rnn";
  std::size_t max_src = cfg.u64("max_src_len");
  std::vector<TokenPair> train_pairs =
      make_pairs(train_articles, bpe, first_only, max_src);
  std::vector<TokenPair> val_pairs =
      make_pairs(val_articles, bpe, first_only, max_src);
  if (train_pairs.empty()) {
    throw InputError("pipeline: no trainable pairs in the training split");
  }
  TrainConfig tc = train_config_from(cfg);
  tc.seed = hash64(seed, "train");
  Trainer trainer(*model, tc);
  TrainResult tr = trainer.train(train_pairs, val_pairs, log);
  say("pipeline: trained for " + std::to_string(tr.steps) + " steps");
  save_model(art.checkpoint_path, *model);

  std::vector<std::string> hyps =
      generate_titles(*model, bpe, test_articles, cfg.u64("beam"),
                      cfg.u64("max_len"), cfg.flag("length_normalize"));
  write_jsonl_titles(art.hypotheses_path, hyps);

  std::vector<std::string> refs;
  refs.reserve(test_articles.size());
  for (const Article& a : test_articles) refs.push_back(a.title);
  art.report = evaluate_rouge_text(hyps, refs);
  write_text_file(art.report_path, rouge_report_json(art.report).dump(2) + "\n");
  say("pipeline: report at " + art.report_path);
  return art;
}

}  // namespace headliner
