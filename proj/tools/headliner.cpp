// headliner: train, run, and score abstractive headline generators.
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "headliner/baselines.hpp"
#include "headliner/bpe.hpp"
#include "headliner/config.hpp"
#include "headliner/corpus.hpp"
#include "headliner/decoding.hpp"
#include "headliner/embeddings.hpp"
#include "headliner/pipeline.hpp"
#include "headliner/rouge.hpp"
#include "headliner/training.hpp"

namespace {

using namespace headliner;

// JSONL title extraction for evaluate: each line must carry `primary` (or
// `fallback`) as a string. Blank lines are skipped to mirror load_corpus.
std::vector<std::string> read_titles(const std::string& path,
                                     const std::string& primary,
                                     const std::string& fallback) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  std::vector<std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw InputError(path + " line " + std::to_string(line_no) +
                       ": not a JSON object");
    }
    const char* field = nullptr;
    if (j.contains(primary) && j[primary].is_string()) {
      field = primary.c_str();
    } else if (j.contains(fallback) && j[fallback].is_string()) {
      field = fallback.c_str();
    } else {
      throw InputError(path + " line " + std::to_string(line_no) +
                       ": no string field '" + primary + "' or '" + fallback +
                       "'");
    }
    out.push_back(j[field].get<std::string>());
  }
  return out;
}

void emit(const std::string& out_path, const std::string& payload) {
  if (out_path.empty()) {
    std::cout << payload;
  } else {
    write_text_file(out_path, payload);
  }
}

std::string titles_jsonl(const std::vector<std::string>& titles) {
  std::string buf;
  for (const std::string& t : titles) {
    buf += nlohmann::ordered_json{{"title_hyp", t}}.dump();
    buf += '\n';
  }
  return buf;
}

struct CommonOpts {
  std::string preset;
  std::string config_path;
  std::string model;
  std::int64_t seed = -1;  // -1 = keep the configured default
};

RunConfig merged_config(const CommonOpts& o) {
  RunConfig cfg = default_run_config();
  if (!o.preset.empty()) apply_preset(cfg, o.preset);
  if (!o.config_path.empty()) cfg.load_file(o.config_path);
  if (!o.model.empty()) cfg.set("model", o.model);
  if (o.seed >= 0) cfg.set("seed", std::to_string(o.seed));
  return cfg;
}

void add_common(CLI::App* sub, CommonOpts& o, bool with_model) {
  sub->add_option("--preset", o.preset, "Configuration preset: micro or full");
  sub->add_option("--config", o.config_path, "key = value configuration file");
  sub->add_option("--seed", o.seed, "Root random seed");
  if (with_model) {
    sub->add_option("--model", o.model, "Model family: ut or rnn");
  }
}

int run_train_bpe(const std::string& corpus, std::size_t vocab_size,
                  const std::string& out) {
  std::vector<Article> articles = load_corpus(corpus);
  std::vector<std::string> texts;
  texts.reserve(articles.size() * 2);
  for (const Article& a : articles) {
    texts.push_back(a.title);
    texts.push_back(a.body);
  }
  BpeModel bpe = train_bpe(texts, vocab_size);
  bpe.save(out);
  std::cerr << "trained tokenizer: vocab " << bpe.vocab_size() << " ("
            << bpe.merges().size() << " merges) -> " << out << "\n";
  return 0;
}

int run_train_embeddings(const std::string& corpus, const std::string& bpe_path,
                         std::size_t dim, std::size_t epochs,
                         std::uint64_t seed, const std::string& out) {
  BpeModel bpe = BpeModel::load(bpe_path);
  std::vector<Article> articles = load_corpus(corpus);
  SgnsConfig cfg;
  cfg.dim = dim;
  cfg.epochs = epochs;
  cfg.seed = seed;
  EmbeddingTable emb =
      train_sgns(token_sequences(articles, bpe), bpe.vocab_size(), cfg);
  emb.save(out);
  std::cerr << "trained embeddings: " << emb.vocab << "x" << emb.dim << " -> "
            << out << "\n";
  return 0;
}

int run_train(const CommonOpts& common, const std::string& corpus,
              const std::string& bpe_path, const std::string& emb_path,
              const std::string& out) {
  RunConfig cfg = merged_config(common);
  BpeModel bpe = BpeModel::load(bpe_path);
  std::vector<Article> articles = load_corpus(corpus);

  Rng init(hash64(cfg.u64("seed"), "model-init"));
  EmbeddingTable pretrained;
  const EmbeddingTable* table = nullptr;
  if (!emb_path.empty()) {
    pretrained = EmbeddingTable::load(emb_path);
    table = &pretrained;
  }
  EmbeddingTable emb = init_embeddings(
      table ? InitStrategy::pretrained : InitStrategy::random, table,
      bpe.vocab_size(), cfg.u64("d_model"), init);

  std::unique_ptr<SequenceModel> model = build_model(cfg, emb, init);
  std::vector<TokenPair> pairs =
      make_pairs(articles, bpe, model->model_tag() == "rnn",
                 cfg.u64("max_src_len"));
  if (pairs.empty()) throw InputError("train: no usable article pairs");

  TrainConfig tc = train_config_from(cfg);
  tc.seed = hash64(cfg.u64("seed"), "train");
  Trainer trainer(*model, tc);
  TrainResult result = trainer.train(pairs, {}, &std::cerr);
  save_model(out, *model);
  std::cerr << "trained " << model->model_tag() << " for " << result.steps
            << " steps (best val loss " << result.best_val_loss << ") -> "
            << out << "\n";
  return 0;
}

int run_generate(const std::string& ckpt, const std::string& bpe_path,
                 const std::string& input, std::size_t beam,
                 std::size_t max_len, bool raw_score,
                 const std::string& out) {
  std::unique_ptr<SequenceModel> model = load_model(ckpt);
  BpeModel bpe = BpeModel::load(bpe_path);
  std::vector<Article> articles = load_corpus(input);
  std::vector<std::string> hyps =
      generate_titles(*model, bpe, articles, beam, max_len, !raw_score);
  emit(out, titles_jsonl(hyps));
  std::cerr << "generated " << hyps.size() << " headlines\n";
  return 0;
}

int run_evaluate(const std::string& refs_path, const std::string& hyps_path,
                 const std::string& out) {
  std::vector<std::string> refs = read_titles(refs_path, "title", "title_hyp");
  std::vector<std::string> hyps = read_titles(hyps_path, "title_hyp", "title");
  if (refs.size() != hyps.size()) {
    throw InputError("evaluate: " + std::to_string(refs.size()) +
                     " references vs " + std::to_string(hyps.size()) +
                     " hypotheses");
  }
  RougeReport report = evaluate_rouge_text(hyps, refs);
  emit(out, rouge_report_json(report).dump(2) + "\n");
  std::cerr << "scored " << report.count << " pairs\n";
  return 0;
}

int run_baseline(const std::string& mode, const std::string& input,
                 const std::string& out) {
  if (mode != "first-sentence") {
    throw ValueError("baseline: unknown mode '" + mode +
                     "' (expected first-sentence)");
  }
  std::vector<Article> articles = load_corpus(input);
  std::vector<std::string> hyps;
  hyps.reserve(articles.size());
  for (const Article& a : articles) hyps.push_back(first_sentence(a.body));
  emit(out, titles_jsonl(hyps));
  std::cerr << "extracted " << hyps.size() << " first sentences\n";
  return 0;
}

int run_pipeline_cmd(const CommonOpts& common, const std::string& corpus,
                     const std::string& workdir) {
  RunConfig cfg = merged_config(common);
  PipelineArtifacts art = run_pipeline(corpus, workdir, cfg, &std::cerr);
  std::cout << rouge_report_json(art.report).dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"abstractive headline generation: tokenize, train, decode, score"};
  app.require_subcommand(1);

  auto* bpe_cmd = app.add_subcommand("train-bpe", "Learn a BPE vocabulary");
  std::string bpe_corpus, bpe_out;
  std::size_t bpe_vocab = 40000;
  bpe_cmd->add_option("--corpus", bpe_corpus, "Article JSONL")->required();
  bpe_cmd->add_option("--vocab-size", bpe_vocab, "Total vocabulary budget");
  bpe_cmd->add_option("--out", bpe_out, "Vocabulary file")->required();

  auto* emb_cmd =
      app.add_subcommand("train-embeddings", "Pre-train token embeddings");
  std::string emb_corpus, emb_bpe, emb_out;
  std::size_t emb_dim = 512, emb_epochs = 5;
  std::uint64_t emb_seed = 1;
  emb_cmd->add_option("--corpus", emb_corpus, "Article JSONL")->required();
  emb_cmd->add_option("--bpe", emb_bpe, "BPE vocabulary file")->required();
  emb_cmd->add_option("--dim", emb_dim, "Embedding width");
  emb_cmd->add_option("--epochs", emb_epochs, "Skip-gram epochs");
  emb_cmd->add_option("--seed", emb_seed, "Random seed");
  emb_cmd->add_option("--out", emb_out, "Embedding file")->required();

  auto* train_cmd = app.add_subcommand("train", "Train a headline model");
  CommonOpts train_common;
  std::string train_corpus, train_bpe_path, train_emb, train_out;
  add_common(train_cmd, train_common, true);
  train_cmd->add_option("--corpus", train_corpus, "Article JSONL")->required();
  train_cmd->add_option("--bpe", train_bpe_path, "BPE vocabulary file")
      ->required();
  train_cmd->add_option("--embeddings", train_emb,
                        "Pre-trained embedding file (omit for random init)");
  train_cmd->add_option("--out", train_out, "Checkpoint path")->required();

  auto* gen_cmd = app.add_subcommand("generate", "Decode headlines");
  std::string gen_ckpt, gen_bpe, gen_input, gen_out;
  std::size_t gen_beam = 10, gen_max_len = 20;
  bool gen_raw = false;
  gen_cmd->add_option("--ckpt", gen_ckpt, "Model checkpoint")->required();
  gen_cmd->add_option("--bpe", gen_bpe, "BPE vocabulary file")->required();
  gen_cmd->add_option("--input", gen_input, "Article JSONL")->required();
  gen_cmd->add_option("--beam", gen_beam, "Beam width (1 = greedy)");
  gen_cmd->add_option("--max-len", gen_max_len, "Generation cap in tokens");
  gen_cmd->add_flag("--raw-score", gen_raw,
                    "Select by raw log-probability, not per-token");
  gen_cmd->add_option("--out", gen_out, "Hypotheses JSONL (default stdout)");

  auto* eval_cmd = app.add_subcommand("evaluate", "Score hypotheses");
  std::string eval_refs, eval_hyps, eval_out;
  eval_cmd->add_option("--refs", eval_refs, "Reference JSONL")->required();
  eval_cmd->add_option("--hyps", eval_hyps, "Hypothesis JSONL")->required();
  eval_cmd->add_option("--out", eval_out, "Report JSON (default stdout)");

  auto* base_cmd = app.add_subcommand("baseline", "Run a baseline");
  std::string base_mode, base_input, base_out;
  base_cmd->add_option("mode", base_mode, "first-sentence")->required();
  base_cmd->add_option("--input", base_input, "Article JSONL")->required();
  base_cmd->add_option("--out", base_out, "Hypotheses JSONL (default stdout)");

  auto* pipe_cmd =
      app.add_subcommand("pipeline", "Filter, split, train, decode, score");
  CommonOpts pipe_common;
  std::string pipe_corpus, pipe_workdir = "pipeline_out";
  add_common(pipe_cmd, pipe_common, true);
  pipe_cmd->add_option("--corpus", pipe_corpus, "Article JSONL")->required();
  pipe_cmd->add_option("--workdir", pipe_workdir, "Artifact directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (bpe_cmd->parsed()) {
      return run_train_bpe(bpe_corpus, bpe_vocab, bpe_out);
    }
    if (emb_cmd->parsed()) {
      return run_train_embeddings(emb_corpus, emb_bpe, emb_dim, emb_epochs,
                                  emb_seed, emb_out);
    }
    if (train_cmd->parsed()) {
      return run_train(train_common, train_corpus, train_bpe_path, train_emb,
                       train_out);
    }
    if (gen_cmd->parsed()) {
      return run_generate(gen_ckpt, gen_bpe, gen_input, gen_beam, gen_max_len,
                          gen_raw, gen_out);
    }
    if (eval_cmd->parsed()) {
      return run_evaluate(eval_refs, eval_hyps, eval_out);
    }
    if (base_cmd->parsed()) {
      return run_baseline(base_mode, base_input, base_out);
    }
    if (pipe_cmd->parsed()) {
      return run_pipeline_cmd(pipe_common, pipe_corpus, pipe_workdir);
    }
  } catch (const headliner::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
