// detangle: train an entangled-response-selection model with intrinsic
// attention supervision, then read reply-to links out of its attention to
// split chat logs into threads.
//
// Exit codes: 0 success, 1 usage/config error, 2 data or integrity error,
// 3 numerical abort.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "detangle/data.hpp"
#include "detangle/disentangle.hpp"
#include "detangle/errors.hpp"
#include "detangle/metrics.hpp"
#include "detangle/model.hpp"
#include "detangle/refcheck.hpp"
#include "detangle/rng.hpp"
#include "detangle/synth.hpp"
#include "detangle/train.hpp"

namespace {

using namespace detangle;

struct GenerateArgs {
  GenConfig cfg;
  std::string out;
  int count = 20;
};

struct ModelArgs {
  int vocab = 0;  // 0: infer from data
  int embed_dim = 32;
  int model_dim = 32;
  int n_heads = 4;
  int max_context = 12;
  int ff_hidden = 32;
  int attn_hidden = 16;
  int scorer_hidden = 16;
  bool uniform_pool = false;
};

struct TrainArgs {
  std::string data, val, out;
  double val_frac = 0.2;
  ModelArgs model;
  TrainConfig cfg;
  uint64_t seed = 1;
};

struct FinetuneArgs {
  std::string model_path, data, val, out;
  bool scratch = false;
  ModelArgs model;
  int data_pct = 100;
  int window = 8;
  double val_frac = 0.2;
  TrainConfig cfg;
  uint64_t seed = 1;
};

struct DisentangleArgs {
  std::string model_path, in, links, partition;
  DisentangleConfig cfg;
};

struct EvalArgs {
  std::string gold, links;
};

struct SelftestArgs {
  uint64_t seed = 20240601;
  int grad_seeds = 5;
  int random_pairs = 200;
};

int infer_vocab(std::span<const Dialogue> dialogues, int requested) {
  int max_tok = -1;
  for (const Dialogue& d : dialogues)
    for (const Utterance& u : d.utterances)
      for (int t : u.tokens) max_tok = std::max(max_tok, t);
  if (requested == 0) {
    if (max_tok < 0) throw DataError("cannot infer vocabulary from empty data");
    return max_tok + 1;
  }
  if (requested <= max_tok)
    throw ConfigError("vocab " + std::to_string(requested) + " too small for token id " +
                      std::to_string(max_tok));
  return requested;
}

ModelConfig to_model_config(const ModelArgs& a, int vocab, uint64_t seed) {
  ModelConfig cfg;
  cfg.vocab_size = vocab;
  cfg.embed_dim = a.embed_dim;
  cfg.model_dim = a.model_dim;
  cfg.n_heads = a.n_heads;
  cfg.max_context = a.max_context;
  cfg.ff_hidden = a.ff_hidden;
  cfg.attn_mlp_hidden = a.attn_hidden;
  cfg.scorer_mlp_hidden = a.scorer_hidden;
  cfg.uniform_attention = a.uniform_pool;
  cfg.seed = seed;
  return cfg;
}

void add_model_flags(CLI::App* cmd, ModelArgs& m) {
  cmd->add_option("--vocab", m.vocab, "Vocabulary size (0: infer from data)");
  cmd->add_option("--embed-dim", m.embed_dim, "Token embedding width");
  cmd->add_option("--model-dim", m.model_dim, "Pair-vector width");
  cmd->add_option("--heads", m.n_heads, "Attention heads in the context layer");
  cmd->add_option("--max-context", m.max_context, "Longest visible context");
  cmd->add_option("--ff-hidden", m.ff_hidden, "Context-layer feed-forward width");
  cmd->add_option("--attn-hidden", m.attn_hidden, "Attention-scorer hidden width");
  cmd->add_option("--scorer-hidden", m.scorer_hidden, "Selection-scorer hidden width");
  cmd->add_flag("--uniform-pool", m.uniform_pool,
                "Replace attention pooling with uniform averaging (ablation)");
}

// Deterministic sub-streams of the user seed, one per purpose.
enum SeedStream : uint64_t { kSeedModel = 1, kSeedTrainData = 2, kSeedValData = 3, kSeedLoop = 4 };

int cmd_generate(const GenerateArgs& a) {
  a.cfg.validate();
  const auto corpus = generate_corpus(a.cfg, a.count);
  save_dialogues(corpus, a.out);
  std::cerr << "wrote " << corpus.size() << " dialogues to " << a.out << "\n";
  return 0;
}

int cmd_train(const TrainArgs& a) {
  const auto all = load_dialogues(a.data);
  if (all.empty()) throw DataError("no dialogues in " + a.data);

  std::vector<Dialogue> train_d, val_d;
  if (!a.val.empty()) {
    train_d = all;
    val_d = load_dialogues(a.val);
  } else {
    if (a.val_frac < 0.0 || a.val_frac >= 1.0)
      throw ConfigError("val fraction must be in [0, 1)");
    const size_t n_val = static_cast<size_t>(a.val_frac * static_cast<double>(all.size()));
    train_d.assign(all.begin(), all.end() - static_cast<std::ptrdiff_t>(n_val));
    val_d.assign(all.end() - static_cast<std::ptrdiff_t>(n_val), all.end());
  }

  const int vocab = infer_vocab(all, a.model.vocab);
  Model model = init_model(to_model_config(a.model, vocab, derive_seed(a.seed, kSeedModel)));

  const auto train_ex = build_selection_examples(train_d, a.cfg.m_candidates,
                                                 model.cfg.max_context,
                                                 derive_seed(a.seed, kSeedTrainData));
  std::vector<ResponseSelectionExample> val_ex;
  if (!val_d.empty())
    val_ex = build_selection_examples(val_d, a.cfg.m_candidates, model.cfg.max_context,
                                      derive_seed(a.seed, kSeedValData));

  TrainConfig cfg = a.cfg;
  cfg.seed = derive_seed(a.seed, kSeedLoop);
  std::cerr << "training on " << train_ex.size() << " examples (" << train_d.size()
            << " dialogues), validating on " << val_ex.size() << "\n";
  const TrainResult res = train(model, train_ex, cfg, val_ex, a.out);

  const std::string log = format_metric_log(res.log);
  std::cout << log;
  std::ofstream os(std::filesystem::path(a.out) / "metrics.tsv");
  if (!os) throw IoError("cannot write metric log under " + a.out);
  os << log;
  std::cerr << "best epoch " << res.best_epoch << " (validation R@1 " << res.best_val_r1
            << "); checkpoints in " << a.out << "\n";
  return 0;
}

int cmd_finetune(const FinetuneArgs& a) {
  const auto all = load_dialogues(a.data);
  if (all.empty()) throw DataError("no dialogues in " + a.data);

  std::vector<Dialogue> pool, val_d;
  if (!a.val.empty()) {
    pool = all;
    val_d = load_dialogues(a.val);
  } else {
    const size_t n_val = static_cast<size_t>(a.val_frac * static_cast<double>(all.size()));
    pool.assign(all.begin(), all.end() - static_cast<std::ptrdiff_t>(n_val));
    val_d.assign(all.end() - static_cast<std::ptrdiff_t>(n_val), all.end());
  }
  const auto subset = prefix_fraction(pool, a.data_pct);
  std::vector<Dialogue> train_d(subset.begin(), subset.end());

  Model model = a.scratch
                    ? init_model(to_model_config(a.model, infer_vocab(all, a.model.vocab),
                                                 derive_seed(a.seed, kSeedModel)))
                    : load_model(a.model_path);
  if (a.window > model.cfg.max_context)
    throw ConfigError("window exceeds the model's max_context");

  const auto train_w = build_link_examples(train_d, a.window);
  std::vector<LinkExample> val_w;
  if (!val_d.empty()) val_w = build_link_examples(val_d, a.window);

  TrainConfig cfg = a.cfg;
  cfg.seed = derive_seed(a.seed, kSeedLoop);
  std::cerr << "finetuning on " << train_w.size() << " link windows from " << train_d.size()
            << " dialogues (" << a.data_pct << "%), validating on " << val_w.size() << "\n";
  const FinetuneResult res = finetune_links(model, train_w, cfg, val_w, a.out);
  for (const auto& [epoch, acc] : res.log) std::cout << epoch << '\t' << acc << '\n';
  std::cerr << "best epoch " << res.best_epoch << " (validation link accuracy "
            << res.best_val_accuracy << "); checkpoints in " << a.out << "\n";
  return 0;
}

int cmd_disentangle(const DisentangleArgs& a) {
  const Model model = load_model(a.model_path);
  const auto dialogues = load_dialogues(a.in);
  if (dialogues.empty()) throw DataError("no dialogues in " + a.in);

  std::vector<std::vector<ReplyLink>> links;
  std::vector<ThreadPartition> partitions;
  for (const Dialogue& d : dialogues) {
    // Predictions see bare utterances only; gold annotations never reach the
    // model.
    const auto res = disentangle(model, d.utterances, a.cfg);
    links.push_back(res.links);
    partitions.push_back(res.partition);
  }
  save_corpus_links(links, a.links);
  if (!a.partition.empty()) {
    std::ofstream os(a.partition, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + a.partition);
    for (size_t i = 0; i < partitions.size(); ++i) {
      if (i) os << '\n';
      for (const auto& cluster : partitions[i].clusters) {
        for (size_t j = 0; j < cluster.size(); ++j) {
          if (j) os << ' ';
          os << cluster[j];
        }
        os << '\n';
      }
    }
  }
  std::cerr << "predicted links for " << dialogues.size() << " dialogues into " << a.links
            << "\n";
  return 0;
}

int cmd_eval(const EvalArgs& a) {
  const auto gold = load_dialogues(a.gold);
  const auto pred = load_corpus_links(a.links);
  const CorpusScores s = evaluate_corpus(gold, pred);
  std::cout << format_score_row(s) << "\n";
  std::cerr << "columns: VI ARI cluster-P cluster-R cluster-F1 link-P link-R link-F1 (x100, "
               "macro-averaged over "
            << s.dialogues << " dialogues)\n";
  std::cerr << "link recall counts every gold pair (multi-parent gold included): "
            << s.gold_link_count << " pairs\n";
  return 0;
}

int cmd_selftest(const SelftestArgs& a) {
  const auto metric = refcheck::run_metric_checks(a.seed, a.random_pairs);
  std::cout << "metric oracle agreement: " << metric.checks - metric.failures << "/"
            << metric.checks << " checks passed\n";
  for (const auto& m : metric.messages) std::cout << "  " << m << "\n";
  const auto grad = refcheck::run_gradient_checks(a.seed, a.grad_seeds);
  std::cout << "gradient finite-difference agreement: " << grad.checks - grad.failures << "/"
            << grad.checks << " checks passed\n";
  for (const auto& m : grad.messages) std::cout << "  " << m << "\n";
  if (!metric.ok() || !grad.ok()) {
    std::cout << "SELFTEST FAILED\n";
    return 3;
  }
  std::cout << "selftest passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"entangled response selection and zero-shot dialogue disentanglement"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "0.1.0");

  GenerateArgs gen;
  auto* cgen = app.add_subcommand("generate", "Generate synthetic entangled dialogues");
  cgen->add_option("--out", gen.out, "Output dialogue file")->required();
  cgen->add_option("--count", gen.count, "Number of dialogues");
  cgen->add_option("--threads", gen.cfg.n_threads, "Threads per dialogue");
  cgen->add_option("--utt-min", gen.cfg.utterances_min, "Min utterances per thread");
  cgen->add_option("--utt-max", gen.cfg.utterances_max, "Max utterances per thread");
  cgen->add_option("--vocab", gen.cfg.vocab_size, "Vocabulary size");
  cgen->add_option("--topic-tokens", gen.cfg.topic_tokens_per_thread, "Topic tokens per thread");
  cgen->add_option("--speakers-per-thread", gen.cfg.speakers_per_thread,
                   "Speakers per thread");
  cgen->add_option("--purity", gen.cfg.topic_purity, "Probability of drawing on-topic tokens");
  cgen->add_option("--tok-min", gen.cfg.tokens_min, "Min content tokens per utterance");
  cgen->add_option("--tok-max", gen.cfg.tokens_max, "Max content tokens per utterance");
  cgen->add_option("--seed", gen.cfg.seed, "Master seed");
  cgen->set_config("--config", "", "Flat key=value config file; flags override it");

  TrainArgs tr;
  auto* ctrain = app.add_subcommand("train", "Self-supervised response-selection training");
  ctrain->add_option("--data", tr.data, "Training dialogue file")->required();
  ctrain->add_option("--out", tr.out, "Checkpoint directory")->required();
  ctrain->add_option("--val", tr.val, "Validation dialogue file (default: split from --data)");
  ctrain->add_option("--val-frac", tr.val_frac, "Fraction of dialogues held out for validation");
  ctrain->add_option("--w", tr.cfg.w, "Attention-loss weight in [0,1]");
  ctrain->add_option("--lr", tr.cfg.learning_rate, "Learning rate");
  ctrain->add_option("--epochs", tr.cfg.epochs, "Training epochs");
  ctrain->add_option("--batch", tr.cfg.batch_size, "Examples per optimizer step");
  ctrain->add_option("--m", tr.cfg.m_candidates, "Candidates per example");
  ctrain->add_option("--eval-every", tr.cfg.eval_every, "Epochs between evals/checkpoints");
  ctrain->add_option("--seed", tr.seed, "Master seed");
  add_model_flags(ctrain, tr.model);
  ctrain->set_config("--config", "", "Flat key=value config file; flags override it");

  FinetuneArgs ft;
  auto* cft = app.add_subcommand("finetune", "Supervise attention with labeled reply-to links");
  cft->add_option("--model", ft.model_path, "Pretrained checkpoint to start from");
  cft->add_flag("--scratch", ft.scratch, "Start from random init instead of --model");
  cft->add_option("--data", ft.data, "Annotated dialogue file")->required();
  cft->add_option("--out", ft.out, "Checkpoint directory")->required();
  cft->add_option("--val", ft.val, "Validation dialogue file (default: split from --data)");
  cft->add_option("--val-frac", ft.val_frac, "Fraction of dialogues held out for validation");
  cft->add_option("--data-pct", ft.data_pct, "Use the first N% of dialogues (1..100)");
  cft->add_option("--window", ft.window, "Visible predecessors per utterance");
  cft->add_option("--lr", ft.cfg.learning_rate, "Learning rate");
  cft->add_option("--epochs", ft.cfg.epochs, "Finetuning epochs");
  cft->add_option("--batch", ft.cfg.batch_size, "Windows per optimizer step");
  cft->add_option("--eval-every", ft.cfg.eval_every, "Epochs between evals/checkpoints");
  cft->add_option("--seed", ft.seed, "Master seed");
  add_model_flags(cft, ft.model);
  cft->set_config("--config", "", "Flat key=value config file; flags override it");

  DisentangleArgs dis;
  auto* cdis = app.add_subcommand("disentangle", "Predict reply-to links and split threads");
  cdis->add_option("--model", dis.model_path, "Trained checkpoint")->required();
  cdis->add_option("--in", dis.in, "Dialogue file to disentangle")->required();
  cdis->add_option("--links", dis.links, "Output link file")->required();
  cdis->add_option("--partition", dis.partition, "Optional output partition file");
  cdis->add_option("--window", dis.cfg.window, "Visible predecessors per utterance");
  cdis->add_option("--batch", dis.cfg.batch, "Predictions per work unit");
  cdis->add_option("--jobs", dis.cfg.jobs, "Worker threads");

  EvalArgs ev;
  auto* ceval = app.add_subcommand("eval", "Score predicted links against gold annotations");
  ceval->add_option("--gold", ev.gold, "Annotated dialogue file")->required();
  ceval->add_option("--links", ev.links, "Predicted link file")->required();

  SelftestArgs st;
  auto* cself = app.add_subcommand("selftest", "Gradient and metric oracle self-checks");
  cself->add_option("--seed", st.seed, "Seed for randomized checks");
  cself->add_option("--grad-seeds", st.grad_seeds, "Model seeds for the gradient check");
  cself->add_option("--random-pairs", st.random_pairs, "Random partition pairs to compare");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (cgen->parsed()) return cmd_generate(gen);
    if (ctrain->parsed()) return cmd_train(tr);
    if (cft->parsed()) {
      if (!ft.scratch && ft.model_path.empty())
        throw ConfigError("finetune needs --model or --scratch");
      return cmd_finetune(ft);
    }
    if (cdis->parsed()) return cmd_disentangle(dis);
    if (ceval->parsed()) return cmd_eval(ev);
    if (cself->parsed()) return cmd_selftest(st);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::runtime_error& e) {
    // parse, integrity, data, vocab, dimension, capacity, eval, io
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
