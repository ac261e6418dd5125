#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "detangle/data.hpp"
#include "detangle/model.hpp"

namespace detangle {

struct TrainConfig {
  // Mixing weight: total = (1-w) * response loss + w * attention loss.
  double w = 0.25;
  double learning_rate = 1e-3;
  int epochs = 30;
  int batch_size = 8;
  int m_candidates = 10;
  uint64_t seed = 1;
  int eval_every = 1;  // epochs between evals/checkpoints

  void validate() const;
};

struct LossBreakdown {
  double l_res = 0.0;
  double l_attn = 0.0;
  double total = 0.0;  // always (1-w)*l_res + w*l_attn
};

// Binary cross-entropy on the selection score: -log s for the correct
// candidate, -log(1-s) otherwise. Returns (loss, dloss/ds). Requires s
// strictly inside (0, 1); anything else is a NumericalError.
std::pair<double, double> response_loss(double s, bool is_correct);

// Intrinsic supervision on the self-pair weight: (attn[n] - target)^2 with
// target 0 for the correct candidate (it must link into the context) and 1
// otherwise (it behaves like a new thread start). Only the self-pair
// coordinate receives direct gradient. Returns (loss, dloss/dattn).
std::pair<double, std::vector<double>> attention_loss(std::span<const double> attn,
                                                      bool is_correct);

// Forward-only combined loss of one example: mean BCE and mean attention MSE
// over its m candidates.
LossBreakdown example_loss(const Model& m, const ResponseSelectionExample& ex, double w);

// Same pass with gradient accumulation into `grads`. Gradients are scaled by
// `scale` ((1-w) and w applied internally per loss term).
LossBreakdown example_backward(const Model& m, const ResponseSelectionExample& ex, double w,
                               double scale, ModelParams& grads);

struct SelectionMetrics {
  std::map<int, double> recall_at;
  double mrr = 0.0;
};

// Candidates ranked by score descending, ties broken by candidate index
// ascending. Throws EvalError on empty data.
SelectionMetrics eval_selection(const Model& m, std::span<const ResponseSelectionExample> data,
                                std::span<const int> ks);

struct EpochStat {
  int epoch = 0;
  double l_res = 0.0;
  double l_attn = 0.0;
  double total = 0.0;
  // NaN when no validation data was supplied.
  double val_r1 = 0.0, val_r5 = 0.0, val_mrr = 0.0;
};

struct TrainResult {
  std::vector<EpochStat> log;
  int best_epoch = 0;
  double best_val_r1 = 0.0;
};

// Adam loop over shuffled batches; one forward/backward per candidate of
// each example. Deterministic given (seed, data, cfg). When checkpoint_dir
// is non-empty, writes ckpt-<epoch> at every eval and `best` at the end.
// The model is left at the best-validation-R@1 parameters (final parameters
// when no validation data is given). NaN loss aborts with NumericalError.
TrainResult train(Model& m, std::span<const ResponseSelectionExample> train_data,
                  const TrainConfig& cfg,
                  std::span<const ResponseSelectionExample> val_data = {},
                  const std::string& checkpoint_dir = "");

// Augments every dialogue of the corpus into selection examples (negatives
// drawn from the other dialogues) and trims each context to its most recent
// max_context utterances. Deterministic per seed.
std::vector<ResponseSelectionExample> build_selection_examples(std::span<const Dialogue> corpus,
                                                               int m, int max_context,
                                                               uint64_t seed);

// One sliding-window link-supervision instance: the current utterance plus
// its visible window; gold_pos indexes the true parent among the n context
// rows, n itself meaning self (thread start).
struct LinkExample {
  std::vector<Utterance> context;
  Utterance current;
  int gold_pos = 0;
};

// Windows for every utterance with at least one visible predecessor and an
// in-window gold parent (self-links always qualify). Requires gold links.
std::vector<LinkExample> build_link_examples(std::span<const Dialogue> dialogues, int window);

struct FinetuneResult {
  std::vector<std::pair<int, double>> log;  // (epoch, val accuracy or NaN)
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
};

// Extrinsic supervision: cross-entropy between the attention weights and the
// one-hot gold parent position, trained with the same optimizer. The model
// is left at the best-validation-accuracy parameters.
FinetuneResult finetune_links(Model& m, std::span<const LinkExample> data,
                              const TrainConfig& cfg, std::span<const LinkExample> val_data = {},
                              const std::string& checkpoint_dir = "");

// Fraction of argmax-attention predictions that hit the gold position.
double link_accuracy(const Model& m, std::span<const LinkExample> data);

// First ceil(pct% * count) dialogues in file order.
std::span<const Dialogue> prefix_fraction(std::span<const Dialogue> dialogues, int pct);

std::string format_metric_log(const std::vector<EpochStat>& log);

}  // namespace detangle
