#include "detangle/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <string>

#include "detangle/errors.hpp"
#include "detangle/rng.hpp"
#include "detangle/synth.hpp"

namespace detangle {

void TrainConfig::validate() const {
  if (w < 0.0 || w > 1.0) throw ConfigError("loss weight w must be in [0, 1]");
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (m_candidates < 2) throw ConfigError("m_candidates must be >= 2");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
}

std::pair<double, double> response_loss(double s, bool is_correct) {
  if (!(s > 0.0 && s < 1.0))
    throw NumericalError("selection score " + std::to_string(s) + " outside (0, 1)");
  if (is_correct) return {-std::log(s), -1.0 / s};
  return {-std::log(1.0 - s), 1.0 / (1.0 - s)};
}

std::pair<double, std::vector<double>> attention_loss(std::span<const double> attn,
                                                      bool is_correct) {
  if (attn.empty()) throw DimensionError("attention loss needs a distribution");
  const double target = is_correct ? 0.0 : 1.0;
  const double self_w = attn.back();
  const double diff = self_w - target;
  std::vector<double> grad(attn.size(), 0.0);
  grad.back() = 2.0 * diff;
  return {diff * diff, std::move(grad)};
}

namespace {

void validate_example(const ResponseSelectionExample& ex) {
  if (ex.context.empty()) throw DataError("example with empty context");
  if (ex.candidates.size() < 2) throw DataError("example needs at least 2 candidates");
  if (ex.correct_index < 0 || ex.correct_index >= static_cast<int>(ex.candidates.size()))
    throw DataError("correct_index out of range");
}

LossBreakdown finish(double sum_res, double sum_attn, double count, double w) {
  LossBreakdown bd;
  bd.l_res = sum_res / count;
  bd.l_attn = sum_attn / count;
  bd.total = (1.0 - w) * bd.l_res + w * bd.l_attn;
  return bd;
}

}  // namespace

LossBreakdown example_loss(const Model& m, const ResponseSelectionExample& ex, double w) {
  validate_example(ex);
  double sum_res = 0.0, sum_attn = 0.0;
  for (int k = 0; k < static_cast<int>(ex.candidates.size()); ++k) {
    const bool correct = k == ex.correct_index;
    const Trace tr = forward(m, ex.context, ex.candidates[static_cast<size_t>(k)]);
    sum_res += response_loss(tr.score, correct).first;
    sum_attn += attention_loss(tr.attn, correct).first;
  }
  return finish(sum_res, sum_attn, static_cast<double>(ex.candidates.size()), w);
}

LossBreakdown example_backward(const Model& m, const ResponseSelectionExample& ex, double w,
                               double scale, ModelParams& grads) {
  validate_example(ex);
  double sum_res = 0.0, sum_attn = 0.0;
  for (int k = 0; k < static_cast<int>(ex.candidates.size()); ++k) {
    const bool correct = k == ex.correct_index;
    const Trace tr = forward(m, ex.context, ex.candidates[static_cast<size_t>(k)]);
    const auto [lres, dres] = response_loss(tr.score, correct);
    auto [lattn, dattn] = attention_loss(tr.attn, correct);
    sum_res += lres;
    sum_attn += lattn;
    const double dscore = scale * (1.0 - w) * dres;
    for (double& g : dattn) g *= scale * w;
    backward(m, tr, dscore, w == 0.0 ? std::span<const double>{} : std::span<const double>(dattn),
             {}, grads);
  }
  return finish(sum_res, sum_attn, static_cast<double>(ex.candidates.size()), w);
}

SelectionMetrics eval_selection(const Model& m, std::span<const ResponseSelectionExample> data,
                                std::span<const int> ks) {
  if (data.empty()) throw EvalError("cannot evaluate selection on empty data");
  SelectionMetrics out;
  for (int k : ks) {
    if (k < 1) throw EvalError("recall cutoff must be >= 1");
    out.recall_at[k] = 0.0;
  }
  for (const ResponseSelectionExample& ex : data) {
    validate_example(ex);
    for (int k : ks)
      if (k > static_cast<int>(ex.candidates.size()))
        throw EvalError("recall cutoff " + std::to_string(k) + " exceeds candidate count " +
                        std::to_string(ex.candidates.size()));
    std::vector<double> scores;
    scores.reserve(ex.candidates.size());
    for (const Utterance& c : ex.candidates) scores.push_back(forward(m, ex.context, c).score);
    // Rank of the correct candidate: 1 + better-scored + equal-scored with a
    // lower index.
    const double sc = scores[static_cast<size_t>(ex.correct_index)];
    int rank = 1;
    for (int k = 0; k < static_cast<int>(scores.size()); ++k) {
      if (k == ex.correct_index) continue;
      const double s = scores[static_cast<size_t>(k)];
      if (s > sc || (s == sc && k < ex.correct_index)) ++rank;
    }
    for (int k : ks)
      if (rank <= k) out.recall_at[k] += 1.0;
    out.mrr += 1.0 / rank;
  }
  const double n = static_cast<double>(data.size());
  for (auto& [k, v] : out.recall_at) v /= n;
  out.mrr /= n;
  return out;
}

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

struct AdamSlots {
  std::vector<Matrix> m1, m2;
  int64_t t = 0;
};

AdamSlots make_adam_slots(const std::vector<TensorRef>& refs) {
  AdamSlots s;
  for (const TensorRef& r : refs) {
    s.m1.emplace_back(r.tensor->rows, r.tensor->cols);
    s.m2.emplace_back(r.tensor->rows, r.tensor->cols);
  }
  return s;
}

void adam_step(std::vector<TensorRef>& params, const std::vector<TensorRef>& grads,
               AdamSlots& slots, double lr) {
  ++slots.t;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(slots.t));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(slots.t));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].tensor->data;
    const auto& g = grads[i].tensor->data;
    auto& m1 = slots.m1[i].data;
    auto& m2 = slots.m2[i].data;
    for (size_t j = 0; j < p.size(); ++j) {
      m1[j] = kAdamBeta1 * m1[j] + (1.0 - kAdamBeta1) * g[j];
      m2[j] = kAdamBeta2 * m2[j] + (1.0 - kAdamBeta2) * g[j] * g[j];
      p[j] -= lr * (m1[j] / bc1) / (std::sqrt(m2[j] / bc2) + kAdamEps);
    }
  }
}

void zero_all(std::vector<TensorRef>& refs) {
  for (auto& r : refs) r.tensor->zero();
}

std::string ckpt_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

double nan_value() { return std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

TrainResult train(Model& model, std::span<const ResponseSelectionExample> train_data,
                  const TrainConfig& cfg, std::span<const ResponseSelectionExample> val_data,
                  const std::string& checkpoint_dir) {
  cfg.validate();
  if (train_data.empty()) throw DataError("no training examples");
  for (const auto& ex : train_data) {
    validate_example(ex);
    if (static_cast<int>(ex.context.size()) > model.cfg.max_context)
      throw CapacityError("training example context exceeds max_context");
  }
  if (!checkpoint_dir.empty()) std::filesystem::create_directories(checkpoint_dir);

  auto refs = tensor_refs(model.params);
  ModelParams grads = zeros_like(model.params);
  auto grefs = tensor_refs(grads);
  AdamSlots adam = make_adam_slots(refs);
  Rng rng(cfg.seed);

  std::vector<size_t> order(train_data.size());
  std::iota(order.begin(), order.end(), 0);

  // Clamp eval cutoffs to the smallest candidate pool in the validation set.
  std::vector<int> ks{1, 5};
  if (!val_data.empty()) {
    int min_m = std::numeric_limits<int>::max();
    for (const auto& ex : val_data) min_m = std::min(min_m, static_cast<int>(ex.candidates.size()));
    for (int& k : ks) k = std::min(k, min_m);
  }

  TrainResult res;
  ModelParams best_params = model.params;
  double best_r1 = -1.0;
  int best_epoch = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double ep_res = 0.0, ep_attn = 0.0;
    double ep_cands = 0.0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      double n_cand = 0.0;
      for (size_t i = start; i < end; ++i)
        n_cand += static_cast<double>(train_data[order[i]].candidates.size());
      zero_all(grefs);
      double sum_res = 0.0, sum_attn = 0.0;
      for (size_t i = start; i < end; ++i) {
        const auto& ex = train_data[order[i]];
        const LossBreakdown bd =
            example_backward(model, ex, cfg.w, 1.0 / n_cand, grads);
        sum_res += bd.l_res * static_cast<double>(ex.candidates.size());
        sum_attn += bd.l_attn * static_cast<double>(ex.candidates.size());
      }
      const LossBreakdown batch = finish(sum_res, sum_attn, n_cand, cfg.w);
      if (!std::isfinite(batch.total)) {
        std::string examples;
        for (size_t i = start; i < end; ++i)
          examples += (examples.empty() ? "" : ",") + std::to_string(order[i]);
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) +
                             ", batch starting at " + std::to_string(start) +
                             " (example indices " + examples + ")");
      }
      adam_step(refs, grefs, adam, cfg.learning_rate);
      ep_res += sum_res;
      ep_attn += sum_attn;
      ep_cands += n_cand;
    }

    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
      EpochStat st;
      st.epoch = epoch;
      const LossBreakdown ep = finish(ep_res, ep_attn, ep_cands, cfg.w);
      st.l_res = ep.l_res;
      st.l_attn = ep.l_attn;
      st.total = ep.total;
      if (!val_data.empty()) {
        const SelectionMetrics vm = eval_selection(model, val_data, ks);
        st.val_r1 = vm.recall_at.at(ks[0]);
        st.val_r5 = vm.recall_at.at(ks[1]);
        st.val_mrr = vm.mrr;
        if (st.val_r1 > best_r1) {
          best_r1 = st.val_r1;
          best_epoch = epoch;
          best_params = model.params;
        }
      } else {
        st.val_r1 = st.val_r5 = st.val_mrr = nan_value();
      }
      if (!checkpoint_dir.empty())
        save_model(ckpt_path(checkpoint_dir, "ckpt-" + std::to_string(epoch)), model);
      res.log.push_back(st);
    }
  }

  if (!val_data.empty()) {
    model.params = best_params;
    res.best_epoch = best_epoch;
    res.best_val_r1 = best_r1;
  } else {
    res.best_epoch = cfg.epochs;
    res.best_val_r1 = nan_value();
  }
  if (!checkpoint_dir.empty()) save_model(ckpt_path(checkpoint_dir, "best"), model);
  return res;
}

std::vector<ResponseSelectionExample> build_selection_examples(std::span<const Dialogue> corpus,
                                                               int m, int max_context,
                                                               uint64_t seed) {
  if (max_context < 1) throw ConfigError("max_context must be >= 1");
  std::vector<ResponseSelectionExample> out;
  for (size_t di = 0; di < corpus.size(); ++di) {
    const Dialogue& d = corpus[di];
    if (d.size() < 2) continue;
    Rng rng(derive_seed(seed, static_cast<uint64_t>(di)));
    auto examples = augment_dialogue(d, m, corpus, rng);
    for (auto& ex : examples) {
      if (static_cast<int>(ex.context.size()) > max_context)
        ex.context.erase(ex.context.begin(),
                         ex.context.end() - static_cast<std::ptrdiff_t>(max_context));
      out.push_back(std::move(ex));
    }
  }
  return out;
}

std::vector<LinkExample> build_link_examples(std::span<const Dialogue> dialogues, int window) {
  if (window < 1) throw ConfigError("window must be >= 1");
  std::vector<LinkExample> out;
  for (const Dialogue& d : dialogues) {
    if (!d.gold_links) throw DataError("link supervision needs gold links");
    for (int t = 1; t < d.size(); ++t) {
      const int lo = std::max(0, t - window);
      const int n = t - lo;
      int gold_pos = -1;
      for (const ReplyLink& l : *d.gold_links) {
        if (l.child != t) continue;
        if (l.parent == t) {
          gold_pos = n;  // self: new thread start
          break;
        }
        if (l.parent >= lo) {
          gold_pos = l.parent - lo;
          break;
        }
      }
      if (gold_pos < 0) continue;  // gold parent scrolled out of the window
      LinkExample ex;
      ex.context.assign(d.utterances.begin() + lo, d.utterances.begin() + t);
      ex.current = d.utterances[static_cast<size_t>(t)];
      ex.gold_pos = gold_pos;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

namespace {

// Stable cross-entropy on the attention logits; gradient arrives at the
// logits directly as attn - onehot(gold).
double link_ce_backward(const Model& model, const LinkExample& ex, double scale,
                        ModelParams* grads) {
  if (ex.gold_pos < 0 || ex.gold_pos > static_cast<int>(ex.context.size()))
    throw DataError("gold position outside window");
  const Trace tr = forward(model, ex.context, ex.current);
  const auto& v = tr.attn_logits;
  double mx = *std::max_element(v.begin(), v.end());
  double lse = 0.0;
  for (double x : v) lse += std::exp(x - mx);
  lse = mx + std::log(lse);
  const double loss = lse - v[static_cast<size_t>(ex.gold_pos)];
  if (grads) {
    std::vector<double> dlogits(tr.attn.begin(), tr.attn.end());
    dlogits[static_cast<size_t>(ex.gold_pos)] -= 1.0;
    for (double& g : dlogits) g *= scale;
    backward(model, tr, 0.0, {}, dlogits, *grads);
  }
  return loss;
}

int argmax_lowest(std::span<const double> v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[static_cast<size_t>(i)] > v[static_cast<size_t>(best)]) best = i;
  return best;
}

}  // namespace

double link_accuracy(const Model& model, std::span<const LinkExample> data) {
  if (data.empty()) throw EvalError("cannot evaluate links on empty data");
  double hits = 0.0;
  for (const LinkExample& ex : data) {
    const Trace tr = forward(model, ex.context, ex.current);
    if (argmax_lowest(tr.attn) == ex.gold_pos) hits += 1.0;
  }
  return hits / static_cast<double>(data.size());
}

FinetuneResult finetune_links(Model& model, std::span<const LinkExample> data,
                              const TrainConfig& cfg, std::span<const LinkExample> val_data,
                              const std::string& checkpoint_dir) {
  cfg.validate();
  if (model.cfg.uniform_attention)
    throw ConfigError("cannot finetune attention on a uniform-attention model");
  if (data.empty()) throw DataError("no link examples");
  for (const auto& ex : data)
    if (static_cast<int>(ex.context.size()) > model.cfg.max_context)
      throw CapacityError("link example window exceeds max_context");
  if (!checkpoint_dir.empty()) std::filesystem::create_directories(checkpoint_dir);

  auto refs = tensor_refs(model.params);
  ModelParams grads = zeros_like(model.params);
  auto grefs = tensor_refs(grads);
  AdamSlots adam = make_adam_slots(refs);
  Rng rng(cfg.seed);

  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  FinetuneResult res;
  ModelParams best_params = model.params;
  double best_acc = -1.0;
  int best_epoch = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      zero_all(grefs);
      double sum = 0.0;
      for (size_t i = start; i < end; ++i)
        sum += link_ce_backward(model, data[order[i]], 1.0 / static_cast<double>(end - start),
                                &grads);
      if (!std::isfinite(sum))
        throw NumericalError("non-finite link loss at epoch " + std::to_string(epoch));
      adam_step(refs, grefs, adam, cfg.learning_rate);
    }
    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
      double acc = nan_value();
      if (!val_data.empty()) {
        acc = link_accuracy(model, val_data);
        if (acc > best_acc) {
          best_acc = acc;
          best_epoch = epoch;
          best_params = model.params;
        }
      }
      if (!checkpoint_dir.empty())
        save_model(ckpt_path(checkpoint_dir, "ckpt-" + std::to_string(epoch)), model);
      res.log.emplace_back(epoch, acc);
    }
  }

  if (!val_data.empty()) {
    model.params = best_params;
    res.best_epoch = best_epoch;
    res.best_val_accuracy = best_acc;
  } else {
    res.best_epoch = cfg.epochs;
    res.best_val_accuracy = nan_value();
  }
  if (!checkpoint_dir.empty()) save_model(ckpt_path(checkpoint_dir, "best"), model);
  return res;
}

std::span<const Dialogue> prefix_fraction(std::span<const Dialogue> dialogues, int pct) {
  if (pct < 1 || pct > 100) throw ConfigError("data percentage must be in [1, 100]");
  const size_t count =
      (dialogues.size() * static_cast<size_t>(pct) + 99) / 100;  // ceil
  return dialogues.subspan(0, count);
}

std::string format_metric_log(const std::vector<EpochStat>& log) {
  std::string out;
  char buf[160];
  for (const EpochStat& st : log) {
    std::snprintf(buf, sizeof(buf), "%d\t%.6f\t%.6f\t%.4f\t%.4f\t%.4f\n", st.epoch, st.l_res,
                  st.l_attn, st.val_r1, st.val_r5, st.val_mrr);
    out += buf;
  }
  return out;
}

}  // namespace detangle
