#include "detangle/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "detangle/errors.hpp"

namespace detangle {

namespace {

// element id -> cluster index, verifying both partitions cover the same set.
std::pair<std::map<int, int>, std::map<int, int>> aligned_assignments(
    const ThreadPartition& gold, const ThreadPartition& pred) {
  std::map<int, int> ga, pa;
  for (size_t c = 0; c < gold.clusters.size(); ++c)
    for (int e : gold.clusters[c]) {
      if (!ga.emplace(e, static_cast<int>(c)).second)
        throw EvalError("gold partition repeats element " + std::to_string(e));
    }
  for (size_t c = 0; c < pred.clusters.size(); ++c)
    for (int e : pred.clusters[c]) {
      if (!pa.emplace(e, static_cast<int>(c)).second)
        throw EvalError("predicted partition repeats element " + std::to_string(e));
    }
  if (ga.size() != pa.size())
    throw EvalError("partitions cover different element counts");
  for (const auto& [e, _] : ga)
    if (!pa.count(e)) throw EvalError("partitions cover different element sets");
  if (ga.empty()) throw EvalError("cannot compare empty partitions");
  return {std::move(ga), std::move(pa)};
}

std::map<std::pair<int, int>, int> contingency(const std::map<int, int>& ga,
                                               const std::map<int, int>& pa) {
  std::map<std::pair<int, int>, int> joint;
  for (const auto& [e, g] : ga) ++joint[{g, pa.at(e)}];
  return joint;
}

double comb2(double x) { return x * (x - 1.0) / 2.0; }

double percent_f1(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

}  // namespace

VariationOfInformation variation_of_information(const ThreadPartition& gold,
                                                const ThreadPartition& pred) {
  const auto [ga, pa] = aligned_assignments(gold, pred);
  const double n = static_cast<double>(ga.size());
  const auto joint = contingency(ga, pa);

  std::map<int, int> gsize, psize;
  for (const auto& [e, g] : ga) ++gsize[g];
  for (const auto& [e, p] : pa) ++psize[p];

  double h_gold_given_pred = 0.0, h_pred_given_gold = 0.0;
  for (const auto& [gp, cnt] : joint) {
    const double pij = cnt / n;
    const double pg = gsize.at(gp.first) / n;
    const double pp = psize.at(gp.second) / n;
    h_gold_given_pred -= pij * std::log2(pij / pp);
    h_pred_given_gold -= pij * std::log2(pij / pg);
  }
  VariationOfInformation vi;
  vi.raw_bits = h_gold_given_pred + h_pred_given_gold;
  vi.scaled = n < 2.0 ? 100.0 : 100.0 * (1.0 - vi.raw_bits / std::log2(n));
  return vi;
}

double adjusted_rand_index(const ThreadPartition& gold, const ThreadPartition& pred) {
  const auto [ga, pa] = aligned_assignments(gold, pred);
  const double n = static_cast<double>(ga.size());
  const auto joint = contingency(ga, pa);

  double sum_ij = 0.0;
  for (const auto& [gp, cnt] : joint) sum_ij += comb2(cnt);
  double sum_g = 0.0, sum_p = 0.0;
  std::map<int, int> gsize, psize;
  for (const auto& [e, g] : ga) ++gsize[g];
  for (const auto& [e, p] : pa) ++psize[p];
  for (const auto& [g, cnt] : gsize) sum_g += comb2(cnt);
  for (const auto& [p, cnt] : psize) sum_p += comb2(cnt);

  const double pairs = comb2(n);
  if (pairs == 0.0) return 1.0;  // a single element: both partitions are {{e}}
  const double expected = sum_g * sum_p / pairs;
  const double maximum = 0.5 * (sum_g + sum_p);
  if (maximum == expected) return 1.0;  // both trivial, hence identical
  return (sum_ij - expected) / (maximum - expected);
}

Prf cluster_prf(const ThreadPartition& gold, const ThreadPartition& pred) {
  aligned_assignments(gold, pred);  // element-set check
  std::set<std::vector<int>> gold_sets;
  for (auto c : gold.clusters) {
    std::sort(c.begin(), c.end());
    gold_sets.insert(std::move(c));
  }
  int correct = 0;
  for (auto c : pred.clusters) {
    std::sort(c.begin(), c.end());
    if (gold_sets.count(c)) ++correct;
  }
  Prf out;
  out.p = 100.0 * correct / static_cast<double>(pred.clusters.size());
  out.r = 100.0 * correct / static_cast<double>(gold.clusters.size());
  out.f1 = percent_f1(out.p, out.r);
  return out;
}

Prf link_prf(std::span<const ReplyLink> gold, std::span<const ReplyLink> pred) {
  if (gold.empty() || pred.empty()) throw EvalError("cannot score empty link sets");
  std::set<std::pair<int, int>> gold_pairs;
  std::set<int> gold_children;
  for (const ReplyLink& l : gold) {
    gold_pairs.emplace(l.child, l.parent);
    gold_children.insert(l.child);
  }
  std::set<int> pred_children;
  for (const ReplyLink& l : pred) {
    if (!pred_children.insert(l.child).second)
      throw EvalError("prediction carries two links for utterance " + std::to_string(l.child));
    if (!gold_children.count(l.child))
      throw EvalError("predicted link for utterance " + std::to_string(l.child) +
                      " which has no gold link");
  }
  for (int c : gold_children)
    if (!pred_children.count(c))
      throw EvalError("missing predicted link for utterance " + std::to_string(c));

  int hits = 0;
  for (const ReplyLink& l : pred)
    if (gold_pairs.count({l.child, l.parent})) ++hits;
  Prf out;
  out.p = 100.0 * hits / static_cast<double>(pred.size());
  out.r = 100.0 * hits / static_cast<double>(gold_pairs.size());
  out.f1 = percent_f1(out.p, out.r);
  return out;
}

double entropy_nats(std::span<const double> dist) {
  double h = 0.0;
  for (double p : dist) {
    if (p < 0.0) throw EvalError("negative probability in distribution");
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

EntropyReport attention_entropy_report(const Model& m,
                                       std::span<const ResponseSelectionExample> examples) {
  if (examples.empty()) throw EvalError("cannot report entropy on empty data");
  EntropyReport rep;
  double sum_c = 0.0, sum_i = 0.0;
  for (const ResponseSelectionExample& ex : examples) {
    for (int k = 0; k < static_cast<int>(ex.candidates.size()); ++k) {
      const Trace tr = forward(m, ex.context, ex.candidates[static_cast<size_t>(k)]);
      const double h = entropy_nats(tr.attn);
      if (k == ex.correct_index) {
        sum_c += h;
        ++rep.n_correct;
      } else {
        sum_i += h;
        ++rep.n_incorrect;
      }
    }
  }
  rep.mean_correct = rep.n_correct ? sum_c / rep.n_correct : 0.0;
  rep.mean_incorrect = rep.n_incorrect ? sum_i / rep.n_incorrect : 0.0;
  return rep;
}

CorpusScores evaluate_corpus(std::span<const Dialogue> gold_dialogues,
                             std::span<const std::vector<ReplyLink>> pred_links) {
  if (gold_dialogues.empty()) throw EvalError("no dialogues to evaluate");
  if (gold_dialogues.size() != pred_links.size())
    throw EvalError("gold has " + std::to_string(gold_dialogues.size()) +
                    " dialogues but predictions have " + std::to_string(pred_links.size()) +
                    " blocks");
  CorpusScores s;
  for (size_t i = 0; i < gold_dialogues.size(); ++i) {
    const Dialogue& d = gold_dialogues[i];
    if (!d.gold_links || d.gold_links->empty())
      throw EvalError("dialogue " + std::to_string(i) + " has no gold links");
    const ThreadPartition gold_part = partition_from_links(*d.gold_links, d.size());
    const ThreadPartition pred_part = partition_from_links(pred_links[i], d.size());

    const auto vi = variation_of_information(gold_part, pred_part);
    const double ari = adjusted_rand_index(gold_part, pred_part);
    const Prf cp = cluster_prf(gold_part, pred_part);
    const Prf lp = link_prf(*d.gold_links, pred_links[i]);

    s.vi += vi.scaled;
    s.ari += 100.0 * ari;
    s.cluster_p += cp.p;
    s.cluster_r += cp.r;
    s.cluster_f1 += cp.f1;
    s.link_p += lp.p;
    s.link_r += lp.r;
    s.link_f1 += lp.f1;
    s.gold_link_count += static_cast<int>(d.gold_links->size());
  }
  const double n = static_cast<double>(gold_dialogues.size());
  s.vi /= n;
  s.ari /= n;
  s.cluster_p /= n;
  s.cluster_r /= n;
  s.cluster_f1 /= n;
  s.link_p /= n;
  s.link_r /= n;
  s.link_f1 /= n;
  s.dialogues = static_cast<int>(gold_dialogues.size());
  return s;
}

std::string format_score_row(const CorpusScores& s) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%.1f\t%.1f\t%.1f\t%.1f\t%.1f\t%.1f\t%.1f\t%.1f", s.vi, s.ari,
                s.cluster_p, s.cluster_r, s.cluster_f1, s.link_p, s.link_r, s.link_f1);
  return buf;
}

}  // namespace detangle
