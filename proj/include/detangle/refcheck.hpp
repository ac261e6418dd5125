#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "detangle/data.hpp"
#include "detangle/metrics.hpp"
#include "detangle/rng.hpp"

namespace detangle::refcheck {

// Deliberately naive re-implementations of the clustering machinery, kept
// algorithmically independent of the production paths so the two can verify
// each other. Nothing in the training or inference pipeline calls these.

// Components via repeated transitive closure over the undirected link graph.
ThreadPartition partition_by_reachability(std::span<const ReplyLink> links, int n_utterances);

// VI from explicit cluster intersections (no contingency table reuse).
double vi_bits_naive(const ThreadPartition& gold, const ThreadPartition& pred);

// ARI from the classic per-element-pair a/b/c/d counts:
// 2(ad - bc) / ((a+b)(b+d) + (a+c)(c+d)).
double ari_pair_counting(const ThreadPartition& gold, const ThreadPartition& pred);

// Quadratic exact-match cluster scoring.
Prf cluster_prf_naive(const ThreadPartition& gold, const ThreadPartition& pred);

// Per-pair link scoring by linear scans.
Prf link_prf_naive(std::span<const ReplyLink> gold, std::span<const ReplyLink> pred);

// All set partitions of {0..n-1} via restricted growth strings
// (52 partitions for n = 5).
std::vector<ThreadPartition> all_partitions(int n);

ThreadPartition random_partition(int n, Rng& rng);

// One random link per child (uniform over earlier utterances plus self).
std::vector<ReplyLink> random_links(int n, Rng& rng);

struct Report {
  int checks = 0;
  int failures = 0;
  std::vector<std::string> messages;  // one per failure

  bool ok() const { return failures == 0; }
};

// Metric implementations vs. the oracles above: every ordered pair of the
// partitions of a 5-element set, plus `random_pairs` random pairs with up to
// 10 elements. Agreement tolerance 1e-9.
Report run_metric_checks(uint64_t seed, int random_pairs = 200);

// Full-model combined-loss gradients vs. central finite differences
// (h = 1e-5) on a small randomly initialized model: `seeds` seeds times
// w in {0, 0.25, 1}. Threshold 1e-3 max relative error.
Report run_gradient_checks(uint64_t seed, int seeds = 5);

}  // namespace detangle::refcheck
