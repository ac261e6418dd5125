#pragma once

#include <span>
#include <string>
#include <vector>

#include "detangle/data.hpp"
#include "detangle/model.hpp"

namespace detangle {

// Variation of information between two partitions of the same element set:
// raw_bits = H(gold|pred) + H(pred|gold) in bits (0 = identical). scaled maps
// it to 0..100 higher-is-better via 100 * (1 - raw / log2 N); a single
// element scores 100.
struct VariationOfInformation {
  double raw_bits = 0.0;
  double scaled = 0.0;
};

VariationOfInformation variation_of_information(const ThreadPartition& gold,
                                                const ThreadPartition& pred);

// Chance-corrected pair-counting agreement in [-1, 1]. Identical trivial
// partitions (where the correction denominator vanishes) score 1.
double adjusted_rand_index(const ThreadPartition& gold, const ThreadPartition& pred);

struct Prf {
  double p = 0.0, r = 0.0, f1 = 0.0;  // percentages
};

// A predicted cluster counts only when set-identical to a gold cluster.
Prf cluster_prf(const ThreadPartition& gold, const ThreadPartition& pred);

// Predicted (child, parent) pairs against gold pairs. Gold may carry several
// parents per child; predictions carry exactly one. Recall divides by the
// total number of gold pairs.
Prf link_prf(std::span<const ReplyLink> gold, std::span<const ReplyLink> pred);

double entropy_nats(std::span<const double> dist);

struct EntropyReport {
  double mean_correct = 0.0;
  double mean_incorrect = 0.0;
  int n_correct = 0;
  int n_incorrect = 0;
};

// Mean attention entropy split by candidate correctness.
EntropyReport attention_entropy_report(const Model& m,
                                       std::span<const ResponseSelectionExample> examples);

// Corpus-level disentanglement scores: each metric averaged over dialogues
// with equal weight. ari is pre-scaled by 100 to match the report row.
struct CorpusScores {
  double vi = 0.0;   // scaled VI, 0..100
  double ari = 0.0;  // x100
  double cluster_p = 0.0, cluster_r = 0.0, cluster_f1 = 0.0;
  double link_p = 0.0, link_r = 0.0, link_f1 = 0.0;
  int dialogues = 0;
  int gold_link_count = 0;  // recall denominator actually used
};

CorpusScores evaluate_corpus(std::span<const Dialogue> gold_dialogues,
                             std::span<const std::vector<ReplyLink>> pred_links);

// Tab-separated "VI ARI cP cR cF1 lP lR lF1", one decimal each.
std::string format_score_row(const CorpusScores& s);

}  // namespace detangle
