#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "detangle/data.hpp"
#include "detangle/rng.hpp"

namespace detangle {

// Controls for the synthetic entangled-dialogue generator.
//
// Token id layout: ids [0, n_threads*speakers_per_thread) are speaker tokens;
// the rest is content space. Each dialogue draws disjoint random
// topic_tokens_per_thread-sized topic vocabularies from the content space,
// one per thread; content tokens come from the thread's topic vocabulary
// with probability topic_purity, otherwise from the rest of the content
// space (the shared vocabulary). Each utterance starts with its speaker's
// token so speaker identity reaches the model through the token stream.
struct GenConfig {
  int n_threads = 3;
  int utterances_min = 4;  // per-thread length range, inclusive
  int utterances_max = 7;
  int vocab_size = 160;
  int topic_tokens_per_thread = 16;
  int speakers_per_thread = 2;
  double topic_purity = 0.9;
  int tokens_min = 3;  // content tokens per utterance, inclusive range
  int tokens_max = 6;
  uint64_t seed = 1;

  int speaker_token_count() const { return n_threads * speakers_per_thread; }
  void validate() const;  // ConfigError on infeasible values
};

// One entangled dialogue: threads generated independently, each non-initial
// utterance linked to a uniformly random earlier utterance of its thread,
// thread-initial utterances self-linked, then threads interleaved by a
// uniformly random order that preserves within-thread order. gold_links is
// always populated.
Dialogue generate_dialogue(const GenConfig& cfg);

// count dialogues; dialogue k uses seed derive_seed(cfg.seed, k).
std::vector<Dialogue> generate_corpus(const GenConfig& cfg, int count);

// Selection example from a dialogue prefix: context = first split_point
// utterances, correct candidate = the next one, m-1 negatives drawn without
// replacement from utterances of other dialogues in pool. The correct
// candidate's position is uniform in [0, m).
ResponseSelectionExample make_selection_example(const Dialogue& d, int split_point, int m,
                                                std::span<const Dialogue> pool, Rng& rng);

// One example per split point 1..len-1.
std::vector<ResponseSelectionExample> augment_dialogue(const Dialogue& d, int m,
                                                       std::span<const Dialogue> pool, Rng& rng);

}  // namespace detangle
