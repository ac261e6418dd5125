#include <map>
#include <set>

#include "detangle/data.hpp"
#include "detangle/errors.hpp"
#include "detangle/synth.hpp"
#include "doctest.h"

using namespace detangle;

namespace {

GenConfig small_config() {
  GenConfig cfg;
  cfg.n_threads = 3;
  cfg.utterances_min = 4;
  cfg.utterances_max = 4;
  cfg.vocab_size = 80;
  cfg.topic_tokens_per_thread = 8;
  cfg.speakers_per_thread = 2;
  cfg.topic_purity = 1.0;
  cfg.tokens_min = 3;
  cfg.tokens_max = 5;
  cfg.seed = 42;
  return cfg;
}

// Thread id per utterance, from the gold-link components.
std::map<int, int> thread_of(const Dialogue& d) {
  const auto part = partition_from_links(*d.gold_links, d.size());
  std::map<int, int> out;
  for (size_t c = 0; c < part.clusters.size(); ++c)
    for (int u : part.clusters[c]) out[u] = static_cast<int>(c);
  return out;
}

}  // namespace

TEST_CASE("single thread gives a tree rooted at a self-linked first utterance") {
  GenConfig cfg = small_config();
  cfg.n_threads = 1;
  cfg.utterances_min = cfg.utterances_max = 3;
  const Dialogue d = generate_dialogue(cfg);
  REQUIRE(d.size() == 3);
  REQUIRE(d.gold_links->size() == 3);
  CHECK((*d.gold_links)[0] == ReplyLink{0, 0});
  for (int i = 1; i < 3; ++i) {
    CHECK((*d.gold_links)[static_cast<size_t>(i)].child == i);
    CHECK((*d.gold_links)[static_cast<size_t>(i)].parent < i);
  }
}

TEST_CASE("generation is deterministic per seed") {
  const GenConfig cfg = small_config();
  CHECK(generate_dialogue(cfg) == generate_dialogue(cfg));
  GenConfig other = cfg;
  other.seed = 43;
  CHECK(generate_dialogue(cfg) != generate_dialogue(other));
  CHECK(generate_corpus(cfg, 4) == generate_corpus(cfg, 4));
}

TEST_CASE("gold links recover the thread structure") {
  const Dialogue d = generate_dialogue(small_config());
  const auto part = partition_from_links(*d.gold_links, d.size());
  REQUIRE(part.clusters.size() == 3);
  for (const auto& c : part.clusters) CHECK(c.size() == 4);
}

TEST_CASE("gold-link validity: backward links, one self-link per thread") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    GenConfig cfg = small_config();
    cfg.utterances_min = 2;
    cfg.utterances_max = 7;
    cfg.topic_purity = 0.7;
    cfg.seed = seed;
    const Dialogue d = generate_dialogue(cfg);
    validate_dialogue(d);
    REQUIRE(d.gold_links->size() == static_cast<size_t>(d.size()));
    int self_links = 0;
    for (const ReplyLink& l : *d.gold_links) {
      CHECK(l.parent <= l.child);
      if (l.parent == l.child) ++self_links;
    }
    CHECK(self_links == cfg.n_threads);
    CHECK(partition_from_links(*d.gold_links, d.size()).clusters.size() ==
          static_cast<size_t>(cfg.n_threads));
  }
}

TEST_CASE("topic separability at purity 1.0") {
  for (uint64_t seed = 100; seed < 110; ++seed) {
    GenConfig cfg = small_config();
    cfg.seed = seed;
    const Dialogue d = generate_dialogue(cfg);
    const auto threads = thread_of(d);
    const int speaker_tokens = cfg.speaker_token_count();
    for (int i = 0; i < d.size(); ++i) {
      for (int j = i + 1; j < d.size(); ++j) {
        if (threads.at(i) == threads.at(j)) continue;
        // cross-thread utterances must not share any content token
        std::set<int> a(d.utterances[static_cast<size_t>(i)].tokens.begin(),
                        d.utterances[static_cast<size_t>(i)].tokens.end());
        for (int tok : d.utterances[static_cast<size_t>(j)].tokens)
          if (tok >= speaker_tokens) CHECK(!a.count(tok));
      }
    }
  }
}

TEST_CASE("speaker tokens lead every utterance and stay within their block") {
  const GenConfig cfg = small_config();
  const Dialogue d = generate_dialogue(cfg);
  for (const Utterance& u : d.utterances) {
    REQUIRE(!u.tokens.empty());
    CHECK(u.tokens[0] < cfg.speaker_token_count());
    CHECK(u.speaker == "s" + std::to_string(u.tokens[0]));
  }
}

TEST_CASE("infeasible configs are rejected") {
  GenConfig cfg = small_config();
  cfg.topic_tokens_per_thread = 40;  // 3 * 40 > 80
  CHECK_THROWS_AS(generate_dialogue(cfg), ConfigError);
  cfg = small_config();
  cfg.topic_purity = 1.5;
  CHECK_THROWS_AS(generate_dialogue(cfg), ConfigError);
  cfg = small_config();
  cfg.utterances_min = 5;
  cfg.utterances_max = 4;
  CHECK_THROWS_AS(generate_dialogue(cfg), ConfigError);
}

TEST_CASE("make_selection_example basics") {
  const auto corpus = generate_corpus(small_config(), 4);
  const Dialogue& d = corpus[0];
  Rng rng(5);

  SUBCASE("context is the prefix, correct candidate is the next utterance") {
    const auto ex = make_selection_example(d, 4, 2, corpus, rng);
    CHECK(ex.context.size() == 4);
    REQUIRE(ex.candidates.size() == 2);
    CHECK(ex.candidates[static_cast<size_t>(ex.correct_index)] == d.utterances[4]);
    for (int i = 0; i < 4; ++i) CHECK(ex.context[static_cast<size_t>(i)] == d.utterances[static_cast<size_t>(i)]);
  }
  SUBCASE("split point 1 gives a single-utterance context") {
    const auto ex = make_selection_example(d, 1, 3, corpus, rng);
    CHECK(ex.context.size() == 1);
  }
  SUBCASE("pool without other dialogues fails") {
    std::vector<Dialogue> only{d};
    CHECK_THROWS_AS(make_selection_example(only[0], 1, 3, only, rng), DataError);
  }
  SUBCASE("negatives come from other dialogues") {
    const auto ex = make_selection_example(d, 3, 6, corpus, rng);
    for (int k = 0; k < 6; ++k) {
      if (k == ex.correct_index) continue;
      bool from_other = false;
      for (size_t i = 1; i < corpus.size(); ++i)
        for (const Utterance& u : corpus[i].utterances)
          if (u == ex.candidates[static_cast<size_t>(k)]) from_other = true;
      CHECK(from_other);
    }
  }
}

TEST_CASE("correct_index is uniform over candidate positions") {
  const auto corpus = generate_corpus(small_config(), 6);
  Rng rng(99);
  const int m = 4;
  std::vector<int> counts(static_cast<size_t>(m), 0);
  const int trials = 1000;
  for (int i = 0; i < trials; ++i) {
    const Dialogue& d = corpus[static_cast<size_t>(i) % corpus.size()];
    const int split = 1 + static_cast<int>(rng.uniform_int(0, d.size() - 2));
    const auto ex = make_selection_example(d, split, m, corpus, rng);
    ++counts[static_cast<size_t>(ex.correct_index)];
  }
  for (int k = 0; k < m; ++k) {
    const double freq = counts[static_cast<size_t>(k)] / static_cast<double>(trials);
    CHECK(freq == doctest::Approx(1.0 / m).epsilon(0.2));  // within 5 percentage points
  }
}

TEST_CASE("augment_dialogue") {
  GenConfig cfg = small_config();
  cfg.n_threads = 5;
  cfg.utterances_min = cfg.utterances_max = 10;
  cfg.topic_tokens_per_thread = 8;
  cfg.vocab_size = 120;
  const auto corpus = generate_corpus(cfg, 3);
  Rng rng(11);

  SUBCASE("a 50-utterance dialogue yields 49 examples") {
    REQUIRE(corpus[0].size() == 50);
    const auto exs = augment_dialogue(corpus[0], 4, corpus, rng);
    CHECK(exs.size() == 49);
  }
  SUBCASE("length two gives one example") {
    GenConfig tiny = small_config();
    tiny.n_threads = 1;
    tiny.utterances_min = tiny.utterances_max = 2;
    auto pool = generate_corpus(tiny, 3);
    const auto exs = augment_dialogue(pool[0], 2, pool, rng);
    CHECK(exs.size() == 1);
  }
  SUBCASE("contexts are strict prefixes") {
    const auto exs = augment_dialogue(corpus[1], 3, corpus, rng);
    for (size_t e = 0; e < exs.size(); ++e) {
      REQUIRE(exs[e].context.size() == e + 1);
      for (size_t i = 0; i < exs[e].context.size(); ++i)
        CHECK(exs[e].context[i] == corpus[1].utterances[i]);
    }
  }
}
