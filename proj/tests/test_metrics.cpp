#include <cmath>

#include "detangle/errors.hpp"
#include "detangle/metrics.hpp"
#include "detangle/refcheck.hpp"
#include "detangle/synth.hpp"
#include "detangle/train.hpp"
#include "doctest.h"

using namespace detangle;

namespace {

ThreadPartition part(std::vector<std::vector<int>> clusters) {
  ThreadPartition p;
  p.clusters = std::move(clusters);
  p.canonicalize();
  return p;
}

}  // namespace

TEST_CASE("variation of information") {
  SUBCASE("identical partitions: raw 0, scaled 100") {
    const auto p = part({{0, 1}, {2, 3}});
    const auto vi = variation_of_information(p, p);
    CHECK(vi.raw_bits == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(vi.scaled == doctest::Approx(100.0).epsilon(1e-9));
  }
  SUBCASE("crossed pairs on four elements: exactly 2 bits") {
    const auto vi =
        variation_of_information(part({{0, 1}, {2, 3}}), part({{0, 2}, {1, 3}}));
    CHECK(vi.raw_bits == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(vi.scaled == doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("two elements, merged vs split: 1 bit, scaled 0") {
    const auto vi = variation_of_information(part({{0, 1}}), part({{0}, {1}}));
    CHECK(vi.raw_bits == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(vi.scaled == doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("single element scores 100") {
    const auto vi = variation_of_information(part({{0}}), part({{0}}));
    CHECK(vi.scaled == 100.0);
  }
  SUBCASE("element-set mismatch rejected") {
    CHECK_THROWS_AS(variation_of_information(part({{0, 1}}), part({{0}, {2}})), EvalError);
  }
  SUBCASE("symmetry and triangle inequality on random partitions") {
    Rng rng(5);
    for (int iter = 0; iter < 60; ++iter) {
      const int n = static_cast<int>(rng.uniform_int(2, 10));
      const auto a = refcheck::random_partition(n, rng);
      const auto b = refcheck::random_partition(n, rng);
      const auto c = refcheck::random_partition(n, rng);
      const double ab = variation_of_information(a, b).raw_bits;
      const double ba = variation_of_information(b, a).raw_bits;
      CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
      CHECK(variation_of_information(a, a).raw_bits == doctest::Approx(0.0).epsilon(1e-12));
      const double ac = variation_of_information(a, c).raw_bits;
      const double cb = variation_of_information(c, b).raw_bits;
      CHECK(ab <= ac + cb + 1e-9);
    }
  }
}

TEST_CASE("adjusted rand index") {
  SUBCASE("identical partitions score 1") {
    const auto p = part({{0, 2}, {1}, {3, 4}});
    CHECK(adjusted_rand_index(p, p) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("all singletons vs one cluster scores 0") {
    CHECK(adjusted_rand_index(part({{0}, {1}, {2}, {3}}), part({{0, 1, 2, 3}})) ==
          doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("degenerate identical trivial partitions score 1") {
    CHECK(adjusted_rand_index(part({{0}, {1}}), part({{0}, {1}})) == 1.0);
    CHECK(adjusted_rand_index(part({{0, 1}}), part({{0, 1}})) == 1.0);
  }
  SUBCASE("matches the pair-counting oracle on random partitions") {
    Rng rng(31);
    for (int iter = 0; iter < 200; ++iter) {
      const int n = static_cast<int>(rng.uniform_int(1, 10));
      const auto a = refcheck::random_partition(n, rng);
      const auto b = refcheck::random_partition(n, rng);
      CHECK(adjusted_rand_index(a, b) ==
            doctest::Approx(refcheck::ari_pair_counting(a, b)).epsilon(1e-9));
    }
  }
}

TEST_CASE("cluster precision/recall/f1") {
  SUBCASE("identical partitions: all 100") {
    const auto p = part({{0, 1}, {2}});
    const Prf s = cluster_prf(p, p);
    CHECK(s.p == 100.0);
    CHECK(s.r == 100.0);
    CHECK(s.f1 == 100.0);
  }
  SUBCASE("one exact match of three gold clusters, two predicted") {
    const auto gold = part({{0, 1}, {2, 3}, {4}});
    const auto pred = part({{0, 1}, {2, 3, 4}});
    const Prf s = cluster_prf(gold, pred);
    CHECK(s.p == doctest::Approx(50.0).epsilon(1e-12));
    CHECK(s.r == doctest::Approx(100.0 / 3).epsilon(1e-12));
    CHECK(s.f1 == doctest::Approx(40.0).epsilon(1e-12));
  }
  SUBCASE("no exact matches: all zero") {
    const Prf s = cluster_prf(part({{0, 1}, {2}}), part({{0}, {1, 2}}));
    CHECK(s.p == 0.0);
    CHECK(s.r == 0.0);
    CHECK(s.f1 == 0.0);
  }
}

TEST_CASE("link precision/recall/f1") {
  SUBCASE("perfect predictions") {
    const std::vector<ReplyLink> links{{0, 0}, {1, 0}, {2, 1}};
    const Prf s = link_prf(links, links);
    CHECK(s.p == 100.0);
    CHECK(s.r == 100.0);
    CHECK(s.f1 == 100.0);
  }
  SUBCASE("three of four correct") {
    const std::vector<ReplyLink> gold{{0, 0}, {1, 0}, {2, 1}, {3, 2}};
    const std::vector<ReplyLink> pred{{0, 0}, {1, 0}, {2, 1}, {3, 3}};
    const Prf s = link_prf(gold, pred);
    CHECK(s.p == doctest::Approx(75.0).epsilon(1e-12));
    CHECK(s.r == doctest::Approx(75.0).epsilon(1e-12));
    CHECK(s.f1 == doctest::Approx(75.0).epsilon(1e-12));
  }
  SUBCASE("multi-parent gold inflates the recall denominator") {
    const std::vector<ReplyLink> gold{{0, 0}, {1, 0}, {2, 1}, {3, 1}, {3, 2}};
    const std::vector<ReplyLink> pred{{0, 0}, {1, 0}, {2, 1}, {3, 1}};
    const Prf s = link_prf(gold, pred);
    CHECK(s.p == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(s.r == doctest::Approx(80.0).epsilon(1e-12));
    CHECK(s.f1 == doctest::Approx(2.0 * 100 * 80 / 180).epsilon(1e-9));
  }
  SUBCASE("agrees with the naive scan on random links") {
    Rng rng(77);
    for (int iter = 0; iter < 100; ++iter) {
      const int n = static_cast<int>(rng.uniform_int(1, 9));
      const auto gold = refcheck::random_links(n, rng);
      const auto pred = refcheck::random_links(n, rng);
      const Prf a = link_prf(gold, pred);
      const Prf b = refcheck::link_prf_naive(gold, pred);
      CHECK(a.p == doctest::Approx(b.p).epsilon(1e-9));
      CHECK(a.r == doctest::Approx(b.r).epsilon(1e-9));
      CHECK(a.f1 == doctest::Approx(b.f1).epsilon(1e-9));
    }
  }
  SUBCASE("prediction for an unknown child rejected") {
    CHECK_THROWS_AS(link_prf(std::vector<ReplyLink>{{0, 0}},
                             std::vector<ReplyLink>{{0, 0}, {1, 0}}),
                    EvalError);
  }
  SUBCASE("duplicate predictions rejected") {
    CHECK_THROWS_AS(link_prf(std::vector<ReplyLink>{{0, 0}, {1, 0}},
                             std::vector<ReplyLink>{{0, 0}, {0, 0}}),
                    EvalError);
  }
}

TEST_CASE("entropy in nats") {
  CHECK(entropy_nats(std::vector<double>{0.25, 0.25, 0.25, 0.25}) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(entropy_nats(std::vector<double>{0.0, 1.0, 0.0}) == 0.0);
}

TEST_CASE("attention entropy report splits by candidate correctness") {
  GenConfig gc;
  gc.n_threads = 2;
  gc.utterances_min = 3;
  gc.utterances_max = 4;
  gc.vocab_size = 40;
  gc.topic_tokens_per_thread = 6;
  gc.speakers_per_thread = 1;
  gc.tokens_min = 2;
  gc.tokens_max = 3;
  gc.seed = 8;
  const auto corpus = generate_corpus(gc, 4);
  ModelConfig mc;
  mc.vocab_size = 40;
  mc.embed_dim = 6;
  mc.model_dim = 6;
  mc.n_heads = 2;
  mc.max_context = 5;
  mc.ff_hidden = 6;
  mc.attn_mlp_hidden = 4;
  mc.scorer_mlp_hidden = 4;
  const Model m = init_model(mc);
  const auto examples = build_selection_examples(corpus, 4, 5, 3);
  const auto rep = attention_entropy_report(m, examples);
  CHECK(rep.n_correct == static_cast<int>(examples.size()));
  CHECK(rep.n_incorrect == static_cast<int>(examples.size()) * 3);
  CHECK(rep.mean_correct > 0.0);
  CHECK(rep.mean_incorrect > 0.0);
}

TEST_CASE("exhaustive oracle agreement on all partition pairs of a 5-set") {
  const auto rep = refcheck::run_metric_checks(123, 50);
  for (const auto& msg : rep.messages) MESSAGE(msg);
  CHECK(rep.failures == 0);
}

TEST_CASE("corpus evaluation macro-averages per-dialogue scores") {
  // Two dialogues with known scores: one perfect, one fully self-linked.
  Dialogue d1;
  for (int i = 0; i < 4; ++i) {
    Utterance u;
    u.id = i;
    u.speaker = "s";
    u.tokens = {1};
    d1.utterances.push_back(u);
  }
  d1.gold_links = std::vector<ReplyLink>{{0, 0}, {1, 0}, {2, 2}, {3, 2}};
  Dialogue d2 = d1;

  std::vector<std::vector<ReplyLink>> preds;
  preds.push_back(*d1.gold_links);                          // perfect
  preds.push_back({{0, 0}, {1, 1}, {2, 2}, {3, 3}});        // all singletons
  const std::vector<Dialogue> gold{d1, d2};
  const CorpusScores s = evaluate_corpus(gold, preds);
  CHECK(s.dialogues == 2);
  // dialogue 1: everything perfect; dialogue 2: cluster F1 0, link P/R 50/50
  CHECK(s.cluster_f1 == doctest::Approx((100.0 + 0.0) / 2).epsilon(1e-9));
  CHECK(s.link_p == doctest::Approx((100.0 + 50.0) / 2).epsilon(1e-9));
  CHECK(s.ari == doctest::Approx((100.0 + 0.0) / 2).epsilon(1e-9));

  const std::string row = format_score_row(s);
  CHECK(row.find('\t') != std::string::npos);

  SUBCASE("count mismatch rejected") {
    preds.pop_back();
    CHECK_THROWS_AS(evaluate_corpus(gold, preds), EvalError);
  }
}
