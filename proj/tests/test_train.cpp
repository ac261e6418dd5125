#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "detangle/errors.hpp"
#include "detangle/refcheck.hpp"
#include "detangle/synth.hpp"
#include "detangle/train.hpp"
#include "doctest.h"

using namespace detangle;

namespace {

GenConfig gen_config(uint64_t seed) {
  GenConfig cfg;
  cfg.n_threads = 2;
  cfg.utterances_min = 3;
  cfg.utterances_max = 5;
  cfg.vocab_size = 60;
  cfg.topic_tokens_per_thread = 8;
  cfg.speakers_per_thread = 1;
  cfg.topic_purity = 1.0;
  cfg.tokens_min = 2;
  cfg.tokens_max = 4;
  cfg.seed = seed;
  return cfg;
}

ModelConfig model_config() {
  ModelConfig cfg;
  cfg.vocab_size = 60;
  cfg.embed_dim = 8;
  cfg.model_dim = 8;
  cfg.n_heads = 2;
  cfg.max_context = 6;
  cfg.ff_hidden = 8;
  cfg.attn_mlp_hidden = 6;
  cfg.scorer_mlp_hidden = 6;
  cfg.seed = 5;
  return cfg;
}

Utterance utt(int id, std::vector<int> tokens) {
  Utterance u;
  u.id = id;
  u.speaker = "s";
  u.tokens = std::move(tokens);
  return u;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("response_loss") {
  SUBCASE("s = 0.5 costs ln 2 either way") {
    CHECK(response_loss(0.5, true).first == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(response_loss(0.5, false).first == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  }
  SUBCASE("correct label, score near one: loss vanishes") {
    CHECK(response_loss(1.0 - 1e-12, true).first == doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("confidently wrong: -ln 0.1") {
    CHECK(response_loss(0.9, false).first ==
          doctest::Approx(2.302585092994046).epsilon(1e-12));
  }
  SUBCASE("gradients are analytic") {
    CHECK(response_loss(0.3, true).second == doctest::Approx(-1.0 / 0.3).epsilon(1e-14));
    CHECK(response_loss(0.3, false).second == doctest::Approx(1.0 / 0.7).epsilon(1e-14));
  }
  SUBCASE("scores outside (0, 1) abort") {
    CHECK_THROWS_AS(response_loss(0.0, true), NumericalError);
    CHECK_THROWS_AS(response_loss(1.0, false), NumericalError);
  }
}

TEST_CASE("attention_loss") {
  SUBCASE("correct candidate with no self mass: zero loss") {
    CHECK(attention_loss(std::vector<double>{0.6, 0.4, 0.0}, true).first == 0.0);
  }
  SUBCASE("incorrect candidate with no self mass: maximal loss") {
    CHECK(attention_loss(std::vector<double>{0.6, 0.4, 0.0}, false).first == 1.0);
  }
  SUBCASE("incorrect candidate at 0.75 self mass") {
    CHECK(attention_loss(std::vector<double>{0.1, 0.15, 0.75}, false).first ==
          doctest::Approx(0.0625).epsilon(1e-14));
  }
  SUBCASE("gradient touches only the self coordinate") {
    const auto [loss, grad] = attention_loss(std::vector<double>{0.2, 0.3, 0.5}, true);
    CHECK(loss == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(grad[0] == 0.0);
    CHECK(grad[1] == 0.0);
    CHECK(grad[2] == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("loss breakdown keeps the mixing identity") {
  const auto corpus = generate_corpus(gen_config(3), 4);
  const Model m = init_model(model_config());
  const auto examples = build_selection_examples(corpus, 4, 6, 17);
  REQUIRE(!examples.empty());
  for (const double w : {0.0, 0.25, 0.6, 1.0}) {
    const LossBreakdown bd = example_loss(m, examples[0], w);
    CHECK(bd.total ==
          doctest::Approx((1.0 - w) * bd.l_res + w * bd.l_attn).epsilon(1e-12));
  }
  SUBCASE("w = 0: attention term contributes nothing") {
    const LossBreakdown bd = example_loss(m, examples[0], 0.0);
    CHECK(bd.total == bd.l_res);
  }
  SUBCASE("w = 1: response term contributes nothing") {
    const LossBreakdown bd = example_loss(m, examples[0], 1.0);
    CHECK(bd.total == bd.l_attn);
  }
}

TEST_CASE("eval_selection ranking rules") {
  const Model m = init_model(model_config());
  SUBCASE("identical candidates tie-break by index: correct at index 3 of 5 ranks fourth") {
    ResponseSelectionExample ex;
    ex.context = {utt(0, {1, 2})};
    const Utterance c = utt(1, {3, 4});
    ex.candidates = {c, c, c, c, c};
    ex.correct_index = 3;
    std::vector<ResponseSelectionExample> data{ex};
    const auto res = eval_selection(m, data, std::vector<int>{1, 5});
    CHECK(res.recall_at.at(1) == 0.0);
    CHECK(res.recall_at.at(5) == 1.0);
    CHECK(res.mrr == doctest::Approx(0.25).epsilon(1e-14));
  }
  SUBCASE("empty data rejected") {
    CHECK_THROWS_AS(eval_selection(m, {}, std::vector<int>{1}), EvalError);
  }
  SUBCASE("cutoff beyond the pool rejected") {
    ResponseSelectionExample ex;
    ex.context = {utt(0, {1})};
    ex.candidates = {utt(1, {2}), utt(2, {3})};
    ex.correct_index = 0;
    std::vector<ResponseSelectionExample> data{ex};
    CHECK_THROWS_AS(eval_selection(m, data, std::vector<int>{5}), EvalError);
  }
}

TEST_CASE("uniform scores rank the correct candidate uniformly") {
  // Exchangeable candidates: every candidate is an unrelated random
  // utterance, so the correct one's rank is uniform on 1..m by symmetry.
  Rng rng(2024);
  const int m_cands = 10;
  const Model model = init_model(model_config());
  std::vector<ResponseSelectionExample> data;
  for (int e = 0; e < 1500; ++e) {
    ResponseSelectionExample ex;
    const int n_ctx = 1 + static_cast<int>(rng.uniform_int(0, 3));
    for (int i = 0; i < n_ctx; ++i) {
      std::vector<int> toks;
      for (int t = 0; t <= static_cast<int>(rng.uniform_int(0, 2)); ++t)
        toks.push_back(static_cast<int>(rng.uniform_int(0, 59)));
      ex.context.push_back(utt(i, toks));
    }
    for (int k = 0; k < m_cands; ++k) {
      std::vector<int> toks;
      for (int t = 0; t <= static_cast<int>(rng.uniform_int(0, 2)); ++t)
        toks.push_back(static_cast<int>(rng.uniform_int(0, 59)));
      ex.candidates.push_back(utt(n_ctx + k, toks));
    }
    ex.correct_index = static_cast<int>(rng.uniform_int(0, m_cands - 1));
    data.push_back(std::move(ex));
  }
  const auto res = eval_selection(model, data, std::vector<int>{1});
  CHECK(std::abs(res.recall_at.at(1) - 0.1) <= 0.03);
  CHECK(std::abs(res.mrr - 0.2928968) <= 0.03);
}

TEST_CASE("full-model gradients match finite differences for w in {0, 0.25, 1}") {
  const auto rep = refcheck::run_gradient_checks(77, 2);
  for (const auto& msg : rep.messages) MESSAGE(msg);
  CHECK(rep.failures == 0);
  CHECK(rep.checks == 6);
}

TEST_CASE("one small optimizer step decreases a single example's loss") {
  const auto corpus = generate_corpus(gen_config(9), 4);
  const auto examples = build_selection_examples(corpus, 4, 6, 31);
  REQUIRE(!examples.empty());
  for (uint64_t seed = 0; seed < 3; ++seed) {
    ModelConfig mc = model_config();
    mc.seed = 100 + seed;
    Model m = init_model(mc);
    const std::vector<ResponseSelectionExample> one{examples[seed % examples.size()]};
    const double before = example_loss(m, one[0], 0.25).total;
    TrainConfig tc;
    tc.w = 0.25;
    tc.learning_rate = 1e-4;
    tc.epochs = 1;
    tc.batch_size = 1;
    tc.seed = seed;
    train(m, one, tc);
    const double after = example_loss(m, one[0], 0.25).total;
    CHECK(after < before);
  }
}

TEST_CASE("training is bitwise reproducible and writes checkpoints") {
  const auto corpus = generate_corpus(gen_config(21), 6);
  const auto examples = build_selection_examples(corpus, 4, 6, 55);
  const auto val = build_selection_examples(generate_corpus(gen_config(22), 3), 4, 6, 56);
  const auto dir = std::filesystem::temp_directory_path();
  const std::string d1 = (dir / "detangle_train_a").string();
  const std::string d2 = (dir / "detangle_train_b").string();

  TrainConfig tc;
  tc.w = 0.25;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.seed = 7;
  tc.eval_every = 1;

  Model m1 = init_model(model_config());
  Model m2 = init_model(model_config());
  const TrainResult r1 = train(m1, examples, tc, val, d1);
  const TrainResult r2 = train(m2, examples, tc, val, d2);
  CHECK(r1.best_epoch == r2.best_epoch);
  CHECK(slurp(d1 + "/best") == slurp(d2 + "/best"));
  CHECK(slurp(d1 + "/ckpt-2") == slurp(d2 + "/ckpt-2"));
  CHECK(std::filesystem::exists(d1 + "/ckpt-1"));
  CHECK(format_metric_log(r1.log) == format_metric_log(r2.log));
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
}

TEST_CASE("build_selection_examples trims contexts to the window") {
  GenConfig gc = gen_config(4);
  gc.n_threads = 3;
  gc.utterances_min = gc.utterances_max = 4;
  const auto corpus = generate_corpus(gc, 3);
  const auto examples = build_selection_examples(corpus, 3, 5, 9);
  // every dialogue has 12 utterances -> 11 examples each
  CHECK(examples.size() == 33);
  for (const auto& ex : examples) CHECK(ex.context.size() <= 5);
}

TEST_CASE("build_link_examples maps gold parents into windows") {
  Dialogue d;
  for (int i = 0; i < 5; ++i) d.utterances.push_back(utt(i, {i + 1}));
  d.gold_links = std::vector<ReplyLink>{{0, 0}, {1, 0}, {2, 2}, {3, 1}, {4, 0}};
  const std::vector<Dialogue> ds{d};

  SUBCASE("wide window keeps everything") {
    const auto exs = build_link_examples(ds, 8);
    REQUIRE(exs.size() == 4);  // utterance 0 has no visible predecessor
    CHECK(exs[0].gold_pos == 0);  // t=1 -> parent 0 at window position 0
    CHECK(exs[1].gold_pos == 2);  // t=2 -> self, n = 2
    CHECK(exs[2].gold_pos == 1);  // t=3 -> parent 1
    CHECK(exs[3].gold_pos == 0);  // t=4 -> parent 0
  }
  SUBCASE("narrow window drops out-of-reach parents") {
    const auto exs = build_link_examples(ds, 2);
    // t=4 parent 0 is outside a window of 2; t=2 self stays
    REQUIRE(exs.size() == 3);
    CHECK(exs[1].gold_pos == 2);
    CHECK(exs[2].context.size() == 2);
    CHECK(exs[2].gold_pos == 0);  // t=3, window {1, 2}, parent 1 at position 0
  }
  SUBCASE("missing gold links fail") {
    Dialogue bare = d;
    bare.gold_links.reset();
    const std::vector<Dialogue> bs{bare};
    CHECK_THROWS_AS(build_link_examples(bs, 4), DataError);
  }
}

TEST_CASE("finetune_links learns one-hot targets and stays deterministic") {
  GenConfig gc = gen_config(31);
  gc.n_threads = 2;
  gc.utterances_min = 3;
  gc.utterances_max = 4;
  const auto corpus = generate_corpus(gc, 6);
  const auto windows = build_link_examples(corpus, 4);
  REQUIRE(windows.size() >= 10);

  Model m = init_model(model_config());
  const double acc_before = link_accuracy(m, windows);
  TrainConfig tc;
  tc.epochs = 60;
  tc.batch_size = 4;
  tc.learning_rate = 1e-2;
  tc.seed = 3;
  Model m2 = m;
  finetune_links(m, windows, tc, windows);
  const double acc_after = link_accuracy(m, windows);
  CHECK(acc_after > acc_before);
  CHECK(acc_after >= 0.6);

  finetune_links(m2, windows, tc, windows);
  auto ra = tensor_refs(m.params);
  auto rb = tensor_refs(m2.params);
  for (size_t i = 0; i < ra.size(); ++i) CHECK(*ra[i].tensor == *rb[i].tensor);

  SUBCASE("uniform-attention models cannot be link-finetuned") {
    ModelConfig mc = model_config();
    mc.uniform_attention = true;
    Model u = init_model(mc);
    CHECK_THROWS_AS(finetune_links(u, windows, tc), ConfigError);
  }
}

TEST_CASE("prefix_fraction selects a deterministic prefix") {
  std::vector<Dialogue> ds(10);
  CHECK(prefix_fraction(ds, 100).size() == 10);
  CHECK(prefix_fraction(ds, 10).size() == 1);
  CHECK(prefix_fraction(ds, 1).size() == 1);
  CHECK(prefix_fraction(ds, 25).size() == 3);  // ceil(2.5)
  CHECK_THROWS_AS(prefix_fraction(ds, 0), ConfigError);
}
