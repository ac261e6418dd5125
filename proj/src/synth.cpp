#include "detangle/synth.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "detangle/errors.hpp"

namespace detangle {

void GenConfig::validate() const {
  if (n_threads < 1) throw ConfigError("n_threads must be >= 1");
  if (utterances_min < 1 || utterances_max < utterances_min)
    throw ConfigError("utterance count range must satisfy 1 <= min <= max");
  if (tokens_min < 1 || tokens_max < tokens_min)
    throw ConfigError("token count range must satisfy 1 <= min <= max");
  if (speakers_per_thread < 1) throw ConfigError("speakers_per_thread must be >= 1");
  if (topic_purity < 0.0 || topic_purity > 1.0)
    throw ConfigError("topic_purity must be in [0, 1]");
  if (topic_tokens_per_thread < 1) throw ConfigError("topic_tokens_per_thread must be >= 1");
  if (static_cast<long long>(topic_tokens_per_thread) * n_threads > vocab_size)
    throw ConfigError("disjoint topic vocabularies need topic_tokens_per_thread * n_threads <= "
                      "vocab_size");
  const int content = vocab_size - speaker_token_count();
  if (static_cast<long long>(topic_tokens_per_thread) * n_threads > content)
    throw ConfigError("vocab too small: " + std::to_string(speaker_token_count()) +
                      " speaker tokens leave " + std::to_string(content) +
                      " content tokens, need " +
                      std::to_string(topic_tokens_per_thread * n_threads) + " for topics");
  if (topic_purity < 1.0 &&
      static_cast<long long>(topic_tokens_per_thread) * n_threads >= content)
    throw ConfigError("topic_purity < 1 needs a non-empty shared vocabulary");
}

Dialogue generate_dialogue(const GenConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);

  const int n_speakers = cfg.speaker_token_count();

  // Deal shuffled speakers to threads; within a dialogue threads never share
  // a speaker.
  std::vector<int> speaker_ids(static_cast<size_t>(n_speakers));
  std::iota(speaker_ids.begin(), speaker_ids.end(), 0);
  rng.shuffle(speaker_ids);

  // Disjoint per-thread topic vocabularies drawn fresh per dialogue; the
  // unchosen remainder of the content space is the shared vocabulary.
  std::vector<int> content_ids(static_cast<size_t>(cfg.vocab_size - n_speakers));
  std::iota(content_ids.begin(), content_ids.end(), n_speakers);
  rng.shuffle(content_ids);
  const int topic_total = cfg.topic_tokens_per_thread * cfg.n_threads;
  std::span<const int> shared(content_ids.data() + topic_total,
                              content_ids.size() - static_cast<size_t>(topic_total));

  struct ThreadUtterance {
    Utterance utt;        // id filled in after interleaving
    int parent_pos = -1;  // position within the thread; -1 marks thread start
  };
  std::vector<std::vector<ThreadUtterance>> threads(static_cast<size_t>(cfg.n_threads));

  for (int t = 0; t < cfg.n_threads; ++t) {
    std::span<const int> topic(content_ids.data() + t * cfg.topic_tokens_per_thread,
                               static_cast<size_t>(cfg.topic_tokens_per_thread));
    std::span<const int> speakers(speaker_ids.data() + t * cfg.speakers_per_thread,
                                  static_cast<size_t>(cfg.speakers_per_thread));
    const int len = static_cast<int>(rng.uniform_int(cfg.utterances_min, cfg.utterances_max));
    for (int p = 0; p < len; ++p) {
      ThreadUtterance tu;
      const int speaker_tok =
          speakers[static_cast<size_t>(rng.uniform_int(0, cfg.speakers_per_thread - 1))];
      tu.utt.speaker = "s" + std::to_string(speaker_tok);
      tu.utt.tokens.push_back(speaker_tok);
      const int n_tok = static_cast<int>(rng.uniform_int(cfg.tokens_min, cfg.tokens_max));
      for (int k = 0; k < n_tok; ++k) {
        const bool on_topic = rng.uniform() < cfg.topic_purity;
        const std::span<const int>& pool = on_topic ? topic : shared;
        tu.utt.tokens.push_back(
            pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))]);
      }
      tu.parent_pos = p == 0 ? -1 : static_cast<int>(rng.uniform_int(0, p - 1));
      threads[static_cast<size_t>(t)].push_back(std::move(tu));
    }
  }

  // Uniform random interleaving that preserves within-thread order: shuffle
  // the multiset of thread tags, then emit each thread's utterances in order.
  std::vector<int> order;
  for (int t = 0; t < cfg.n_threads; ++t)
    order.insert(order.end(), threads[static_cast<size_t>(t)].size(), t);
  rng.shuffle(order);

  Dialogue d;
  d.gold_links = std::vector<ReplyLink>{};
  std::vector<std::vector<int>> global_id(static_cast<size_t>(cfg.n_threads));
  std::vector<size_t> next_pos(static_cast<size_t>(cfg.n_threads), 0);
  for (int tag : order) {
    auto& th = threads[static_cast<size_t>(tag)];
    const size_t pos = next_pos[static_cast<size_t>(tag)]++;
    ThreadUtterance& tu = th[pos];
    tu.utt.id = d.size();
    global_id[static_cast<size_t>(tag)].push_back(tu.utt.id);
    const int parent_id =
        tu.parent_pos < 0 ? tu.utt.id
                          : global_id[static_cast<size_t>(tag)][static_cast<size_t>(tu.parent_pos)];
    d.gold_links->push_back({tu.utt.id, parent_id});
    d.utterances.push_back(std::move(tu.utt));
  }
  return d;
}

std::vector<Dialogue> generate_corpus(const GenConfig& cfg, int count) {
  if (count < 0) throw ConfigError("corpus size must be >= 0");
  std::vector<Dialogue> out;
  out.reserve(static_cast<size_t>(count));
  for (int k = 0; k < count; ++k) {
    GenConfig per = cfg;
    per.seed = derive_seed(cfg.seed, static_cast<uint64_t>(k));
    out.push_back(generate_dialogue(per));
  }
  return out;
}

ResponseSelectionExample make_selection_example(const Dialogue& d, int split_point, int m,
                                                std::span<const Dialogue> pool, Rng& rng) {
  if (split_point < 1 || split_point >= d.size())
    throw DataError("split_point must be in [1, len)");
  if (m < 2) throw DataError("candidate count must be >= 2");

  // Flatten utterances of every pool dialogue other than d itself.
  std::vector<std::pair<int, int>> others;  // (dialogue index, utterance index)
  for (size_t i = 0; i < pool.size(); ++i) {
    if (&pool[i] == &d) continue;
    for (int j = 0; j < pool[i].size(); ++j) others.emplace_back(static_cast<int>(i), j);
  }
  if (static_cast<int>(others.size()) < m - 1)
    throw DataError("negative pool too small: need " + std::to_string(m - 1) +
                    " utterances from other dialogues, have " + std::to_string(others.size()));

  // Partial Fisher-Yates: draw m-1 negatives without replacement.
  std::vector<Utterance> negatives;
  for (int k = 0; k < m - 1; ++k) {
    const auto j = static_cast<size_t>(
        rng.uniform_int(k, static_cast<int64_t>(others.size()) - 1));
    std::swap(others[static_cast<size_t>(k)], others[j]);
    const auto [di, ui] = others[static_cast<size_t>(k)];
    negatives.push_back(pool[static_cast<size_t>(di)].utterances[static_cast<size_t>(ui)]);
  }

  ResponseSelectionExample ex;
  ex.context.assign(d.utterances.begin(), d.utterances.begin() + split_point);
  ex.correct_index = static_cast<int>(rng.uniform_int(0, m - 1));
  ex.candidates.reserve(static_cast<size_t>(m));
  int neg = 0;
  for (int k = 0; k < m; ++k) {
    if (k == ex.correct_index)
      ex.candidates.push_back(d.utterances[static_cast<size_t>(split_point)]);
    else
      ex.candidates.push_back(std::move(negatives[static_cast<size_t>(neg++)]));
  }
  return ex;
}

std::vector<ResponseSelectionExample> augment_dialogue(const Dialogue& d, int m,
                                                       std::span<const Dialogue> pool, Rng& rng) {
  if (d.size() < 2) throw DataError("augmentation needs a dialogue of length >= 2");
  std::vector<ResponseSelectionExample> out;
  out.reserve(static_cast<size_t>(d.size() - 1));
  for (int split = 1; split < d.size(); ++split)
    out.push_back(make_selection_example(d, split, m, pool, rng));
  return out;
}

}  // namespace detangle
