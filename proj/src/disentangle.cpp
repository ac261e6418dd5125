#include "detangle/disentangle.hpp"

#include <algorithm>
#include <thread>

#include "detangle/errors.hpp"

namespace detangle {

void DisentangleConfig::validate(const ModelConfig& model_cfg) const {
  if (window < 1) throw ConfigError("window must be >= 1");
  if (window > model_cfg.max_context)
    throw ConfigError("window " + std::to_string(window) + " exceeds model max_context " +
                      std::to_string(model_cfg.max_context));
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
}

ReplyLink predict_link(const Model& m, std::span<const Utterance> context,
                       const Utterance& current) {
  if (context.empty()) return {current.id, current.id};
  const Trace tr = forward(m, context, current);
  int best = 0;
  for (int i = 1; i < static_cast<int>(tr.attn.size()); ++i)
    if (tr.attn[static_cast<size_t>(i)] > tr.attn[static_cast<size_t>(best)]) best = i;
  if (best < tr.n) return {current.id, context[static_cast<size_t>(best)].id};
  return {current.id, current.id};
}

DisentangleResult disentangle(const Model& m, std::span<const Utterance> utterances,
                              const DisentangleConfig& cfg) {
  cfg.validate(m.cfg);
  const int n = static_cast<int>(utterances.size());
  if (n == 0) throw DataError("cannot disentangle an empty dialogue");

  DisentangleResult res;
  res.links.resize(static_cast<size_t>(n));

  auto predict_range = [&](int lo, int hi) {
    for (int t = lo; t < hi; ++t) {
      const int start = std::max(0, t - cfg.window);
      res.links[static_cast<size_t>(t)] =
          predict_link(m, utterances.subspan(static_cast<size_t>(start),
                                             static_cast<size_t>(t - start)),
                       utterances[static_cast<size_t>(t)]);
    }
  };

  if (cfg.jobs == 1 || n <= cfg.batch) {
    predict_range(0, n);
  } else {
    // Fixed-size chunks handed to a worker pool; each chunk writes disjoint
    // indices, so the result is identical to the serial order.
    std::vector<std::pair<int, int>> chunks;
    for (int lo = 0; lo < n; lo += cfg.batch) chunks.emplace_back(lo, std::min(n, lo + cfg.batch));
    std::atomic<size_t> next{0};
    auto worker = [&] {
      while (true) {
        const size_t i = next.fetch_add(1);
        if (i >= chunks.size()) return;
        predict_range(chunks[i].first, chunks[i].second);
      }
    };
    std::vector<std::thread> pool;
    const int n_workers = std::min<int>(cfg.jobs, static_cast<int>(chunks.size()));
    pool.reserve(static_cast<size_t>(n_workers));
    for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  res.partition = partition_from_links(res.links, n);
  return res;
}

}  // namespace detangle
