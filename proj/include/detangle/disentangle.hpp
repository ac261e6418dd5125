#pragma once

#include <span>
#include <vector>

#include "detangle/data.hpp"
#include "detangle/model.hpp"

namespace detangle {

struct DisentangleConfig {
  int window = 8;  // preceding utterances visible per prediction
  int batch = 32;  // predictions per parallel work unit
  int jobs = 1;    // worker threads; results are index-ordered, so jobs does
                   // not change the output

  void validate(const ModelConfig& model_cfg) const;
};

// Argmax over the attention weights of a single-candidate pass: positions
// 0..n-1 link to the corresponding context utterance, position n is a
// self-link. Ties resolve to the lowest index. An empty context forces a
// self-link without running the model.
ReplyLink predict_link(const Model& m, std::span<const Utterance> context,
                       const Utterance& current);

struct DisentangleResult {
  std::vector<ReplyLink> links;  // exactly one per utterance
  ThreadPartition partition;
};

// Slides a window over the dialogue, predicts one parent per utterance, and
// groups threads by connected components. Takes bare utterances so gold
// annotations cannot leak into prediction.
DisentangleResult disentangle(const Model& m, std::span<const Utterance> utterances,
                              const DisentangleConfig& cfg);

}  // namespace detangle
