#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "detangle/data.hpp"
#include "detangle/linalg.hpp"
#include "detangle/nn.hpp"

namespace detangle {

struct ModelConfig {
  int vocab_size = 160;
  int embed_dim = 32;
  int model_dim = 32;
  int n_heads = 4;
  int max_context = 12;
  int ff_hidden = 32;
  int attn_mlp_hidden = 16;
  int scorer_mlp_hidden = 16;
  uint64_t seed = 1;
  // Ablation: replace attention pooling with uniform averaging. Attention
  // weights become the constant 1/(n+1) and carry no gradient.
  bool uniform_attention = false;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// All trainable tensors. A context of n utterances plus one candidate becomes
// n+1 pair rows: rows 0..n-1 encode (context utterance i, candidate), row n
// encodes the (candidate, candidate) self-pair whose attention weight means
// "replies to nothing visible".
//
// Pair rows carry two projections: the mean embedding of the concatenated
// pair, and the elementwise product of the two side means. The product term
// is what lets the encoder express token overlap between an utterance and
// the candidate; a purely additive encoding cannot represent it.
//
// Position slots: context row r takes pos_embed row r; the self-pair always
// takes the dedicated last slot (row max_context) regardless of context
// length, so "this is the self-pair" is readable across window sizes.
struct ModelParams {
  Matrix token_embed;  // vocab_size x embed_dim
  Matrix role_embed;   // 2 x embed_dim: row 0 left side, row 1 candidate side
  Matrix pos_embed;    // (max_context + 1) x model_dim
  Linear pair_proj;    // embed_dim -> model_dim, acts on the pair mean
  Matrix pair_inter;   // embed_dim -> model_dim, acts on the side-mean product
  TransformerLayerParams context_layer;
  MlpParams attn_mlp;   // model_dim -> hidden -> 1
  MlpParams score_mlp;  // model_dim -> hidden -> 1
};

struct Model {
  ModelConfig cfg;
  ModelParams params;
};

// Uniform [-0.08, 0.08] for embeddings and weight matrices (layer-norm gains
// included), zero biases. Deterministic per cfg.seed.
ModelParams init_params(const ModelConfig& cfg);

Model init_model(const ModelConfig& cfg);

// Stable names/order for checkpoints, optimizer slots and gradient checks.
std::vector<TensorRef> tensor_refs(ModelParams& p);
ModelParams zeros_like(const ModelParams& p);

// Everything one forward pass produces, plus the caches backward needs.
struct Trace {
  int n = 0;  // context length; row count is n + 1
  Matrix pair_rows;                 // projected pair vectors, before positions
  Matrix ctx_rows;                  // contextualized rows out of the transformer
  std::vector<double> attn_logits;  // per-row attention mlp output (empty when uniform)
  std::vector<double> attn;         // attention weights, sums to 1 within 1e-12
  std::vector<double> pooled;       // attention-weighted sum of ctx_rows
  double score_logit = 0.0;
  double score = 0.0;  // logistic(score_logit), strictly inside (0, 1)

  // backward caches
  Matrix left_means, right_means;  // per-row side means of token+role embeddings
  std::vector<std::vector<std::pair<int, int>>> row_tokens;  // (token id, role) per row
  TransformerCache psi_cache;
  MlpCache attn_cache, score_cache;
};

// Pair encoder: mean of token embeddings of the concatenated pair (side-role
// embeddings added) through pair_proj, plus the elementwise product of the
// two side means through pair_inter.
std::vector<double> encode_pair(const Model& m, const Utterance& context_utt,
                                const Utterance& candidate);

// Full pass over a context and one candidate. Requires 1 <= n <= max_context
// (DimensionError / CapacityError) and all token ids < vocab_size
// (VocabError).
Trace forward(const Model& m, std::span<const Utterance> context, const Utterance& candidate);

// Accumulates parameter gradients into `grads` given upstream gradients on
// the score, on the attention weights, and (for losses defined directly on
// attention logits) on the logits. Pass empty spans for unused slots.
void backward(const Model& m, const Trace& trace, double dscore,
              std::span<const double> dattn, std::span<const double> dattn_logits,
              ModelParams& grads);

// Checkpoints carry the config; loading validates it against the tensor
// shapes and fails hard on mismatch.
void save_model(const std::string& path, const Model& m);
Model load_model(const std::string& path);

}  // namespace detangle
