#include "detangle/model.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "detangle/checkpoint.hpp"
#include "detangle/errors.hpp"
#include "detangle/rng.hpp"

namespace detangle {

void ModelConfig::validate() const {
  if (vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
  if (embed_dim < 1 || model_dim < 1) throw ConfigError("embedding dims must be >= 1");
  if (n_heads < 1 || model_dim % n_heads != 0)
    throw ConfigError("model_dim must be divisible by n_heads");
  if (max_context < 1) throw ConfigError("max_context must be >= 1");
  if (ff_hidden < 1 || attn_mlp_hidden < 1 || scorer_mlp_hidden < 1)
    throw ConfigError("hidden sizes must be >= 1");
}

namespace {

constexpr double kInitRange = 0.08;

void fill_uniform(Matrix& m, Rng& rng) {
  for (double& v : m.data) v = (rng.uniform() * 2.0 - 1.0) * kInitRange;
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams p;
  p.token_embed = Matrix(cfg.vocab_size, cfg.embed_dim);
  p.role_embed = Matrix(2, cfg.embed_dim);
  p.pos_embed = Matrix(cfg.max_context + 1, cfg.model_dim);
  p.pair_proj = {Matrix(cfg.embed_dim, cfg.model_dim), Matrix(1, cfg.model_dim)};
  p.pair_inter = Matrix(cfg.embed_dim, cfg.model_dim);
  p.context_layer =
      TransformerLayerParams::make(cfg.model_dim, cfg.n_heads, cfg.ff_hidden, Act::Tanh);
  p.attn_mlp = MlpParams::make({cfg.model_dim, cfg.attn_mlp_hidden, 1}, Act::Tanh);
  p.score_mlp = MlpParams::make({cfg.model_dim, cfg.scorer_mlp_hidden, 1}, Act::Tanh);

  // Biases stay zero and layer-norm gains start at one (gains inside the
  // sampling range leave the attention and feed-forward branches too weak to
  // escape the constant-predictor plateau); everything else is sampled.
  Rng rng(cfg.seed);
  fill_uniform(p.token_embed, rng);
  fill_uniform(p.role_embed, rng);
  fill_uniform(p.pos_embed, rng);
  fill_uniform(p.pair_proj.w, rng);
  fill_uniform(p.pair_inter, rng);
  for (int h = 0; h < cfg.n_heads; ++h) {
    fill_uniform(p.context_layer.wq[static_cast<size_t>(h)], rng);
    fill_uniform(p.context_layer.wk[static_cast<size_t>(h)], rng);
    fill_uniform(p.context_layer.wv[static_cast<size_t>(h)], rng);
  }
  fill_uniform(p.context_layer.wo, rng);
  for (auto& l : p.context_layer.ff.layers) fill_uniform(l.w, rng);
  p.context_layer.ln1.gain.fill(1.0);
  p.context_layer.ln2.gain.fill(1.0);
  for (auto& l : p.attn_mlp.layers) fill_uniform(l.w, rng);
  for (auto& l : p.score_mlp.layers) fill_uniform(l.w, rng);
  return p;
}

Model init_model(const ModelConfig& cfg) { return Model{cfg, init_params(cfg)}; }

std::vector<TensorRef> tensor_refs(ModelParams& p) {
  std::vector<TensorRef> refs;
  refs.push_back({"embed/token", &p.token_embed});
  refs.push_back({"embed/role", &p.role_embed});
  refs.push_back({"embed/pos", &p.pos_embed});
  collect_tensors(p.pair_proj, "pair_proj", refs);
  refs.push_back({"pair_proj/inter", &p.pair_inter});
  collect_tensors(p.context_layer, "context", refs);
  collect_tensors(p.attn_mlp, "attn_mlp", refs);
  collect_tensors(p.score_mlp, "score_mlp", refs);
  return refs;
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  auto refs = tensor_refs(z);
  for (auto& r : refs) r.tensor->zero();
  return z;
}

namespace {

// Mean of (token + role) embeddings over one side of a pair.
void side_mean(const Model& m, const Utterance& u, int role, double* mean_out,
               std::vector<std::pair<int, int>>* tokens_out) {
  const int ed = m.cfg.embed_dim;
  std::fill(mean_out, mean_out + ed, 0.0);
  if (u.tokens.empty()) throw DimensionError("utterance with no tokens");
  const double* r = m.params.role_embed.row(role);
  for (int tok : u.tokens) {
    if (tok < 0 || tok >= m.cfg.vocab_size)
      throw VocabError("token id " + std::to_string(tok) + " outside vocabulary of size " +
                       std::to_string(m.cfg.vocab_size));
    const double* e = m.params.token_embed.row(tok);
    for (int j = 0; j < ed; ++j) mean_out[j] += e[j] + r[j];
    if (tokens_out) tokens_out->emplace_back(tok, role);
  }
  const double inv = 1.0 / static_cast<double>(u.tokens.size());
  for (int j = 0; j < ed; ++j) mean_out[j] *= inv;
}

// V = mean(pair) * W + (left ⊙ right) * W_inter + b, where mean(pair) is the
// token-count-weighted combination of the side means.
void project_row(const Model& m, const double* left, const double* right, double wl,
                 double wr, double* out) {
  const int ed = m.cfg.embed_dim, md = m.cfg.model_dim;
  for (int j = 0; j < md; ++j) out[j] = m.params.pair_proj.b(0, j);
  for (int i = 0; i < ed; ++i) {
    const double mi = wl * left[i] + wr * right[i];
    const double hi = left[i] * right[i];
    const double* wrow = m.params.pair_proj.w.row(i);
    const double* irow = m.params.pair_inter.row(i);
    for (int j = 0; j < md; ++j) out[j] += mi * wrow[j] + hi * irow[j];
  }
}

}  // namespace

std::vector<double> encode_pair(const Model& m, const Utterance& context_utt,
                                const Utterance& candidate) {
  const int ed = m.cfg.embed_dim;
  std::vector<double> left(static_cast<size_t>(ed)), right(static_cast<size_t>(ed));
  side_mean(m, context_utt, 0, left.data(), nullptr);
  side_mean(m, candidate, 1, right.data(), nullptr);
  const double total = static_cast<double>(context_utt.tokens.size() + candidate.tokens.size());
  std::vector<double> out(static_cast<size_t>(m.cfg.model_dim));
  project_row(m, left.data(), right.data(), context_utt.tokens.size() / total,
              candidate.tokens.size() / total, out.data());
  return out;
}

Trace forward(const Model& m, std::span<const Utterance> context, const Utterance& candidate) {
  const int n = static_cast<int>(context.size());
  if (n == 0) throw DimensionError("forward needs at least one context utterance");
  if (n > m.cfg.max_context)
    throw CapacityError("context of " + std::to_string(n) + " utterances exceeds max_context " +
                        std::to_string(m.cfg.max_context));
  const int rows = n + 1;
  const int ed = m.cfg.embed_dim, md = m.cfg.model_dim;

  Trace tr;
  tr.n = n;
  tr.left_means = Matrix(rows, ed);
  tr.right_means = Matrix(rows, ed);
  tr.row_tokens.assign(static_cast<size_t>(rows), {});
  tr.pair_rows = Matrix(rows, md);

  for (int r = 0; r < rows; ++r) {
    const Utterance& left = r < n ? context[static_cast<size_t>(r)] : candidate;
    auto& toks = tr.row_tokens[static_cast<size_t>(r)];
    side_mean(m, left, 0, tr.left_means.row(r), &toks);
    side_mean(m, candidate, 1, tr.right_means.row(r), &toks);
    const double total = static_cast<double>(left.tokens.size() + candidate.tokens.size());
    project_row(m, tr.left_means.row(r), tr.right_means.row(r),
                left.tokens.size() / total, candidate.tokens.size() / total,
                tr.pair_rows.row(r));
  }

  // Context rows take their window slot; the self-pair takes the dedicated
  // final slot so it looks the same at every context length.
  Matrix psi_in = tr.pair_rows;
  for (int r = 0; r < rows; ++r) {
    const double* pe = m.params.pos_embed.row(r < n ? r : m.cfg.max_context);
    double* xr = psi_in.row(r);
    for (int j = 0; j < md; ++j) xr[j] += pe[j];
  }

  tr.ctx_rows = transformer_forward(m.params.context_layer, psi_in, &tr.psi_cache);

  if (m.cfg.uniform_attention) {
    tr.attn.assign(static_cast<size_t>(rows), 1.0 / rows);
  } else {
    Matrix logits = mlp_forward(m.params.attn_mlp, tr.ctx_rows, &tr.attn_cache);
    tr.attn_logits.resize(static_cast<size_t>(rows));
    for (int r = 0; r < rows; ++r) tr.attn_logits[static_cast<size_t>(r)] = logits(r, 0);
    tr.attn = softmax(tr.attn_logits);
  }
  double sum = 0.0;
  for (double a : tr.attn) sum += a;
  if (std::abs(sum - 1.0) > 1e-12 || !std::isfinite(sum))
    throw NumericalError("attention weights do not form a distribution");

  tr.pooled.assign(static_cast<size_t>(md), 0.0);
  for (int r = 0; r < rows; ++r) {
    const double a = tr.attn[static_cast<size_t>(r)];
    const double* cr = tr.ctx_rows.row(r);
    for (int j = 0; j < md; ++j) tr.pooled[static_cast<size_t>(j)] += a * cr[j];
  }

  Matrix pooled_m(1, md);
  std::memcpy(pooled_m.row(0), tr.pooled.data(), sizeof(double) * static_cast<size_t>(md));
  Matrix z = mlp_forward(m.params.score_mlp, pooled_m, &tr.score_cache);
  tr.score_logit = z(0, 0);
  if (!std::isfinite(tr.score_logit)) throw NumericalError("non-finite score logit");
  tr.score = logistic(tr.score_logit);
  return tr;
}

void backward(const Model& m, const Trace& tr, double dscore, std::span<const double> dattn,
              std::span<const double> dattn_logits, ModelParams& grads) {
  const int rows = tr.n + 1;
  const int ed = m.cfg.embed_dim, md = m.cfg.model_dim;
  if (!dattn.empty() && static_cast<int>(dattn.size()) != rows)
    throw DimensionError("dattn length mismatch");
  if (!dattn_logits.empty() && static_cast<int>(dattn_logits.size()) != rows)
    throw DimensionError("dattn_logits length mismatch");

  // score = logistic(score_logit)
  const double dlogit = dscore * tr.score * (1.0 - tr.score);
  Matrix dpooled(1, md);
  if (dlogit != 0.0) {
    Matrix dz(1, 1);
    dz(0, 0) = dlogit;
    dpooled = mlp_backward(m.params.score_mlp, tr.score_cache, dz, grads.score_mlp);
  }

  // pooled = sum_r attn_r * ctx_r
  Matrix dctx(rows, md);
  std::vector<double> dattn_total(static_cast<size_t>(rows), 0.0);
  for (size_t i = 0; i < dattn.size(); ++i) dattn_total[i] = dattn[i];
  const double* dp = dpooled.row(0);
  for (int r = 0; r < rows; ++r) {
    const double a = tr.attn[static_cast<size_t>(r)];
    const double* cr = tr.ctx_rows.row(r);
    double* dcr = dctx.row(r);
    double acc = 0.0;
    for (int j = 0; j < md; ++j) {
      dcr[j] = a * dp[j];
      acc += dp[j] * cr[j];
    }
    dattn_total[static_cast<size_t>(r)] += acc;
  }

  if (!m.cfg.uniform_attention) {
    // attn = softmax(attn_logits); attn_logits = attn_mlp(ctx_rows)
    std::vector<double> dlogits = softmax_backward(tr.attn, dattn_total);
    for (size_t i = 0; i < dattn_logits.size(); ++i) dlogits[i] += dattn_logits[i];
    Matrix dl(rows, 1);
    for (int r = 0; r < rows; ++r) dl(r, 0) = dlogits[static_cast<size_t>(r)];
    Matrix dctx_from_attn = mlp_backward(m.params.attn_mlp, tr.attn_cache, dl, grads.attn_mlp);
    axpy(dctx, dctx_from_attn);
  }
  // With uniform attention the weights are constant: upstream dattn and
  // dattn_logits legitimately vanish.

  Matrix dpsi_in =
      transformer_backward(m.params.context_layer, tr.psi_cache, dctx, grads.context_layer);

  // psi_in = pair_rows + position slot
  for (int r = 0; r < rows; ++r) {
    const double* drow = dpsi_in.row(r);
    double* gp = grads.pos_embed.row(r < tr.n ? r : m.cfg.max_context);
    for (int j = 0; j < md; ++j) gp[j] += drow[j];
  }

  // pair_rows = (wl*left + wr*right) * W + (left ⊙ right) * W_inter + b
  std::vector<double> wl(static_cast<size_t>(rows)), wr(static_cast<size_t>(rows));
  Matrix means_all(rows, ed), inter(rows, ed);
  for (int r = 0; r < rows; ++r) {
    size_t nl = 0;
    for (const auto& [tok, role] : tr.row_tokens[static_cast<size_t>(r)])
      if (role == 0) ++nl;
    const size_t total = tr.row_tokens[static_cast<size_t>(r)].size();
    wl[static_cast<size_t>(r)] = static_cast<double>(nl) / static_cast<double>(total);
    wr[static_cast<size_t>(r)] = 1.0 - wl[static_cast<size_t>(r)];
    const double* ml = tr.left_means.row(r);
    const double* mr = tr.right_means.row(r);
    for (int j = 0; j < ed; ++j) {
      means_all(r, j) = wl[static_cast<size_t>(r)] * ml[j] + wr[static_cast<size_t>(r)] * mr[j];
      inter(r, j) = ml[j] * mr[j];
    }
  }
  axpy(grads.pair_proj.w, matmul_tn(means_all, dpsi_in));
  axpy(grads.pair_inter, matmul_tn(inter, dpsi_in));
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < md; ++j) grads.pair_proj.b(0, j) += dpsi_in(r, j);
  const Matrix dmeans_all = matmul_nt(dpsi_in, m.params.pair_proj.w);
  const Matrix dinter = matmul_nt(dpsi_in, m.params.pair_inter);

  // side means are means over (token + role) embeddings
  for (int r = 0; r < rows; ++r) {
    const auto& toks = tr.row_tokens[static_cast<size_t>(r)];
    size_t nl = 0;
    for (const auto& [tok, role] : toks)
      if (role == 0) ++nl;
    const size_t nr = toks.size() - nl;
    const double* ml = tr.left_means.row(r);
    const double* mr = tr.right_means.row(r);
    const double* dma = dmeans_all.row(r);
    const double* dh = dinter.row(r);
    for (const auto& [tok, role] : toks) {
      double* gt = grads.token_embed.row(tok);
      double* gr = grads.role_embed.row(role);
      if (role == 0) {
        const double inv = 1.0 / static_cast<double>(nl);
        for (int j = 0; j < ed; ++j) {
          const double g = (wl[static_cast<size_t>(r)] * dma[j] + dh[j] * mr[j]) * inv;
          gt[j] += g;
          gr[j] += g;
        }
      } else {
        const double inv = 1.0 / static_cast<double>(nr);
        for (int j = 0; j < ed; ++j) {
          const double g = (wr[static_cast<size_t>(r)] * dma[j] + dh[j] * ml[j]) * inv;
          gt[j] += g;
          gr[j] += g;
        }
      }
    }
  }
}

namespace {

constexpr const char* kCfgTensor = "config/v1";

Matrix config_to_tensor(const ModelConfig& cfg) {
  Matrix m(1, 10);
  m(0, 0) = cfg.vocab_size;
  m(0, 1) = cfg.embed_dim;
  m(0, 2) = cfg.model_dim;
  m(0, 3) = cfg.n_heads;
  m(0, 4) = cfg.max_context;
  m(0, 5) = cfg.ff_hidden;
  m(0, 6) = cfg.attn_mlp_hidden;
  m(0, 7) = cfg.scorer_mlp_hidden;
  m(0, 8) = static_cast<double>(cfg.seed);
  m(0, 9) = cfg.uniform_attention ? 1.0 : 0.0;
  return m;
}

ModelConfig config_from_tensor(const Matrix& m, const std::string& path) {
  if (m.rows != 1 || m.cols != 10) throw ParseError("malformed model config in " + path);
  ModelConfig cfg;
  cfg.vocab_size = static_cast<int>(m(0, 0));
  cfg.embed_dim = static_cast<int>(m(0, 1));
  cfg.model_dim = static_cast<int>(m(0, 2));
  cfg.n_heads = static_cast<int>(m(0, 3));
  cfg.max_context = static_cast<int>(m(0, 4));
  cfg.ff_hidden = static_cast<int>(m(0, 5));
  cfg.attn_mlp_hidden = static_cast<int>(m(0, 6));
  cfg.scorer_mlp_hidden = static_cast<int>(m(0, 7));
  cfg.seed = static_cast<uint64_t>(m(0, 8));
  cfg.uniform_attention = m(0, 9) != 0.0;
  return cfg;
}

}  // namespace

void save_model(const std::string& path, const Model& m) {
  ModelParams& p = const_cast<ModelParams&>(m.params);
  auto refs = tensor_refs(p);
  const Matrix cfg_tensor = config_to_tensor(m.cfg);
  std::vector<std::pair<std::string, const Matrix*>> tensors;
  tensors.emplace_back(kCfgTensor, &cfg_tensor);
  for (const auto& r : refs) tensors.emplace_back(r.name, r.tensor);
  save_tensors(path, tensors);
}

Model load_model(const std::string& path) {
  auto tensors = load_tensors(path);
  const auto cfg_it = tensors.find(kCfgTensor);
  if (cfg_it == tensors.end()) throw ParseError("checkpoint lacks model config: " + path);
  Model m;
  m.cfg = config_from_tensor(cfg_it->second, path);
  m.cfg.validate();
  m.params = init_params(m.cfg);  // allocate correct shapes
  auto refs = tensor_refs(m.params);
  for (auto& r : refs) {
    const auto it = tensors.find(r.name);
    if (it == tensors.end())
      throw ParseError("checkpoint missing tensor '" + r.name + "': " + path);
    if (!r.tensor->same_shape(it->second))
      throw ParseError("checkpoint tensor '" + r.name + "' has shape " +
                       std::to_string(it->second.rows) + "x" + std::to_string(it->second.cols) +
                       ", config implies " + std::to_string(r.tensor->rows) + "x" +
                       std::to_string(r.tensor->cols) + ": " + path);
    *r.tensor = it->second;
    if (!r.tensor->all_finite())
      throw NumericalError("checkpoint tensor '" + r.name + "' contains non-finite values");
  }
  if (tensors.size() != refs.size() + 1)
    throw ParseError("checkpoint has unexpected extra tensors: " + path);
  return m;
}

}  // namespace detangle
