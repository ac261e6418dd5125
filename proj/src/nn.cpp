#include "detangle/nn.hpp"

#include <cmath>
#include <string>

#include "detangle/errors.hpp"

namespace detangle {

void MlpParams::validate() const {
  if (layers.empty()) throw DimensionError("mlp has no layers");
  if (hidden_act.size() + 1 != layers.size())
    throw DimensionError("mlp needs one activation per hidden layer");
  for (size_t i = 0; i < layers.size(); ++i) {
    const Linear& l = layers[i];
    if (l.b.rows != 1 || l.b.cols != l.w.cols) throw DimensionError("mlp bias shape");
    if (i > 0 && layers[i - 1].w.cols != l.w.rows)
      throw DimensionError("mlp layer dims do not chain at layer " + std::to_string(i));
  }
}

MlpParams MlpParams::make(const std::vector<int>& dims, Act act) {
  if (dims.size() < 2) throw DimensionError("mlp needs at least input and output dims");
  MlpParams p;
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    p.layers.push_back({Matrix(dims[i], dims[i + 1]), Matrix(1, dims[i + 1])});
    if (i + 2 < dims.size()) p.hidden_act.push_back(act);
  }
  return p;
}

namespace {

double act_apply(Act a, double x) { return a == Act::Tanh ? std::tanh(x) : (x > 0.0 ? x : 0.0); }

// Derivative in terms of the pre-activation value.
double act_deriv(Act a, double pre) {
  if (a == Act::Tanh) {
    const double t = std::tanh(pre);
    return 1.0 - t * t;
  }
  return pre > 0.0 ? 1.0 : 0.0;
}

Matrix linear_forward(const Linear& l, const Matrix& x) {
  Matrix y = matmul(x, l.w);
  for (int i = 0; i < y.rows; ++i)
    for (int j = 0; j < y.cols; ++j) y(i, j) += l.b(0, j);
  return y;
}

// Accumulates dW, db; returns dX.
Matrix linear_backward(const Linear& l, const Matrix& x, const Matrix& dy, Linear& grads) {
  axpy(grads.w, matmul_tn(x, dy));
  for (int i = 0; i < dy.rows; ++i)
    for (int j = 0; j < dy.cols; ++j) grads.b(0, j) += dy(i, j);
  return matmul_nt(dy, l.w);
}

}  // namespace

Matrix mlp_forward(const MlpParams& p, const Matrix& x, MlpCache* cache) {
  if (x.cols != p.in_dim()) throw DimensionError("mlp input dim mismatch");
  if (cache) {
    cache->inputs.clear();
    cache->preacts.clear();
  }
  Matrix cur = x;
  for (size_t i = 0; i < p.layers.size(); ++i) {
    if (cache) cache->inputs.push_back(cur);
    Matrix pre = linear_forward(p.layers[i], cur);
    if (cache) cache->preacts.push_back(pre);
    if (i + 1 < p.layers.size()) {
      const Act a = p.hidden_act[i];
      for (double& v : pre.data) v = act_apply(a, v);
    }
    cur = std::move(pre);
  }
  return cur;
}

Matrix mlp_backward(const MlpParams& p, const MlpCache& cache, const Matrix& dy,
                    MlpParams& grads) {
  if (cache.inputs.size() != p.layers.size())
    throw NumericalError("mlp backward without matching forward cache");
  Matrix d = dy;
  for (size_t ri = p.layers.size(); ri-- > 0;) {
    if (ri + 1 < p.layers.size()) {
      const Act a = p.hidden_act[ri];
      const Matrix& pre = cache.preacts[ri];
      for (size_t i = 0; i < d.data.size(); ++i) d.data[i] *= act_deriv(a, pre.data[i]);
    }
    d = linear_backward(p.layers[ri], cache.inputs[ri], d, grads.layers[ri]);
  }
  return d;
}

Matrix layernorm_forward(const LayerNormParams& p, const Matrix& x, LayerNormCache* cache) {
  if (p.gain.cols != x.cols) throw DimensionError("layernorm dim mismatch");
  Matrix y(x.rows, x.cols);
  Matrix normalized(x.rows, x.cols);
  std::vector<double> sigmas(x.rows);
  for (int i = 0; i < x.rows; ++i) {
    const double* xr = x.row(i);
    double mu = 0.0;
    for (int j = 0; j < x.cols; ++j) mu += xr[j];
    mu /= x.cols;
    double var = 0.0;
    for (int j = 0; j < x.cols; ++j) {
      const double c = xr[j] - mu;
      var += c * c;
    }
    var /= x.cols;
    const double sigma = std::sqrt(var + kLayerNormEps);
    sigmas[i] = sigma;
    for (int j = 0; j < x.cols; ++j) {
      const double n = (xr[j] - mu) / sigma;
      normalized(i, j) = n;
      y(i, j) = p.gain(0, j) * n + p.bias(0, j);
    }
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->sigma = std::move(sigmas);
  }
  return y;
}

Matrix layernorm_backward(const LayerNormParams& p, const LayerNormCache& cache,
                          const Matrix& dy, LayerNormParams& grads) {
  const Matrix& nrm = cache.normalized;
  Matrix dx(dy.rows, dy.cols);
  const int d = dy.cols;
  for (int i = 0; i < dy.rows; ++i) {
    double mean_dn = 0.0, mean_dn_n = 0.0;
    for (int j = 0; j < d; ++j) {
      const double dn = dy(i, j) * p.gain(0, j);
      mean_dn += dn;
      mean_dn_n += dn * nrm(i, j);
      grads.gain(0, j) += dy(i, j) * nrm(i, j);
      grads.bias(0, j) += dy(i, j);
    }
    mean_dn /= d;
    mean_dn_n /= d;
    const double inv_sigma = 1.0 / cache.sigma[i];
    for (int j = 0; j < d; ++j) {
      const double dn = dy(i, j) * p.gain(0, j);
      dx(i, j) = inv_sigma * (dn - mean_dn - nrm(i, j) * mean_dn_n);
    }
  }
  return dx;
}

void TransformerLayerParams::validate() const {
  const int d = dim();
  if (n_heads < 1 || d % n_heads != 0)
    throw DimensionError("model dim must be divisible by head count");
  const int dh = d / n_heads;
  if (static_cast<int>(wq.size()) != n_heads || static_cast<int>(wk.size()) != n_heads ||
      static_cast<int>(wv.size()) != n_heads)
    throw DimensionError("one q/k/v projection per head required");
  for (int h = 0; h < n_heads; ++h) {
    for (const Matrix* m : {&wq[h], &wk[h], &wv[h]})
      if (m->rows != d || m->cols != dh) throw DimensionError("head projection shape");
  }
  if (wo.rows != d || wo.cols != d) throw DimensionError("output projection shape");
  ff.validate();
  if (ff.in_dim() != d || ff.out_dim() != d) throw DimensionError("feed-forward dims");
}

TransformerLayerParams TransformerLayerParams::make(int dim, int n_heads, int ff_hidden,
                                                    Act ff_act) {
  if (n_heads < 1 || dim % n_heads != 0)
    throw DimensionError("model dim must be divisible by head count");
  TransformerLayerParams p;
  p.n_heads = n_heads;
  const int dh = dim / n_heads;
  for (int h = 0; h < n_heads; ++h) {
    p.wq.emplace_back(dim, dh);
    p.wk.emplace_back(dim, dh);
    p.wv.emplace_back(dim, dh);
  }
  p.wo = Matrix(dim, dim);
  p.ff = MlpParams::make({dim, ff_hidden, dim}, ff_act);
  p.ln1 = {Matrix(1, dim), Matrix(1, dim)};
  p.ln2 = {Matrix(1, dim), Matrix(1, dim)};
  return p;
}

Matrix transformer_forward(const TransformerLayerParams& p, const Matrix& x,
                           TransformerCache* cache) {
  const int d = p.dim();
  if (x.cols != d) throw DimensionError("transformer input dim mismatch");
  const int n_heads = p.n_heads;
  const int dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  TransformerCache local;
  TransformerCache& c = cache ? *cache : local;
  c.q.assign(n_heads, {});
  c.k.assign(n_heads, {});
  c.v.assign(n_heads, {});
  c.probs.assign(n_heads, {});

  c.h1 = layernorm_forward(p.ln1, x, &c.ln1);
  c.z = Matrix(x.rows, d);
  for (int h = 0; h < n_heads; ++h) {
    c.q[h] = matmul(c.h1, p.wq[h]);
    c.k[h] = matmul(c.h1, p.wk[h]);
    c.v[h] = matmul(c.h1, p.wv[h]);
    Matrix scores = matmul_nt(c.q[h], c.k[h]);
    for (double& s : scores.data) s *= scale;
    softmax_rows_inplace(scores);
    c.probs[h] = std::move(scores);
    Matrix zh = matmul(c.probs[h], c.v[h]);
    for (int i = 0; i < x.rows; ++i)
      for (int j = 0; j < dh; ++j) c.z(i, h * dh + j) = zh(i, j);
  }
  c.x2 = matmul(c.z, p.wo);
  axpy(c.x2, x);
  c.n2 = layernorm_forward(p.ln2, c.x2, &c.ln2);
  Matrix y = mlp_forward(p.ff, c.n2, &c.ff);
  axpy(y, c.x2);
  return y;
}

Matrix transformer_backward(const TransformerLayerParams& p, const TransformerCache& cache,
                            const Matrix& dy, TransformerLayerParams& grads) {
  const int d = p.dim();
  const int n_heads = p.n_heads;
  const int dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const int rows = dy.rows;

  // y = x2 + ff(ln2(x2))
  Matrix dn2 = mlp_backward(p.ff, cache.ff, dy, grads.ff);
  Matrix dx2 = layernorm_backward(p.ln2, cache.ln2, dn2, grads.ln2);
  axpy(dx2, dy);

  // x2 = x + z * wo
  Matrix dz = matmul_nt(dx2, p.wo);
  axpy(grads.wo, matmul_tn(cache.z, dx2));

  Matrix dh1(rows, d);
  for (int h = 0; h < n_heads; ++h) {
    Matrix dzh(rows, dh);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < dh; ++j) dzh(i, j) = dz(i, h * dh + j);

    // z_h = probs * v
    Matrix dprobs = matmul_nt(dzh, cache.v[h]);
    Matrix dv = matmul_tn(cache.probs[h], dzh);
    Matrix dscores(rows, rows);
    softmax_rows_backward(cache.probs[h], dprobs, dscores);
    for (double& s : dscores.data) s *= scale;

    // scores = q * k^T
    Matrix dq = matmul(dscores, cache.k[h]);
    Matrix dk = matmul_tn(dscores, cache.q[h]);

    axpy(grads.wq[h], matmul_tn(cache.h1, dq));
    axpy(grads.wk[h], matmul_tn(cache.h1, dk));
    axpy(grads.wv[h], matmul_tn(cache.h1, dv));

    axpy(dh1, matmul_nt(dq, p.wq[h]));
    axpy(dh1, matmul_nt(dk, p.wk[h]));
    axpy(dh1, matmul_nt(dv, p.wv[h]));
  }

  Matrix dx = layernorm_backward(p.ln1, cache.ln1, dh1, grads.ln1);
  axpy(dx, dx2);
  return dx;
}

void collect_tensors(Linear& p, const std::string& prefix, std::vector<TensorRef>& out) {
  out.push_back({prefix + "/w", &p.w});
  out.push_back({prefix + "/b", &p.b});
}

void collect_tensors(MlpParams& p, const std::string& prefix, std::vector<TensorRef>& out) {
  for (size_t i = 0; i < p.layers.size(); ++i)
    collect_tensors(p.layers[i], prefix + "/l" + std::to_string(i), out);
}

void collect_tensors(LayerNormParams& p, const std::string& prefix,
                     std::vector<TensorRef>& out) {
  out.push_back({prefix + "/gain", &p.gain});
  out.push_back({prefix + "/bias", &p.bias});
}

void collect_tensors(TransformerLayerParams& p, const std::string& prefix,
                     std::vector<TensorRef>& out) {
  for (int h = 0; h < p.n_heads; ++h) {
    const std::string hp = prefix + "/h" + std::to_string(h);
    out.push_back({hp + "/wq", &p.wq[h]});
    out.push_back({hp + "/wk", &p.wk[h]});
    out.push_back({hp + "/wv", &p.wv[h]});
  }
  out.push_back({prefix + "/wo", &p.wo});
  collect_tensors(p.ff, prefix + "/ff", out);
  collect_tensors(p.ln1, prefix + "/ln1", out);
  collect_tensors(p.ln2, prefix + "/ln2", out);
}

GradCheckResult grad_check(std::vector<TensorRef> params, const std::vector<TensorRef>& analytic,
                           const std::function<double()>& eval, double h) {
  if (h <= 0.0) throw NumericalError("grad_check requires h > 0");
  if (params.size() != analytic.size())
    throw DimensionError("grad_check: params and analytic gradients misaligned");
  GradCheckResult res;
  for (size_t t = 0; t < params.size(); ++t) {
    Matrix& m = *params[t].tensor;
    const Matrix& g = *analytic[t].tensor;
    if (!m.same_shape(g)) throw DimensionError("grad_check: shape mismatch at " + params[t].name);
    for (size_t i = 0; i < m.data.size(); ++i) {
      const double saved = m.data[i];
      m.data[i] = saved + h;
      const double fp = eval();
      m.data[i] = saved - h;
      const double fm = eval();
      m.data[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericalError("grad_check: objective not finite near " + params[t].name);
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic_v = g.data[i];
      const double denom = std::max({std::abs(analytic_v), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic_v - numeric) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_tensor = params[t].name;
        res.worst_index = static_cast<int>(i);
      }
    }
  }
  return res;
}

double numeric_derivative(const std::function<double(double)>& f, double x, double h) {
  if (h <= 0.0) throw NumericalError("numeric_derivative requires h > 0");
  const double fp = f(x + h), fm = f(x - h);
  if (!std::isfinite(fp) || !std::isfinite(fm))
    throw NumericalError("numeric_derivative: function not finite near x");
  return (fp - fm) / (2.0 * h);
}

double logistic(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace detangle
