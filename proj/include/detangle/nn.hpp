#pragma once

#include <functional>
#include <string>
#include <vector>

#include "detangle/linalg.hpp"

namespace detangle {

enum class Act { Tanh, Relu };

// One affine layer: y = x * w + b. w is in x out, b is 1 x out.
struct Linear {
  Matrix w;
  Matrix b;
};

// Fully connected stack. hidden_act[i] applies after layer i; the final
// layer output is linear.
struct MlpParams {
  std::vector<Linear> layers;
  std::vector<Act> hidden_act;

  int in_dim() const { return layers.empty() ? 0 : layers.front().w.rows; }
  int out_dim() const { return layers.empty() ? 0 : layers.back().w.cols; }
  void validate() const;  // DimensionError unless consecutive dims chain

  static MlpParams make(const std::vector<int>& dims, Act act);  // zero-filled
};

struct MlpCache {
  std::vector<Matrix> inputs;   // input to each layer
  std::vector<Matrix> preacts;  // pre-activation output of each layer
};

// Row-wise forward: x is batch x in_dim. Caches intermediates when cache != nullptr.
Matrix mlp_forward(const MlpParams& p, const Matrix& x, MlpCache* cache = nullptr);

// Accumulates parameter gradients into `grads` (same shapes as p), returns dX.
Matrix mlp_backward(const MlpParams& p, const MlpCache& cache, const Matrix& dy,
                    MlpParams& grads);

struct LayerNormParams {
  Matrix gain;  // 1 x d
  Matrix bias;  // 1 x d
};

struct LayerNormCache {
  Matrix normalized;          // (x - mu) / sigma per row
  std::vector<double> sigma;  // per row, sqrt(var + eps)
};

constexpr double kLayerNormEps = 1e-5;

Matrix layernorm_forward(const LayerNormParams& p, const Matrix& x, LayerNormCache* cache);
Matrix layernorm_backward(const LayerNormParams& p, const LayerNormCache& cache,
                          const Matrix& dy, LayerNormParams& grads);

// Pre-norm self-attention block over row vectors:
//   h1 = layernorm1(x); per head: q=h1*wq, k=h1*wk, v=h1*wv,
//   z_head = softmax(q k^T / sqrt(dh)) v; x2 = x + concat(z) * wo;
//   y = x2 + ff(layernorm2(x2)).
// No positional information is added here; the block is permutation-equivariant.
struct TransformerLayerParams {
  int n_heads = 1;
  std::vector<Matrix> wq, wk, wv;  // per head: d x (d / n_heads)
  Matrix wo;                       // d x d
  MlpParams ff;
  LayerNormParams ln1, ln2;

  int dim() const { return wo.rows; }
  void validate() const;

  static TransformerLayerParams make(int dim, int n_heads, int ff_hidden, Act ff_act);
};

struct TransformerCache {
  LayerNormCache ln1, ln2;
  Matrix h1;                    // ln1 output
  std::vector<Matrix> q, k, v;  // per head
  std::vector<Matrix> probs;    // per head attention rows
  Matrix z;                     // concatenated head outputs
  Matrix x2;                    // residual after attention
  Matrix n2;                    // ln2 output
  MlpCache ff;
};

Matrix transformer_forward(const TransformerLayerParams& p, const Matrix& x,
                           TransformerCache* cache = nullptr);
Matrix transformer_backward(const TransformerLayerParams& p, const TransformerCache& cache,
                            const Matrix& dy, TransformerLayerParams& grads);

// Named view over every tensor in a parameter pack. Collection order is
// stable; it defines checkpoint layout and optimizer slot alignment.
struct TensorRef {
  std::string name;
  Matrix* tensor;
};

void collect_tensors(Linear& p, const std::string& prefix, std::vector<TensorRef>& out);
void collect_tensors(MlpParams& p, const std::string& prefix, std::vector<TensorRef>& out);
void collect_tensors(LayerNormParams& p, const std::string& prefix, std::vector<TensorRef>& out);
void collect_tensors(TransformerLayerParams& p, const std::string& prefix,
                     std::vector<TensorRef>& out);

// Central-difference gradient check.
//
// `params` and `analytic` must be aligned element-for-element. `eval`
// recomputes the scalar objective from the current parameter values; every
// coordinate is perturbed by +-h in turn. Relative error per coordinate is
// |a - n| / max(|a|, |n|, 1e-8).
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_tensor;
  int worst_index = -1;
};

GradCheckResult grad_check(std::vector<TensorRef> params,
                           const std::vector<TensorRef>& analytic,
                           const std::function<double()>& eval, double h);

// Derivative of a scalar function by central differences. Throws
// NumericalError when f is non-finite at the evaluation points.
double numeric_derivative(const std::function<double(double)>& f, double x, double h);

double logistic(double z);

}  // namespace detangle
