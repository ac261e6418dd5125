#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace detangle {

// Dense row-major matrix of doubles. Vectors are 1xN (or Nx1) matrices.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {}

  double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

  std::span<double> row_span(int r) { return {row(r), static_cast<size_t>(cols)}; }
  std::span<const double> row_span(int r) const { return {row(r), static_cast<size_t>(cols)}; }

  size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  void fill(double v) { std::fill(data.begin(), data.end(), v); }
  void zero() { fill(0.0); }

  bool operator==(const Matrix& o) const = default;

  bool all_finite() const;
};

// c = a * b, a: m x k, b: k x n. Throws DimensionError on mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);
// c = a * b^T, a: m x k, b: n x k.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// c = a^T * b, a: k x m, b: k x n.
Matrix matmul_tn(const Matrix& a, const Matrix& b);

// y += alpha * x (same shape).
void axpy(Matrix& y, const Matrix& x, double alpha = 1.0);

Matrix transpose(const Matrix& a);

double dot(std::span<const double> a, std::span<const double> b);

// Numerically stable softmax (max subtraction). Output sums to 1 within 1e-12.
// Throws DimensionError on empty input.
std::vector<double> softmax(std::span<const double> v);

// Given probs = softmax(logits) and upstream d(probs), return d(logits):
// d_j = p_j * (dp_j - sum_i dp_i p_i).
std::vector<double> softmax_backward(std::span<const double> probs,
                                     std::span<const double> dprobs);

// Row-wise softmax over a matrix (in place) and its backward.
void softmax_rows_inplace(Matrix& m);
void softmax_rows_backward(const Matrix& probs, const Matrix& dprobs, Matrix& dlogits);

}  // namespace detangle
