#include "detangle/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "detangle/errors.hpp"

namespace detangle {

bool Matrix::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

namespace {
void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError("dimension mismatch: " + what);
}
}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols == b.rows, "matmul " + std::to_string(a.cols) + " vs " + std::to_string(b.rows));
  Matrix c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    double* crow = c.row(i);
    const double* arow = a.row(i);
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.row(k);
      for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require(a.cols == b.cols, "matmul_nt inner");
  Matrix c(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row(i);
    double* crow = c.row(i);
    for (int j = 0; j < b.rows; ++j) {
      const double* brow = b.row(j);
      double s = 0.0;
      for (int k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
      crow[j] = s;
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  require(a.rows == b.rows, "matmul_tn inner");
  Matrix c(a.cols, b.cols);
  for (int k = 0; k < a.rows; ++k) {
    const double* arow = a.row(k);
    const double* brow = b.row(k);
    for (int i = 0; i < a.cols; ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* crow = c.row(i);
      for (int j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
    }
  }
  return c;
}

void axpy(Matrix& y, const Matrix& x, double alpha) {
  require(y.same_shape(x), "axpy shapes");
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += alpha * x.data[i];
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dot lengths");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> softmax(std::span<const double> v) {
  if (v.empty()) throw DimensionError("softmax of empty vector");
  const double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double z = 0.0;
  for (size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    z += out[i];
  }
  for (double& x : out) x /= z;
  return out;
}

std::vector<double> softmax_backward(std::span<const double> probs,
                                     std::span<const double> dprobs) {
  require(probs.size() == dprobs.size(), "softmax_backward lengths");
  const double inner = dot(dprobs, probs);
  std::vector<double> dlogits(probs.size());
  for (size_t i = 0; i < probs.size(); ++i) dlogits[i] = probs[i] * (dprobs[i] - inner);
  return dlogits;
}

void softmax_rows_inplace(Matrix& m) {
  for (int i = 0; i < m.rows; ++i) {
    auto row = m.row_span(i);
    auto sm = softmax(row);
    std::copy(sm.begin(), sm.end(), row.begin());
  }
}

void softmax_rows_backward(const Matrix& probs, const Matrix& dprobs, Matrix& dlogits) {
  require(probs.same_shape(dprobs) && probs.same_shape(dlogits), "softmax_rows_backward shapes");
  for (int i = 0; i < probs.rows; ++i) {
    auto d = softmax_backward(probs.row_span(i), dprobs.row_span(i));
    std::copy(d.begin(), d.end(), dlogits.row(i));
  }
}

}  // namespace detangle
