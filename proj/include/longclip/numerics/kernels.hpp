#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>

#include <Eigen/Core>

// Dense loops behind the graph primitives. Every kernel sums in an order fixed by the
// operand shapes, so results are bit-reproducible for identical inputs.
namespace longclip::numerics::kernels {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// c[m,n] += a[m,k] * b[k,n]
// Each output row is computed by the same instruction sequence wherever it sits, so
// identical input rows give bit-identical output rows. Forward passes rely on this.
template <typename T>
void gemm_acc(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m, std::size_t k,
              std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Gradient products below go through Eigen's blocked GEMM.

// c[k,n] += a[m,k]^T * d[m,n]
template <typename T>
void gemm_tn_acc(const T* a, const T* d, T* c, std::size_t m, std::size_t k, std::size_t n) {
  using Map = Eigen::Map<RowMajor<T>>;
  using ConstMap = Eigen::Map<const RowMajor<T>>;
  Map(c, k, n).noalias() += ConstMap(a, m, k).transpose() * ConstMap(d, m, n);
}

// c[m,k] += d[m,n] * b[k,n]^T
template <typename T>
void gemm_nt_acc(const T* d, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  using Map = Eigen::Map<RowMajor<T>>;
  using ConstMap = Eigen::Map<const RowMajor<T>>;
  Map(c, m, k).noalias() += ConstMap(d, m, n) * ConstMap(b, k, n).transpose();
}

// out[n,m] = in[m,n]^T
template <typename T>
void transpose(const T* __restrict in, T* __restrict out, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
  }
}

// Row softmax with max subtraction. `valid` (optional) masks columns to -inf.
template <typename T, typename M>
void softmax_row(const T* x, T* y, std::size_t n, const M* valid) {
  T max = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    if ((!valid || valid[j] != M{0}) && x[j] > max) max = x[j];
  }
  T total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const T e = (!valid || valid[j] != M{0}) ? std::exp(x[j] - max) : T{0};
    y[j] = e;
    total += e;
  }
  const T inv = T{1} / total;
  for (std::size_t j = 0; j < n; ++j) y[j] *= inv;
}

// dx = y * (dy - <dy, y>)
template <typename T>
void softmax_row_backward(const T* y, const T* dy, T* dx, std::size_t n) {
  T dot = 0;
  for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
  for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
}

template <typename T>
T logsumexp_row(const T* x, std::size_t n) {
  T max = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < n; ++j) max = x[j] > max ? x[j] : max;
  T total = 0;
  for (std::size_t j = 0; j < n; ++j) total += std::exp(x[j] - max);
  return max + std::log(total);
}

template <typename T>
T gelu(T x) {
  return T{0.5} * x * (T{1} + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
}

template <typename T>
T gelu_derivative(T x) {
  const T cdf = T{0.5} * (T{1} + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T{-0.5} * x * x) * static_cast<T>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

}  // namespace longclip::numerics::kernels
