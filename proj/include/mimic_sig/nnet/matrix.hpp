#ifndef MIMIC_SIG_NNET_MATRIX_HPP_
#define MIMIC_SIG_NNET_MATRIX_HPP_

#include <cstddef>
#include <span>
#include <vector>

#include "mimic_sig/core.hpp"

namespace mimic_sig::nnet {

// Row-major dense matrix. Rows index the batch everywhere in this module.
template <class T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::span<const T> values)
      : rows(r), cols(c), data(values.begin(), values.end()) {
    if (values.size() != r * c) throw ShapeError("matrix data size mismatch");
  }

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  T* row(std::size_t r) { return data.data() + r * cols; }
  const T* row(std::size_t r) const { return data.data() + r * cols; }
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  bool operator==(const Matrix&) const = default;
};

namespace kernels {

// c += a * b
template <class T>
void gemm_nn(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m, std::size_t k,
             std::size_t n) {
  // 4 x 32 register tiles; the remainder falls back to row axpy.
  constexpr std::size_t MR = 4, NR = 32;
  const std::size_t m4 = m - m % MR, n32 = n - n % NR;
  for (std::size_t i0 = 0; i0 < m4; i0 += MR) {
    for (std::size_t j0 = 0; j0 < n32; j0 += NR) {
      T acc[MR][NR] = {};
      for (std::size_t p = 0; p < k; ++p) {
        const T* __restrict bp = b + p * n + j0;
        for (std::size_t r = 0; r < MR; ++r) {
          const T av = a[(i0 + r) * k + p];
          for (std::size_t j = 0; j < NR; ++j) acc[r][j] += av * bp[j];
        }
      }
      for (std::size_t r = 0; r < MR; ++r) {
        T* __restrict ci = c + (i0 + r) * n + j0;
        for (std::size_t j = 0; j < NR; ++j) ci[j] += acc[r][j];
      }
    }
  }
  auto axpy_rows = [&](std::size_t i_begin, std::size_t i_end, std::size_t j_begin) {
    for (std::size_t i = i_begin; i < i_end; ++i) {
      T* __restrict ci = c + i * n;
      const T* ai = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = ai[p];
        const T* __restrict bp = b + p * n;
        for (std::size_t j = j_begin; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  };
  if (n32 < n) axpy_rows(0, m4, n32);
  axpy_rows(m4, m, 0);
}

// c(k x n) += a(m x k)^T * g(m x n), four rows of a per pass over c. Zero
// entries of a (relu outputs, one-hot inputs) are skipped.
template <class T>
void gemm_tn(const T* __restrict a, const T* __restrict g, T* __restrict c, std::size_t m, std::size_t k,
             std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const T* __restrict g0 = g + i * n;
    const T* __restrict g1 = g0 + n;
    const T* __restrict g2 = g1 + n;
    const T* __restrict g3 = g2 + n;
    for (std::size_t p = 0; p < k; ++p) {
      const T a0 = a[i * k + p], a1 = a[(i + 1) * k + p], a2 = a[(i + 2) * k + p], a3 = a[(i + 3) * k + p];
      if (a0 == T(0) && a1 == T(0) && a2 == T(0) && a3 == T(0)) continue;
      T* __restrict cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += a0 * g0[j] + a1 * g1[j] + a2 * g2[j] + a3 * g3[j];
    }
  }
  for (; i < m; ++i) {
    const T* ai = a + i * k;
    const T* __restrict gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      if (av == T(0)) continue;
      T* __restrict cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

// c(m x k) += g(m x n) * b(k x n)^T, via an explicit transpose of b so the
// inner loop is a plain axpy.
template <class T>
void gemm_nt(const T* __restrict g, const T* __restrict b, T* __restrict c, std::size_t m, std::size_t k,
             std::size_t n) {
  std::vector<T> bt(n * k);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  }
  gemm_nn(g, bt.data(), c, m, n, k);
}

}  // namespace kernels

template <class T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols != b.rows) throw ShapeError("matmul inner dimensions differ");
  Matrix<T> c(a.rows, b.cols);
  kernels::gemm_nn(a.data.data(), b.data.data(), c.data.data(), a.rows, a.cols, b.cols);
  return c;
}

}  // namespace mimic_sig::nnet

#endif  // MIMIC_SIG_NNET_MATRIX_HPP_
