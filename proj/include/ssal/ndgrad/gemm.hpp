#pragma once

#include <cstddef>

// Register-blocked dense kernels for the convolution. Row-major throughout.
// Summation order is fixed, so results are bitwise reproducible run to run.

namespace ssal::ndgrad::gemm {

namespace detail {

template <std::size_t MB, std::size_t NB>
inline void nn_block(const double* a, const double* b, double* c, std::size_t k_dim,
                     std::size_t lda, std::size_t ldb, std::size_t ldc) {
  double acc[MB][NB] = {};
  for (std::size_t k = 0; k < k_dim; ++k) {
    const double* brow = b + k * ldb;
    for (std::size_t i = 0; i < MB; ++i) {
      const double av = a[i * lda + k];
      for (std::size_t j = 0; j < NB; ++j) acc[i][j] += av * brow[j];
    }
  }
  for (std::size_t i = 0; i < MB; ++i)
    for (std::size_t j = 0; j < NB; ++j) c[i * ldc + j] += acc[i][j];
}

template <std::size_t MB, std::size_t NB>
inline void nt_block(const double* a, const double* b, double* c, std::size_t k_dim,
                     std::size_t lda, std::size_t ldb, std::size_t ldc) {
  constexpr std::size_t V = 8;
  double acc[MB][NB][V] = {};
  std::size_t k = 0;
  for (; k + V <= k_dim; k += V)
    for (std::size_t i = 0; i < MB; ++i)
      for (std::size_t j = 0; j < NB; ++j)
        for (std::size_t v = 0; v < V; ++v) acc[i][j][v] += a[i * lda + k + v] * b[j * ldb + k + v];
  for (std::size_t i = 0; i < MB; ++i)
    for (std::size_t j = 0; j < NB; ++j) {
      const double* x = acc[i][j];
      double s = ((x[0] + x[1]) + (x[2] + x[3])) + ((x[4] + x[5]) + (x[6] + x[7]));
      for (std::size_t kk = k; kk < k_dim; ++kk) s += a[i * lda + kk] * b[j * ldb + kk];
      c[i * ldc + j] += s;
    }
}

}  // namespace detail

// C[M,N] += A[M,K] * B[K,N]
inline void nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n) {
  constexpr std::size_t NB = 32;
  std::size_t j = 0;
  for (; j + NB <= n; j += NB) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) detail::nn_block<4, NB>(a + i * k, b + j, c + i * n + j, k, k, n, n);
    for (; i < m; ++i) detail::nn_block<1, NB>(a + i * k, b + j, c + i * n + j, k, k, n, n);
  }
  if (j < n) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double av = a[i * k + kk];
        for (std::size_t jj = j; jj < n; ++jj) c[i * n + jj] += av * b[kk * n + jj];
      }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
inline void nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) detail::nt_block<4, 4>(a + i * k, b + j * k, c + i * n + j, k, k, k, n);
    for (; j < n; ++j) detail::nt_block<4, 1>(a + i * k, b + j * k, c + i * n + j, k, k, k, n);
  }
  for (; i < m; ++i) {
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) detail::nt_block<1, 4>(a + i * k, b + j * k, c + i * n + j, k, k, k, n);
    for (; j < n; ++j) detail::nt_block<1, 1>(a + i * k, b + j * k, c + i * n + j, k, k, k, n);
  }
}

}  // namespace ssal::ndgrad::gemm
