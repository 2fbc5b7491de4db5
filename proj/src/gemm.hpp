#pragma once

#include <cstdint>

// Minimal row-major GEMM kernels used by conv2d and linear. All accumulate into C.

namespace pdseg::detail {

// C[M×N] += A[M×K] · B[K×N]
template <typename T>
void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c) {
  for (std::int64_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M×N] += Aᵀ · B with A stored K×M, B stored K×N
template <typename T>
void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c) {
  for (std::int64_t p = 0; p < k; ++p) {
    const T* brow = b + p * n;
    for (std::int64_t i = 0; i < m; ++i) {
      const T av = a[p * m + i];
      if (av == T(0)) continue;
      T* crow = c + i * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
T dot(const T* x, const T* y, std::int64_t n) {
  T s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
  std::int64_t j = 0;
  for (; j + 8 <= n; j += 8) {
    s0 += x[j] * y[j];
    s1 += x[j + 1] * y[j + 1];
    s2 += x[j + 2] * y[j + 2];
    s3 += x[j + 3] * y[j + 3];
    s4 += x[j + 4] * y[j + 4];
    s5 += x[j + 5] * y[j + 5];
    s6 += x[j + 6] * y[j + 6];
    s7 += x[j + 7] * y[j + 7];
  }
  for (; j < n; ++j) s0 += x[j] * y[j];
  return ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
}

// C[M×N] += A · Bᵀ with A stored M×K, B stored N×K
template <typename T>
void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c) {
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) c[i * n + j] += dot(a + i * k, b + j * k, k);
  }
}

}  // namespace pdseg::detail
