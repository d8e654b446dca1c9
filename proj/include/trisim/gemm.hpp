// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <vector>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace trisim {

// Dense row-major matrix kernels, cache-blocked for the shapes the lowered
// convolutions produce (one tiny dimension, one huge one). Every C element is
// accumulated in a code-fixed order, so results are identical for any thread
// count: threads partition output rows, never a reduction.

namespace gemm_detail {

inline constexpr std::int64_t kColBlock = 512;  // chunk kept hot across rows

struct RowRange {
  std::int64_t lo = 0, hi = 0;
};

inline RowRange my_rows(std::int64_t m) {
#if defined(_OPENMP)
  const std::int64_t nt = omp_get_num_threads();
  const std::int64_t tid = omp_get_thread_num();
  const std::int64_t chunk = (m + nt - 1) / nt;
  return {std::min(m, tid * chunk), std::min(m, (tid + 1) * chunk)};
#else
  return {0, m};
#endif
}

}  // namespace gemm_detail

// C[MxN] = A[MxK] * B[KxN] (optionally accumulating into C). Per element the
// sum runs over k strictly ascending; column blocking only reorders the walk
// across elements.
template <typename S>
void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const S* a, const S* b, S* c,
             bool accumulate = false) {
  const std::int64_t nb = gemm_detail::kColBlock;
#if defined(_OPENMP)
#pragma omp parallel if (m > 1 && m * n * k > 262144)
#endif
  {
    const auto [row_lo, row_hi] = gemm_detail::my_rows(m);
    for (std::int64_t j0 = 0; j0 < n; j0 += nb) {
      const std::int64_t jn = std::min(nb, n - j0);
      for (std::int64_t i = row_lo; i < row_hi; ++i) {
        S* crow = c + i * n + j0;
        if (!accumulate) {
          for (std::int64_t j = 0; j < jn; ++j) crow[j] = S(0);
        }
        const S* arow = a + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
          const S av = arow[p];
          const S* brow = b + p * n + j0;
          for (std::int64_t j = 0; j < jn; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

// C[MxN] = A[KxM]^T * B[KxN]; identical structure with A read down a column.
template <typename S>
void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k, const S* a, const S* b, S* c,
             bool accumulate = false) {
  const std::int64_t nb = gemm_detail::kColBlock;
#if defined(_OPENMP)
#pragma omp parallel if (m > 1 && m * n * k > 262144)
#endif
  {
    const auto [row_lo, row_hi] = gemm_detail::my_rows(m);
    for (std::int64_t j0 = 0; j0 < n; j0 += nb) {
      const std::int64_t jn = std::min(nb, n - j0);
      for (std::int64_t i = row_lo; i < row_hi; ++i) {
        S* crow = c + i * n + j0;
        if (!accumulate) {
          for (std::int64_t j = 0; j < jn; ++j) crow[j] = S(0);
        }
        for (std::int64_t p = 0; p < k; ++p) {
          const S av = a[p * m + i];
          const S* brow = b + p * n + j0;
          for (std::int64_t j = 0; j < jn; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

namespace gemm_detail {

// 2x2 register-blocked chunk of dot products; the four reductions share their
// operand loads. `omp simd` fixes a per-build vector reduction order.
template <typename S>
inline void dot2x2(const S* a0, const S* a1, const S* b0, const S* b1, std::int64_t len, S& d00,
                   S& d01, S& d10, S& d11) {
  S s00 = S(0), s01 = S(0), s10 = S(0), s11 = S(0);
#if defined(_OPENMP)
#pragma omp simd reduction(+ : s00, s01, s10, s11)
#endif
  for (std::int64_t p = 0; p < len; ++p) {
    s00 += a0[p] * b0[p];
    s01 += a0[p] * b1[p];
    s10 += a1[p] * b0[p];
    s11 += a1[p] * b1[p];
  }
  d00 += s00;
  d01 += s01;
  d10 += s10;
  d11 += s11;
}

template <typename S>
inline S dot1(const S* a, const S* b, std::int64_t len) {
  S s = S(0);
#if defined(_OPENMP)
#pragma omp simd reduction(+ : s)
#endif
  for (std::int64_t p = 0; p < len; ++p) s += a[p] * b[p];
  return s;
}

}  // namespace gemm_detail

// C[MxN] = A[MxK] * B[NxK]^T. Dot-product form, chunked over the (often very
// large) reduction dimension so operand slices stay cache-hot; chunk partials
// combine in ascending order.
template <typename S>
void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const S* a, const S* b, S* c,
             bool accumulate = false) {
  const std::int64_t kb = gemm_detail::kColBlock;
  if (!accumulate) {
    for (std::int64_t i = 0; i < m * n; ++i) c[i] = S(0);
  }
#if defined(_OPENMP)
#pragma omp parallel if (m > 1 && m * n * k > 262144)
#endif
  {
    const auto [row_lo, row_hi] = gemm_detail::my_rows(m);
    for (std::int64_t p0 = 0; p0 < k; p0 += kb) {
      const std::int64_t pn = std::min(kb, k - p0);
      std::int64_t i = row_lo;
      for (; i + 2 <= row_hi; i += 2) {
        const S* a0 = a + i * k + p0;
        const S* a1 = a0 + k;
        S* c0 = c + i * n;
        S* c1 = c0 + n;
        std::int64_t j = 0;
        for (; j + 2 <= n; j += 2) {
          const S* b0 = b + j * k + p0;
          gemm_detail::dot2x2<S>(a0, a1, b0, b0 + k, pn, c0[j], c0[j + 1], c1[j], c1[j + 1]);
        }
        for (; j < n; ++j) {
          const S* b0 = b + j * k + p0;
          c0[j] += gemm_detail::dot1<S>(a0, b0, pn);
          c1[j] += gemm_detail::dot1<S>(a1, b0, pn);
        }
      }
      for (; i < row_hi; ++i) {
        const S* a0 = a + i * k + p0;
        S* c0 = c + i * n;
        for (std::int64_t j = 0; j < n; ++j)
          c0[j] += gemm_detail::dot1<S>(a0, b + j * k + p0, pn);
      }
    }
  }
}

template <typename S>
std::vector<S> transpose(std::int64_t rows, std::int64_t cols, const S* a) {
  std::vector<S> t(static_cast<std::size_t>(rows * cols));
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
  return t;
}

}  // namespace trisim
