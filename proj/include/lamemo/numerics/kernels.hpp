// Copyright 2026 The lamemo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LAMEMO_NUMERICS_KERNELS_HPP_
#define LAMEMO_NUMERICS_KERNELS_HPP_

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstring>
#include <thread>
#include <vector>

namespace lamemo::kernels {

// Row-major dense products. Every kernel accumulates each output element in
// a fixed order over the reduction index, so results do not depend on how
// rows are split across threads.

inline std::atomic<unsigned>& thread_count() {
  static std::atomic<unsigned> n{1};
  return n;
}

/// Number of worker threads used by large products. 1 (the default) is the
/// deterministic single-threaded mode.
inline void set_threads(unsigned n) { thread_count() = std::max(1u, n); }
inline unsigned threads() { return thread_count(); }

namespace detail {

template <class Fn>
void for_rows(std::size_t m, std::size_t work, Fn&& fn) {
  const unsigned nt = threads();
  if (nt <= 1 || m < 2 || work < (std::size_t{1} << 21)) {
    fn(std::size_t{0}, m);
    return;
  }
  const std::size_t parts = std::min<std::size_t>(nt, m);
  std::vector<std::jthread> pool;
  pool.reserve(parts - 1);
  const std::size_t chunk = (m + parts - 1) / parts;
  for (std::size_t t = 1; t < parts; ++t) {
    const std::size_t b = t * chunk;
    const std::size_t e = std::min(m, b + chunk);
    if (b < e) pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(0, std::min(m, chunk));
}

}  // namespace detail

// Register-blocked core: an MR x (NV * lanes) tile of C stays in vector
// accumulators while p runs over the reduction in ascending order. Each
// element therefore sees exactly the sequence c += a[i,p] * b[p,j] for
// p = 0..k-1, whatever the tiling or thread split.
template <class T>
struct Vec {
  typedef T type __attribute__((vector_size(32)));
  static constexpr std::size_t lanes = 32 / sizeof(T);
  static type load(const T* p) {
    type v;
    std::memcpy(&v, p, sizeof(v));
    return v;
  }
  static void store(T* p, type v) { std::memcpy(p, &v, sizeof(v)); }
};

template <std::size_t MR, std::size_t NV, class T>
inline void tile_nn(std::size_t k, std::size_t lda, std::size_t ldb, std::size_t ldc,
                    const T* a, const T* b, T* c) {
  using V = Vec<T>;
  typename V::type acc[MR][NV];
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t v = 0; v < NV; ++v) acc[r][v] = V::load(c + r * ldc + v * V::lanes);
  for (std::size_t p = 0; p < k; ++p) {
    typename V::type bv[NV];
    for (std::size_t v = 0; v < NV; ++v) bv[v] = V::load(b + p * ldb + v * V::lanes);
    for (std::size_t r = 0; r < MR; ++r) {
      const T s = a[r * lda + p];
      for (std::size_t v = 0; v < NV; ++v) acc[r][v] += s * bv[v];
    }
  }
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t v = 0; v < NV; ++v) V::store(c + r * ldc + v * V::lanes, acc[r][v]);
}

template <class T>
inline void edge_nn(std::size_t mr, std::size_t nr, std::size_t k, std::size_t lda,
                    std::size_t ldb, std::size_t ldc, const T* a, const T* b, T* c) {
  for (std::size_t r = 0; r < mr; ++r) {
    T* __restrict cr = c + r * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const T s = a[r * lda + p];
      const T* __restrict bp = b + p * ldb;
      for (std::size_t j = 0; j < nr; ++j) cr[j] += s * bp[j];
    }
  }
}

// C[m x n] += A[m x k] * B[k x n]
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  constexpr std::size_t MR = 4, NV = 2;
  constexpr std::size_t NR = NV * Vec<T>::lanes;
  const std::size_t blocks = (m + MR - 1) / MR;
  detail::for_rows(blocks, m * n * k, [=](std::size_t b0, std::size_t b1) {
    for (std::size_t blk = b0; blk < b1; ++blk) {
      const std::size_t i = blk * MR;
      const std::size_t mr = std::min(MR, m - i);
      const T* ai = a + i * k;
      T* ci = c + i * n;
      std::size_t j = 0;
      if (mr == MR)
        for (; j + NR <= n; j += NR) tile_nn<MR, NV>(k, k, n, n, ai, b + j, ci + j);
      if (mr == MR)
        for (; j + Vec<T>::lanes <= n; j += Vec<T>::lanes)
          tile_nn<MR, 1>(k, k, n, n, ai, b + j, ci + j);
      if (j < n) edge_nn(mr, n - j, k, k, n, n, ai, b + j, ci + j);
    }
  });
}

// C[m x n] += A[k x m]^T * B[k x n]
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  std::vector<T> at(m * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t i = 0; i < m; ++i) at[i * k + p] = a[p * m + i];
  gemm_nn(m, n, k, at.data(), b, c);
}

template <class T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

// C[m x n] += A[m x k] * B[n x k]^T
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  std::vector<T> bt(n * k);
  transpose(n, k, b, bt.data());
  gemm_nn(m, n, k, a, bt.data(), c);
}

}  // namespace lamemo::kernels

#endif  // LAMEMO_NUMERICS_KERNELS_HPP_
