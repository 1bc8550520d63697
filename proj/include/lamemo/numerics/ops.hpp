// Copyright 2026 The lamemo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LAMEMO_NUMERICS_OPS_HPP_
#define LAMEMO_NUMERICS_OPS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lamemo/errors.hpp"
#include "lamemo/numerics/kernels.hpp"
#include "lamemo/numerics/tensor.hpp"
#include "lamemo/rng.hpp"

namespace lamemo {

template <class T>
inline constexpr T kNegInf = -std::numeric_limits<T>::infinity();

// ---------------------------------------------------------------------------
// Scalar log-space helpers.

/// log(exp a + exp b) by max-shift. Exactly symmetric: the arguments are
/// ordered before evaluation.
template <class T>
T logaddexp(T a, T b) {
  const T hi = std::max(a, b);
  const T lo = std::min(a, b);
  if (hi == kNegInf<T>) return kNegInf<T>;
  if (hi == std::numeric_limits<T>::infinity()) return hi;
  return hi + std::log1p(std::exp(lo - hi));
}

template <class T>
T logsumexp(std::span<const T> xs) {
  T hi = kNegInf<T>;
  for (T x : xs) hi = std::max(hi, x);
  if (hi == kNegInf<T>) return hi;
  T s = 0;
  for (T x : xs) s += std::exp(x - hi);
  return hi + std::log(s);
}

// ---------------------------------------------------------------------------
// Shape helpers.

namespace detail {

template <class T>
void require_matrix(const Tensor<T>& t, const char* op) {
  if (!t.defined() || t.rank() != 2)
    throw DimensionError(std::string(op) + ": expected a matrix");
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Products.

/// a[m x k] * b[k x n]
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw DimensionError("matmul: inner extents differ " + shape_str(a.shape()) +
                         " * " + shape_str(b.shape()));
  std::vector<T> out(m * n, T(0));
  kernels::gemm_nn(m, n, k, a.values().data(), b.values().data(), out.data());
  return make_result<T>({m, n}, std::move(out), {a, b},
                        [m, n, k](detail::Node<T>& self) {
                          const T* g = self.grad.data();
                          if (T* ga = parent_grad(self, 0))
                            kernels::gemm_nt(m, k, n, g, parent_value(self, 1), ga);
                          if (T* gb = parent_grad(self, 1))
                            kernels::gemm_tn(k, n, m, parent_value(self, 0), g, gb);
                        });
}

/// a[m x k] * b[n x k]^T
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k)
    throw DimensionError("matmul_nt: inner extents differ " +
                         shape_str(a.shape()) + " * " + shape_str(b.shape()) + "^T");
  std::vector<T> out(m * n, T(0));
  kernels::gemm_nt(m, n, k, a.values().data(), b.values().data(), out.data());
  return make_result<T>({m, n}, std::move(out), {a, b},
                        [m, n, k](detail::Node<T>& self) {
                          const T* g = self.grad.data();
                          if (T* ga = parent_grad(self, 0))
                            kernels::gemm_nn(m, k, n, g, parent_value(self, 1), ga);
                          if (T* gb = parent_grad(self, 1))
                            kernels::gemm_tn(n, k, m, g, parent_value(self, 0), gb);
                        });
}

// ---------------------------------------------------------------------------
// Elementwise.

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (T* gp = parent_grad(self, p))
        for (std::size_t i = 0; i < self.grad.size(); ++i) gp[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    if (T* ga = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    if (T* gb = parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] -= self.grad[i];
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    const T* av = parent_value(self, 0);
    const T* bv = parent_value(self, 1);
    if (T* ga = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * bv[i];
    if (T* gb = parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i] * av[i];
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.values().begin(), a.values().end());
  for (auto& x : out) x *= s;
  return make_result<T>(a.shape(), std::move(out), {a}, [s](detail::Node<T>& self) {
    if (T* ga = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += s * self.grad[i];
  });
}

/// a[r x c] + bias broadcast over rows; bias holds c elements.
template <class T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& bias) {
  detail::require_matrix(a, "add_row");
  const std::size_t r = a.rows(), c = a.cols();
  if (bias.numel() != c)
    throw DimensionError("add_row: bias has " + std::to_string(bias.numel()) +
                         " elements, rows have " + std::to_string(c));
  std::vector<T> out(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bias[j];
  return make_result<T>(a.shape(), std::move(out), {a, bias},
                        [r, c](detail::Node<T>& self) {
                          const T* g = self.grad.data();
                          if (T* ga = parent_grad(self, 0))
                            for (std::size_t i = 0; i < r * c; ++i) ga[i] += g[i];
                          if (T* gb = parent_grad(self, 1))
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
                        });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
  return make_result<T>(a.shape(), std::move(out), {a}, [](detail::Node<T>& self) {
    if (T* ga = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (self.value[i] > T(0)) ga[i] += self.grad[i];
  });
}

/// Inverted dropout. Identity when rate == 0.
template <class T>
Tensor<T> dropout(const Tensor<T>& a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
  const T keep_scale = T(1.0 / (1.0 - rate));
  std::vector<T> mask(a.numel());
  for (auto& m : mask) m = rng.uniform() < rate ? T(0) : keep_scale;
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * mask[i];
  return make_result<T>(a.shape(), std::move(out), {a},
                        [mask = std::move(mask)](detail::Node<T>& self) {
                          if (T* ga = parent_grad(self, 0))
                            for (std::size_t i = 0; i < self.grad.size(); ++i)
                              ga[i] += self.grad[i] * mask[i];
                        });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T x : a.values()) s += x;
  return make_result<T>({1}, {s}, {a}, [](detail::Node<T>& self) {
    if (T* ga = parent_grad(self, 0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[0];
    }
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// ---------------------------------------------------------------------------
// Layout.

template <class T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  detail::require_matrix(a, "slice_rows");
  if (begin >= end || end > a.rows())
    throw DimensionError("slice_rows: bad range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") of " + shape_str(a.shape()));
  const std::size_t c = a.cols();
  std::vector<T> out(a.values().begin() + begin * c, a.values().begin() + end * c);
  return make_result<T>({end - begin, c}, std::move(out), {a},
                        [begin, c](detail::Node<T>& self) {
                          if (T* ga = parent_grad(self, 0))
                            for (std::size_t i = 0; i < self.grad.size(); ++i)
                              ga[begin * c + i] += self.grad[i];
                        });
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  detail::require_matrix(a, "slice_cols");
  if (begin >= end || end > a.cols())
    throw DimensionError("slice_cols: bad range of " + shape_str(a.shape()));
  const std::size_t r = a.rows(), c = a.cols(), w = end - begin;
  std::vector<T> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a[i * c + begin + j];
  return make_result<T>({r, w}, std::move(out), {a},
                        [r, c, w, begin](detail::Node<T>& self) {
                          if (T* ga = parent_grad(self, 0))
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < w; ++j)
                                ga[i * c + begin + j] += self.grad[i * w + j];
                        });
}

template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_rows");
    if (p.cols() != c) throw DimensionError("concat_rows: column counts differ");
    r += p.rows();
  }
  std::vector<T> out;
  out.reserve(r * c);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return make_result<T>({r, c}, std::move(out), parts, [](detail::Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      const std::size_t n = self.parents[p]->value.size();
      if (T* gp = parent_grad(self, p))
        for (std::size_t i = 0; i < n; ++i) gp[i] += self.grad[off + i];
      off += n;
    }
  });
}

template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.rows() != r) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.cols());
    c += p.cols();
  }
  std::vector<T> out(r * c);
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const std::size_t w = widths[p];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * c + off + j] = parts[p][i * w + j];
    off += w;
  }
  return make_result<T>({r, c}, std::move(out), parts,
                        [r, c, widths](detail::Node<T>& self) {
                          std::size_t off = 0;
                          for (std::size_t p = 0; p < widths.size(); ++p) {
                            const std::size_t w = widths[p];
                            if (T* gp = parent_grad(self, p))
                              for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < w; ++j)
                                  gp[i * w + j] += self.grad[i * c + off + j];
                            off += w;
                          }
                        });
}

/// out[i, j] = src[i, index[i*cols + j]]; a negative index yields 0 and
/// receives no gradient.
template <class T>
Tensor<T> gather_cols(const Tensor<T>& src, std::vector<std::int32_t> index,
                      std::size_t cols) {
  detail::require_matrix(src, "gather_cols");
  const std::size_t r = src.rows(), n = src.cols();
  if (index.size() != r * cols) throw DimensionError("gather_cols: index size");
  std::vector<T> out(r * cols, T(0));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const auto k = index[i * cols + j];
      if (k < 0) continue;
      if (static_cast<std::size_t>(k) >= n) throw DimensionError("gather_cols: index out of range");
      out[i * cols + j] = src[i * n + k];
    }
  return make_result<T>({r, cols}, std::move(out), {src},
                        [r, n, cols, index = std::move(index)](detail::Node<T>& self) {
                          if (T* gs = parent_grad(self, 0))
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < cols; ++j) {
                                const auto k = index[i * cols + j];
                                if (k >= 0) gs[i * n + k] += self.grad[i * cols + j];
                              }
                        });
}

/// Row lookup table[ids[i]] * scale.
template <class T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const int> ids, T scale_by) {
  detail::require_matrix(table, "embedding_lookup");
  const std::size_t v = table.rows(), d = table.cols(), n = ids.size();
  if (n == 0) throw DimensionError("embedding_lookup: no ids");
  std::vector<int> idv(ids.begin(), ids.end());
  std::vector<T> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    if (idv[i] < 0 || static_cast<std::size_t>(idv[i]) >= v)
      throw VocabularyError("token id " + std::to_string(idv[i]) +
                            " outside vocabulary of size " + std::to_string(v));
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = table[idv[i] * d + j] * scale_by;
  }
  return make_result<T>({n, d}, std::move(out), {table},
                        [d, scale_by, idv = std::move(idv)](detail::Node<T>& self) {
                          if (T* gt = parent_grad(self, 0))
                            for (std::size_t i = 0; i < idv.size(); ++i)
                              for (std::size_t j = 0; j < d; ++j)
                                gt[idv[i] * d + j] += scale_by * self.grad[i * d + j];
                        });
}

// ---------------------------------------------------------------------------
// Normalization.

inline constexpr double kLayerNormEps = 1e-5;

/// Per-row zero-mean / unit-variance normalization followed by gain and bias.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     double eps = kLayerNormEps) {
  detail::require_matrix(x, "layer_norm");
  const std::size_t r = x.rows(), d = x.cols();
  if (gain.numel() != d || bias.numel() != d)
    throw DimensionError("layer_norm: gain/bias width must equal row width");
  std::vector<T> xhat(r * d), inv_std(r), out(r * d);
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = x.values().data() + i * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    inv_std[i] = T(1) / std::sqrt(var + static_cast<T>(eps));
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mu) * inv_std[i];
      out[i * d + j] = xhat[i * d + j] * gain[j] + bias[j];
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), {x, gain, bias},
      [r, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<T>& self) {
        const T* g = self.grad.data();
        const T* gamma = parent_value(self, 1);
        if (T* gx = parent_grad(self, 0)) {
          for (std::size_t i = 0; i < r; ++i) {
            T mean_g = 0, mean_gx = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const T gh = g[i * d + j] * gamma[j];
              mean_g += gh;
              mean_gx += gh * xhat[i * d + j];
            }
            mean_g /= static_cast<T>(d);
            mean_gx /= static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const T gh = g[i * d + j] * gamma[j];
              gx[i * d + j] += inv_std[i] * (gh - mean_g - xhat[i * d + j] * mean_gx);
            }
          }
        }
        if (T* gg = parent_grad(self, 1))
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * xhat[i * d + j];
        if (T* gb = parent_grad(self, 2))
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
      });
}

// ---------------------------------------------------------------------------
// Masked softmax.

/// Row-major boolean mask; 1 keeps an entry.
struct Mask {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint8_t> keep;

  Mask() = default;
  Mask(std::size_t r, std::size_t c, bool fill = true)
      : rows(r), cols(c), keep(r * c, fill ? 1 : 0) {}
  bool operator()(std::size_t i, std::size_t j) const { return keep[i * cols + j] != 0; }
  void set(std::size_t i, std::size_t j, bool on) { keep[i * cols + j] = on ? 1 : 0; }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), std::uint8_t{1}));
  }
};

template <class T>
struct SoftmaxResult {
  Tensor<T> probs;       // r x c, exactly 0 where masked
  Tensor<T> log_denoms;  // r, log of the row's exp-sum over kept entries
};

/// Softmax over the kept entries of each row, with the max-shifted log of
/// the row denominator. A row with no kept entry is an error unless
/// `allow_empty_rows`, in which case it yields zero probabilities and a
/// log-denominator of -inf.
template <class T>
SoftmaxResult<T> softmax_masked(const Tensor<T>& logits, const Mask& mask,
                                bool allow_empty_rows = false) {
  detail::require_matrix(logits, "softmax_masked");
  const std::size_t r = logits.rows(), c = logits.cols();
  if (mask.rows != r || mask.cols != c)
    throw DimensionError("softmax_masked: mask shape differs from logits");
  std::vector<T> probs(r * c, T(0)), lse(r, kNegInf<T>);
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = logits.values().data() + i * c;
    T hi = kNegInf<T>;
    bool any = false;
    for (std::size_t j = 0; j < c; ++j)
      if (mask(i, j)) {
        hi = any ? std::max(hi, row[j]) : row[j];
        any = true;
      }
    if (!any) {
      if (!allow_empty_rows)
        throw DegenerateRowError("softmax_masked: row " + std::to_string(i) +
                                 " has no unmasked entry");
      continue;
    }
    T s = 0;
    for (std::size_t j = 0; j < c; ++j)
      if (mask(i, j)) {
        probs[i * c + j] = std::exp(row[j] - hi);
        s += probs[i * c + j];
      }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= s;
    lse[i] = hi + std::log(s);
  }
  std::vector<T> p_copy = probs;
  auto probs_t = make_result<T>({r, c}, std::move(probs), {logits},
                                [r, c](detail::Node<T>& self) {
                                  T* gl = parent_grad(self, 0);
                                  if (!gl) return;
                                  const T* p = self.value.data();
                                  const T* g = self.grad.data();
                                  for (std::size_t i = 0; i < r; ++i) {
                                    T dot = 0;
                                    for (std::size_t j = 0; j < c; ++j) dot += p[i * c + j] * g[i * c + j];
                                    for (std::size_t j = 0; j < c; ++j)
                                      gl[i * c + j] += p[i * c + j] * (g[i * c + j] - dot);
                                  }
                                });
  auto lse_t = make_result<T>({r}, std::move(lse), {logits},
                              [r, c, p = std::move(p_copy)](detail::Node<T>& self) {
                                T* gl = parent_grad(self, 0);
                                if (!gl) return;
                                for (std::size_t i = 0; i < r; ++i)
                                  for (std::size_t j = 0; j < c; ++j)
                                    gl[i * c + j] += self.grad[i] * p[i * c + j];
                              });
  return {probs_t, lse_t};
}

/// Mean negative log-likelihood (nats) of integer targets under row logits.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets) {
  detail::require_matrix(logits, "cross_entropy");
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n) throw DimensionError("cross_entropy: one target per row");
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<T> probs(n * v);
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tg[i] < 0 || static_cast<std::size_t>(tg[i]) >= v)
      throw VocabularyError("target id " + std::to_string(tg[i]) + " outside vocabulary");
    std::span<const T> row(logits.values().data() + i * v, v);
    const T lse = logsumexp(row);
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] = std::exp(row[j] - lse);
    total += lse - row[tg[i]];
  }
  total /= static_cast<T>(n);
  return make_result<T>({1}, {total}, {logits},
                        [n, v, tg = std::move(tg), probs = std::move(probs)](detail::Node<T>& self) {
                          T* gl = parent_grad(self, 0);
                          if (!gl) return;
                          const T s = self.grad[0] / static_cast<T>(n);
                          for (std::size_t i = 0; i < n; ++i) {
                            for (std::size_t j = 0; j < v; ++j) gl[i * v + j] += s * probs[i * v + j];
                            gl[i * v + tg[i]] -= s;
                          }
                        });
}

}  // namespace lamemo

#endif  // LAMEMO_NUMERICS_OPS_HPP_
