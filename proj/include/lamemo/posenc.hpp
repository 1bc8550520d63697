// Copyright 2026 The lamemo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LAMEMO_POSENC_HPP_
#define LAMEMO_POSENC_HPP_

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <vector>

#include "lamemo/errors.hpp"
#include "lamemo/numerics/ops.hpp"

namespace lamemo {

// Relative positional encodings.
//
// Sinusoid rows follow R_delta = [sin(w_1 delta), cos(w_1 delta), ...,
// sin(w_{d/2} delta), cos(w_{d/2} delta)] with w_k = 10000^(-2k/d) and
// k = 1..d/2 (note: k starts at 1, not 0). Negative distances are produced
// analytically by negating the sine entries.
//
// Two scoring schemes share that table:
//   xl : (q_i + u).k_j + (q_i + v).W_r R_{i-j}          signed distance
//   dis: (q_i + u).k_j + (q_i + v_dir).W_r R_{|i-j|}    v_dir = v+ if i >= j else v-

enum class RpeScheme { xl, dis };

inline std::string to_string(RpeScheme s) { return s == RpeScheme::xl ? "xl" : "dis"; }

inline RpeScheme parse_rpe_scheme(const std::string& s) {
  if (s == "xl") return RpeScheme::xl;
  if (s == "dis") return RpeScheme::dis;
  throw ConfigError("unknown rpe scheme '" + s + "' (expected xl or dis)");
}

inline double sinusoid_frequency(std::size_t k, std::size_t d) {
  return std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(d));
}

inline void require_even_width(std::size_t d) {
  if (d == 0 || d % 2 != 0)
    throw ConfigError("sinusoid width must be even and positive, got " + std::to_string(d));
}

/// Row for a signed (possibly fractional) distance.
template <class T>
std::vector<T> sinusoid_row(double delta, std::size_t d) {
  require_even_width(d);
  std::vector<T> row(d);
  for (std::size_t k = 1; k <= d / 2; ++k) {
    const double a = sinusoid_frequency(k, d) * delta;
    row[2 * (k - 1)] = static_cast<T>(std::sin(a));
    row[2 * (k - 1) + 1] = static_cast<T>(std::cos(a));
  }
  return row;
}

/// (max_dist + 1) x d table indexed by non-negative distance. Not trainable.
template <class T>
Tensor<T> sinusoid_table(std::size_t max_dist, std::size_t d) {
  require_even_width(d);
  std::vector<T> v;
  v.reserve((max_dist + 1) * d);
  for (std::size_t delta = 0; delta <= max_dist; ++delta) {
    auto row = sinusoid_row<T>(static_cast<double>(delta), d);
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor<T>({max_dist + 1, d}, std::move(v));
}

/// Table row for a signed distance, negating sines for delta < 0.
template <class T>
std::vector<T> signed_table_row(const Tensor<T>& table, std::int64_t delta) {
  const std::size_t d = table.cols();
  const std::size_t a = static_cast<std::size_t>(std::llabs(delta));
  if (a >= table.rows())
    throw RangeError("relative distance " + std::to_string(delta) + " exceeds table max " +
                     std::to_string(table.rows() - 1));
  std::vector<T> row(table.values().begin() + a * d, table.values().begin() + (a + 1) * d);
  if (delta < 0)
    for (std::size_t k = 0; k < d; k += 2) row[k] = -row[k];
  return row;
}

/// Constant matrix whose row (rel - min_rel) is R_rel for rel in
/// [min_rel, max_rel]; the batched attention path gathers from its
/// projection.
template <class T>
Tensor<T> relative_rows(std::int64_t min_rel, std::int64_t max_rel, std::size_t d) {
  if (max_rel < min_rel) throw RangeError("relative_rows: empty range");
  std::vector<T> v;
  v.reserve(static_cast<std::size_t>(max_rel - min_rel + 1) * d);
  for (std::int64_t r = min_rel; r <= max_rel; ++r) {
    auto row = sinusoid_row<T>(static_cast<double>(r), d);
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor<T>({static_cast<std::size_t>(max_rel - min_rel + 1), d}, std::move(v));
}

/// Single-head scoring view: the sinusoid table plus the projections and
/// global biases that turn a pair of row vectors into an attention logit.
template <class T>
struct RpeTable {
  RpeScheme scheme = RpeScheme::dis;
  Tensor<T> sinusoid;            // (max_dist + 1) x d
  Tensor<T> w_q, w_k, w_r;       // d x d_head each
  Tensor<T> content_bias;        // u
  Tensor<T> position_bias;       // v (xl) or v+ (dis)
  Tensor<T> position_bias_back;  // v- (dis only)

  std::size_t max_dist() const { return sinusoid.rows() - 1; }
};

namespace detail {

template <class T>
Tensor<T> rpe_four_terms(const Tensor<T>& x_i, const Tensor<T>& x_j,
                         std::vector<T> r_row, const Tensor<T>& pos_bias,
                         const RpeTable<T>& t) {
  const std::size_t d = t.sinusoid.cols();
  if (x_i.shape() != Shape{1, d} || x_j.shape() != Shape{1, d})
    throw DimensionError("rpe score: inputs must be 1 x " + std::to_string(d) + " rows");
  const Tensor<T> qi = matmul(x_i, t.w_q);
  const Tensor<T> kj = matmul(x_j, t.w_k);
  const Tensor<T> rr = matmul(Tensor<T>({1, d}, std::move(r_row)), t.w_r);
  const Tensor<T> content = sum(mul(add_row(qi, t.content_bias), kj));
  const Tensor<T> position = sum(mul(add_row(qi, pos_bias), rr));
  return add(content, position);
}

}  // namespace detail

/// Four-term logit with the signed sinusoid row R_{rel}. x_i and x_j are
/// 1 x d rows; the result is differentiable in every tensor involved.
template <class T>
Tensor<T> xl_rpe_score(const Tensor<T>& x_i, const Tensor<T>& x_j, std::int64_t rel,
                       const RpeTable<T>& table) {
  if (table.scheme != RpeScheme::xl) throw ConfigError("xl_rpe_score needs an xl table");
  return detail::rpe_four_terms(x_i, x_j, signed_table_row(table.sinusoid, rel),
                                table.position_bias, table);
}

/// Four-term logit with R_{|rel|} and the direction bias selected by the
/// sign of rel (rel >= 0 means the key is not to the right of the query).
template <class T>
Tensor<T> dis_rpe_score(const Tensor<T>& x_i, const Tensor<T>& x_j, std::int64_t rel,
                        const RpeTable<T>& table) {
  if (table.scheme != RpeScheme::dis) throw ConfigError("dis_rpe_score needs a dis table");
  return detail::rpe_four_terms(x_i, x_j, signed_table_row(table.sinusoid, std::llabs(rel)),
                                rel >= 0 ? table.position_bias : table.position_bias_back,
                                table);
}

template <class T>
Tensor<T> rpe_score(const Tensor<T>& x_i, const Tensor<T>& x_j, std::int64_t rel,
                    const RpeTable<T>& table) {
  return table.scheme == RpeScheme::xl ? xl_rpe_score(x_i, x_j, rel, table)
                                       : dis_rpe_score(x_i, x_j, rel, table);
}

// ---------------------------------------------------------------------------
// Variance analysis of x.R_delta.

/// g(x) = sum_k sum_{l != k} sin(w_k x) cos(w_l x), evaluated as the direct
/// double sum. Odd in x.
inline double g_func(double x, std::size_t d) {
  require_even_width(d);
  const std::size_t h = d / 2;
  std::vector<double> s(h), c(h);
  for (std::size_t k = 0; k < h; ++k) {
    const double w = sinusoid_frequency(k + 1, d);
    s[k] = std::sin(w * x);
    c[k] = std::cos(w * x);
  }
  double total = 0.0;
  for (std::size_t k = 0; k < h; ++k) {
    double row = 0.0;
    for (std::size_t l = 0; l < h; ++l)
      if (l != k) row += c[l];
    total += s[k] * row;
  }
  return total;
}

/// Near-zero slope of g: d / (2 ((10^8)^(1/d) - 1)). For large d this
/// approaches gamma_d_approx(d) = d^2 / (2 ln 10^8).
inline double gamma_d(std::size_t d) {
  if (d < 2 || d % 2 != 0) throw ConfigError("gamma_d needs an even d >= 2");
  const double dd = static_cast<double>(d);
  return dd / (2.0 * (std::pow(1e8, 1.0 / dd) - 1.0));
}

inline double gamma_d_approx(std::size_t d) {
  const double dd = static_cast<double>(d);
  return dd * dd / (2.0 * std::log(1e8));
}

/// Var(x.R_delta) = (d/2) sigma_s + 2 sigma_c g(delta), for x with equal
/// element variance sigma_s and covariance sigma_c between each sine slot
/// and every cosine slot of a different frequency.
inline double analytic_var(double sigma_s, double sigma_c, double delta, std::size_t d) {
  if (sigma_s < 0.0) throw ConfigError("analytic_var: sigma_s must be >= 0");
  return 0.5 * static_cast<double>(d) * sigma_s + 2.0 * sigma_c * g_func(delta, d);
}

}  // namespace lamemo

#endif  // LAMEMO_POSENC_HPP_
