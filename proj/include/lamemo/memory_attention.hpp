// Copyright 2026 The lamemo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LAMEMO_MEMORY_ATTENTION_HPP_
#define LAMEMO_MEMORY_ATTENTION_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lamemo/errors.hpp"
#include "lamemo/numerics/ops.hpp"
#include "lamemo/posenc.hpp"

namespace lamemo {

enum class MemMode { none, xl, lamemo };

inline std::string to_string(MemMode m) {
  switch (m) {
    case MemMode::none: return "none";
    case MemMode::xl: return "xl";
    case MemMode::lamemo: return "lamemo";
  }
  return "?";
}

inline MemMode parse_mem_mode(const std::string& s) {
  if (s == "none") return MemMode::none;
  if (s == "xl") return MemMode::xl;
  if (s == "lamemo") return MemMode::lamemo;
  throw ConfigError("unknown memory mode '" + s + "' (expected none, xl or lamemo)");
}

/// One memorized token at one layer.
///
/// `c_agg` holds the per-head softmax-weighted value sums (heads
/// concatenated, before the output projection) and `log_s` the matching log
/// denominators. Together they summarize attention over the contiguous key
/// window [leftmost_key_pos, rightmost_key_pos]. Unused in xl mode.
template <class T>
struct MemorySlotState {
  std::int64_t abs_pos = 0;
  std::vector<T> h_in;
  std::vector<T> c_agg;
  std::vector<T> log_s;
  std::int64_t leftmost_key_pos = 0;
  std::int64_t rightmost_key_pos = 0;
};

template <class T>
struct LayerMemory {
  MemMode mode = MemMode::none;
  std::size_t capacity = 0;
  std::vector<MemorySlotState<T>> slots;  // oldest first

  std::size_t size() const { return slots.size(); }
  bool empty() const { return slots.empty(); }
};

/// Attention parameters of one layer. The relative-position biases are
/// shared across layers by the model; they are 1 x d rows whose head h
/// occupies columns [h * d_head, (h + 1) * d_head).
template <class T>
struct AttentionWeights {
  std::size_t n_heads = 1;
  RpeScheme scheme = RpeScheme::dis;
  Tensor<T> w_q, w_k, w_v, w_r;  // d x d
  Tensor<T> u;                   // content bias
  Tensor<T> v;                   // position bias (xl), forward bias v+ (dis)
  Tensor<T> v_back;              // backward bias v- (dis only)

  std::size_t d_model() const { return w_q.rows(); }
  std::size_t d_head() const { return w_q.cols() / n_heads; }
};

/// Score-evaluation counters. `*_computed` counts logits materialized
/// (full query x key blocks); `*_admitted` counts the unmasked pairs.
struct AttentionCounters {
  std::uint64_t causal_computed = 0;
  std::uint64_t causal_admitted = 0;
  std::uint64_t lookahead_computed = 0;
  std::uint64_t lookahead_admitted = 0;

  std::uint64_t total_computed() const { return causal_computed + lookahead_computed; }
  void reset() { *this = AttentionCounters{}; }
};

template <class T>
struct AttentionOutput {
  Tensor<T> context;                 // rows x d, heads concatenated
  std::vector<Tensor<T>> log_denoms;  // per head, shape {rows}
  std::vector<Tensor<T>> probs;       // per head, rows x keys
};

namespace detail {

template <class T>
Tensor<T> head_cols(const Tensor<T>& t, std::size_t h, std::size_t dh) {
  return slice_cols(t, h * dh, (h + 1) * dh);
}

// Position term of every (query, key) pair: gathers from the projection of
// the needed sinusoid rows, once per bias direction.
template <class T>
std::vector<Tensor<T>> position_scores(const std::vector<Tensor<T>>& q_heads,
                                       const std::vector<std::int64_t>& q_pos,
                                       const std::vector<std::int64_t>& k_pos,
                                       const Mask& mask, const AttentionWeights<T>& w) {
  const std::size_t nq = q_pos.size(), nk = k_pos.size(), H = w.n_heads, dh = w.d_head();
  std::int64_t lo = 0, hi = 0;
  bool any = false, any_fwd = false, any_back = false;
  for (std::size_t i = 0; i < nq; ++i)
    for (std::size_t j = 0; j < nk; ++j) {
      if (!mask(i, j)) continue;
      const std::int64_t rel = q_pos[i] - k_pos[j];
      const std::int64_t key = w.scheme == RpeScheme::xl ? rel : std::llabs(rel);
      lo = any ? std::min(lo, key) : key;
      hi = any ? std::max(hi, key) : key;
      any = true;
      (rel >= 0 ? any_fwd : any_back) = true;
    }
  std::vector<Tensor<T>> out;
  if (!any) return out;
  if (w.scheme == RpeScheme::dis) lo = 0;
  const Tensor<T> proj = matmul(relative_rows<T>(lo, hi, w.d_model()), w.w_r);

  auto gather_for = [&](const Tensor<T>& bias, int sign) {
    std::vector<std::int32_t> index(nq * nk, -1);
    for (std::size_t i = 0; i < nq; ++i)
      for (std::size_t j = 0; j < nk; ++j) {
        if (!mask(i, j)) continue;
        const std::int64_t rel = q_pos[i] - k_pos[j];
        if (sign > 0 && rel < 0) continue;
        if (sign < 0 && rel >= 0) continue;
        const std::int64_t key = w.scheme == RpeScheme::xl ? rel : std::llabs(rel);
        index[i * nk + j] = static_cast<std::int32_t>(key - lo);
      }
    std::vector<Tensor<T>> per_head;
    per_head.reserve(H);
    for (std::size_t h = 0; h < H; ++h) {
      const Tensor<T> full =
          matmul_nt(add_row(q_heads[h], head_cols(bias, h, dh)), head_cols(proj, h, dh));
      per_head.push_back(gather_cols(full, index, nk));
    }
    return per_head;
  };

  if (w.scheme == RpeScheme::xl) return gather_for(w.v, 0);
  if (any_fwd && any_back) {
    auto f = gather_for(w.v, +1);
    auto b = gather_for(w.v_back, -1);
    for (std::size_t h = 0; h < H; ++h) f[h] = add(f[h], b[h]);
    return f;
  }
  return any_fwd ? gather_for(w.v, +1) : gather_for(w.v_back, -1);
}

}  // namespace detail

/// Multi-head attention over already projected rows. `q` is nq x d, `k` and
/// `v` are nk x d, positions are absolute stream positions.
template <class T>
AttentionOutput<T> attend_projected(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                    const std::vector<std::int64_t>& q_pos,
                                    const std::vector<std::int64_t>& k_pos, const Mask& mask,
                                    const AttentionWeights<T>& w, bool allow_empty_rows) {
  const std::size_t H = w.n_heads, dh = w.d_head();
  if (q.rows() != q_pos.size() || k.rows() != k_pos.size() || v.rows() != k.rows())
    throw DimensionError("attend: positions do not match rows");
  if (mask.rows != q.rows() || mask.cols != k.rows())
    throw DimensionError("attend: mask shape differs from query x key");
  std::vector<Tensor<T>> q_heads;
  for (std::size_t h = 0; h < H; ++h) q_heads.push_back(detail::head_cols(q, h, dh));
  auto pos = detail::position_scores(q_heads, q_pos, k_pos, mask, w);
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  AttentionOutput<T> out;
  std::vector<Tensor<T>> contexts;
  for (std::size_t h = 0; h < H; ++h) {
    Tensor<T> logits = matmul_nt(add_row(q_heads[h], detail::head_cols(w.u, h, dh)),
                                 detail::head_cols(k, h, dh));
    if (!pos.empty()) logits = add(logits, pos[h]);
    auto sm = softmax_masked(scale(logits, inv_sqrt), mask, allow_empty_rows);
    contexts.push_back(matmul(sm.probs, detail::head_cols(v, h, dh)));
    out.log_denoms.push_back(sm.log_denoms);
    out.probs.push_back(sm.probs);
  }
  out.context = H == 1 ? contexts[0] : concat_cols(contexts);
  return out;
}

/// Causal attention of `queries` (layer inputs) over `keys` (layer inputs of
/// memory rows followed by segment rows). Query i attends exactly the keys
/// whose position does not exceed its own.
template <class T>
AttentionOutput<T> causal_attend(const Tensor<T>& queries, const Tensor<T>& keys,
                                 const std::vector<std::int64_t>& q_pos,
                                 const std::vector<std::int64_t>& k_pos,
                                 const AttentionWeights<T>& w,
                                 AttentionCounters* counters = nullptr) {
  Mask mask(q_pos.size(), k_pos.size(), false);
  for (std::size_t i = 0; i < q_pos.size(); ++i)
    for (std::size_t j = 0; j < k_pos.size(); ++j) mask.set(i, j, k_pos[j] <= q_pos[i]);
  if (counters) {
    counters->causal_computed += q_pos.size() * k_pos.size();
    counters->causal_admitted += mask.count();
  }
  return attend_projected(matmul(queries, w.w_q), matmul(keys, w.w_k), matmul(keys, w.w_v),
                          q_pos, k_pos, mask, w, false);
}

/// Look-ahead attention of memory rows over newer keys. Row i admits key j
/// only when k_pos[j] > rightmost[i]; a row without admissible keys returns a
/// zero context and a log-denominator of -inf.
template <class T>
AttentionOutput<T> lookahead_attend(const Tensor<T>& mem_queries, const Tensor<T>& new_keys,
                                    const std::vector<std::int64_t>& q_pos,
                                    const std::vector<std::int64_t>& k_pos,
                                    const std::vector<std::int64_t>& rightmost,
                                    const AttentionWeights<T>& w,
                                    AttentionCounters* counters = nullptr) {
  if (rightmost.size() != q_pos.size()) throw DimensionError("lookahead: rightmost per row");
  Mask mask(q_pos.size(), k_pos.size(), false);
  for (std::size_t i = 0; i < q_pos.size(); ++i)
    for (std::size_t j = 0; j < k_pos.size(); ++j)
      mask.set(i, j, k_pos[j] > rightmost[i] && k_pos[j] > q_pos[i]);
  if (counters) {
    counters->lookahead_computed += q_pos.size() * k_pos.size();
    counters->lookahead_admitted += mask.count();
  }
  return attend_projected(matmul(mem_queries, w.w_q), matmul(new_keys, w.w_k),
                          matmul(new_keys, w.w_v), q_pos, k_pos, mask, w, true);
}

// ---------------------------------------------------------------------------
// Interpolation of running aggregates.

inline void check_eps(double eps) {
  if (!(eps >= 0.0) || !std::isfinite(eps))
    throw ConfigError("interpolation eps must be finite and >= 0, got " + std::to_string(eps));
}

/// alpha = S_old / (S_old + s_new + eps), evaluated from log masses.
inline double interpolation_alpha(double log_s_old, double log_s_new, double eps) {
  check_eps(eps);
  const double log_eps = eps > 0 ? std::log(eps) : -std::numeric_limits<double>::infinity();
  const double total = logaddexp(logaddexp(log_s_old, log_s_new), log_eps);
  return std::exp(log_s_old - total);
}

template <class T>
struct InterpolatedRows {
  Tensor<T> c_mix;         // rows x dh
  std::vector<T> log_s;    // updated running log-denominators
  std::vector<T> alpha;
};

/// Row-wise c_mix = alpha c_old + (1 - alpha) c_new for one head. The old
/// aggregate and its log mass are constants; gradients reach `c_new` and,
/// through alpha, `lse_new`.
template <class T>
InterpolatedRows<T> interpolate_rows(const std::vector<T>& c_old, const std::vector<T>& log_s_old,
                                     const Tensor<T>& c_new, const Tensor<T>& lse_new,
                                     double eps) {
  check_eps(eps);
  const std::size_t r = c_new.rows(), dh = c_new.cols();
  if (c_old.size() != r * dh || log_s_old.size() != r || lse_new.numel() != r)
    throw DimensionError("interpolate_rows: row counts differ");
  const T log_eps = eps > 0 ? static_cast<T>(std::log(eps)) : kNegInf<T>;
  std::vector<T> alpha(r), keep_new(r), beta(r), log_s(r), mixed(r * dh);
  for (std::size_t i = 0; i < r; ++i) {
    if (!std::isfinite(log_s_old[i]))
      throw ContractError("interpolate: slot has no prior attention mass");
    const T ln = lse_new[i];
    const T total = logaddexp(logaddexp(log_s_old[i], ln), log_eps);
    alpha[i] = std::exp(log_s_old[i] - total);
    keep_new[i] = std::exp(logaddexp(ln, log_eps) - total);
    beta[i] = ln == kNegInf<T> ? T(0) : std::exp(ln - total);
    log_s[i] = logaddexp(log_s_old[i], ln);
    for (std::size_t c = 0; c < dh; ++c)
      mixed[i * dh + c] = alpha[i] * c_old[i * dh + c] + keep_new[i] * c_new[i * dh + c];
  }
  std::vector<T> cn(c_new.values().begin(), c_new.values().end());
  auto c_mix = make_result<T>(
      {r, dh}, std::move(mixed), {c_new, lse_new},
      [r, dh, alpha, keep_new, beta, c_old, cn = std::move(cn)](detail::Node<T>& self) {
        const T* g = self.grad.data();
        if (T* gc = parent_grad(self, 0))
          for (std::size_t i = 0; i < r * dh; ++i) gc[i] += g[i] * keep_new[i / dh];
        if (T* gl = parent_grad(self, 1))
          for (std::size_t i = 0; i < r; ++i) {
            if (beta[i] == T(0)) continue;
            T dot = 0;
            for (std::size_t c = 0; c < dh; ++c)
              dot += g[i * dh + c] * (c_old[i * dh + c] - cn[i * dh + c]);
            gl[i] += -alpha[i] * beta[i] * dot;
          }
      });
  return {c_mix, std::move(log_s), std::move(alpha)};
}

/// Value-level update of one slot from a per-head partial result.
template <class T>
MemorySlotState<T> interpolate(const MemorySlotState<T>& slot, const std::vector<T>& partial_context,
                               const std::vector<T>& partial_log_s, double eps,
                               std::optional<std::int64_t> new_rightmost = std::nullopt) {
  const std::size_t H = slot.log_s.size();
  if (H == 0 || partial_log_s.size() != H || partial_context.size() != slot.c_agg.size())
    throw DimensionError("interpolate: partial result does not match slot");
  const std::size_t dh = slot.c_agg.size() / H;
  NoGradGuard guard;
  MemorySlotState<T> out = slot;
  for (std::size_t h = 0; h < H; ++h) {
    std::vector<T> old(slot.c_agg.begin() + h * dh, slot.c_agg.begin() + (h + 1) * dh);
    Tensor<T> cn({1, dh}, std::vector<T>(partial_context.begin() + h * dh,
                                         partial_context.begin() + (h + 1) * dh));
    auto res = interpolate_rows<T>(old, {slot.log_s[h]}, cn, Tensor<T>({1}, {partial_log_s[h]}), eps);
    std::copy(res.c_mix.values().begin(), res.c_mix.values().end(), out.c_agg.begin() + h * dh);
    out.log_s[h] = res.log_s[0];
  }
  if (new_rightmost) out.rightmost_key_pos = std::max(out.rightmost_key_pos, *new_rightmost);
  return out;
}

// ---------------------------------------------------------------------------
// One layer of one iteration.

template <class T>
struct RefreshResult {
  Tensor<T> seg_context;                 // N x d
  std::optional<Tensor<T>> mem_context;  // n_mem x d, lamemo with memory only
  std::vector<T> seg_log_s;              // N x H, causal log-denominators
  std::int64_t seg_leftmost_key_pos = 0;
  // Updated slot aggregates (lamemo only).
  std::vector<T> mem_c_agg;              // n_mem x d
  std::vector<T> mem_log_s;              // n_mem x H
  std::vector<std::int64_t> mem_rightmost;
  std::vector<T> alpha;                  // n_mem x H
  // Head-averaged causal attention probabilities (N x (n_mem + N)), filled
  // only when requested.
  std::vector<T> causal_probs_mean;
  std::vector<std::int64_t> key_pos;
};

struct RefreshOptions {
  double eps = 1e-4;
  bool record_probs = false;
  AttentionCounters* counters = nullptr;
};

namespace detail {

template <class T>
std::vector<T> tensor_values(const Tensor<T>& t) {
  return std::vector<T>(t.values().begin(), t.values().end());
}

}  // namespace detail

/// Causal attention of the segment against the (refreshed) memory rows and,
/// in lamemo mode, look-ahead plus interpolation of every memory slot.
///
/// `mem_in` holds the layer inputs of the memory slots (one row per slot, in
/// slot order) and may be empty; `seg_in` the layer inputs of the segment
/// whose first token sits at `seg_start`. The memory is not modified; the
/// caller commits the returned aggregates.
template <class T>
RefreshResult<T> refresh_and_advance(const std::optional<Tensor<T>>& mem_in, const Tensor<T>& seg_in,
                                     std::int64_t seg_start, const LayerMemory<T>& mem,
                                     const AttentionWeights<T>& w, const RefreshOptions& opt = {}) {
  check_eps(opt.eps);
  const std::size_t n = seg_in.rows(), d = seg_in.cols(), H = w.n_heads, dh = w.d_head();
  const std::size_t n_mem = mem_in ? mem_in->rows() : 0;
  if (n_mem != mem.size()) throw DimensionError("refresh: memory rows differ from slots");
  if (mem.mode == MemMode::none && n_mem > 0) throw ContractError("refresh: none mode with memory");

  std::vector<std::int64_t> q_pos(n), k_pos(n_mem + n);
  for (std::size_t i = 0; i < n_mem; ++i) k_pos[i] = mem.slots[i].abs_pos;
  for (std::size_t i = 0; i < n; ++i) {
    q_pos[i] = seg_start + static_cast<std::int64_t>(i);
    k_pos[n_mem + i] = q_pos[i];
  }
  for (std::size_t i = 1; i < k_pos.size(); ++i)
    if (k_pos[i] != k_pos[i - 1] + 1)
      throw StreamIntegrityError("refresh: memory and segment positions are not contiguous");

  const Tensor<T> x_all = n_mem ? concat_rows<T>({*mem_in, seg_in}) : seg_in;
  const Tensor<T> K = matmul(x_all, w.w_k), V = matmul(x_all, w.w_v);

  Mask causal(n, n_mem + n, false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= n_mem + i; ++j) causal.set(i, j, true);
  if (opt.counters) {
    opt.counters->causal_computed += n * (n_mem + n);
    opt.counters->causal_admitted += causal.count();
  }
  auto seg = attend_projected(matmul(seg_in, w.w_q), K, V, q_pos, k_pos, causal, w, false);

  RefreshResult<T> out;
  out.seg_context = seg.context;
  out.seg_leftmost_key_pos = k_pos.front();
  out.seg_log_s.resize(n * H);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t i = 0; i < n; ++i) out.seg_log_s[i * H + h] = seg.log_denoms[h][i];
  if (opt.record_probs) {
    out.key_pos = k_pos;
    out.causal_probs_mean.assign(n * (n_mem + n), T(0));
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t e = 0; e < out.causal_probs_mean.size(); ++e)
        out.causal_probs_mean[e] += seg.probs[h][e] / static_cast<T>(H);
  }
  if (mem.mode != MemMode::lamemo || n_mem == 0) return out;

  // Look-ahead window: from the oldest key some slot has not seen yet up to
  // the first segment token. In steady state this is the previous segment
  // plus one position; a shorter current segment does not shrink it.
  std::int64_t oldest_unseen = k_pos[n_mem];
  for (const auto& s : mem.slots) oldest_unseen = std::min(oldest_unseen, s.rightmost_key_pos + 1);
  const std::size_t lo = static_cast<std::size_t>(
      std::clamp<std::int64_t>(oldest_unseen - k_pos.front(), 0, static_cast<std::int64_t>(n_mem)));
  const std::size_t width = n_mem + 1 - lo;
  std::vector<std::int64_t> mem_pos(k_pos.begin(), k_pos.begin() + n_mem);
  std::vector<std::int64_t> win_pos(k_pos.begin() + lo, k_pos.begin() + n_mem + 1);
  Mask ahead(n_mem, width, false);
  for (std::size_t i = 0; i < n_mem; ++i) {
    const auto right = mem.slots[i].rightmost_key_pos;
    if (right + 1 < win_pos.front())
      throw ContractError("look-ahead window would skip keys of slot at " +
                          std::to_string(mem.slots[i].abs_pos));
    for (std::size_t j = 0; j < width; ++j) ahead.set(i, j, win_pos[j] > right);
  }
  if (opt.counters) {
    opt.counters->lookahead_computed += n_mem * width;
    opt.counters->lookahead_admitted += ahead.count();
  }
  auto la = attend_projected(matmul(*mem_in, w.w_q), slice_rows(K, lo, n_mem + 1),
                             slice_rows(V, lo, n_mem + 1), mem_pos, win_pos, ahead, w, true);

  out.mem_c_agg.assign(n_mem * d, T(0));
  out.mem_log_s.assign(n_mem * H, T(0));
  out.alpha.assign(n_mem * H, T(0));
  out.mem_rightmost.resize(n_mem);
  for (std::size_t i = 0; i < n_mem; ++i) {
    out.mem_rightmost[i] = mem.slots[i].rightmost_key_pos;
    for (std::size_t j = 0; j < width; ++j)
      if (ahead(i, j)) out.mem_rightmost[i] = std::max(out.mem_rightmost[i], win_pos[j]);
  }
  std::vector<Tensor<T>> mixed;
  for (std::size_t h = 0; h < H; ++h) {
    std::vector<T> c_old(n_mem * dh), s_old(n_mem);
    for (std::size_t i = 0; i < n_mem; ++i) {
      const auto& s = mem.slots[i];
      if (s.c_agg.size() != d || s.log_s.size() != H)
        throw ContractError("refresh: slot aggregate missing");
      std::copy(s.c_agg.begin() + h * dh, s.c_agg.begin() + (h + 1) * dh, c_old.begin() + i * dh);
      s_old[i] = s.log_s[h];
    }
    auto res = interpolate_rows<T>(c_old, s_old, detail::head_cols(la.context, h, dh),
                                   la.log_denoms[h], opt.eps);
    for (std::size_t i = 0; i < n_mem; ++i) {
      out.mem_log_s[i * H + h] = res.log_s[i];
      out.alpha[i * H + h] = res.alpha[i];
      for (std::size_t c = 0; c < dh; ++c)
        out.mem_c_agg[i * d + h * dh + c] = res.c_mix.values()[i * dh + c];
    }
    mixed.push_back(res.c_mix);
  }
  out.mem_context = H == 1 ? mixed[0] : concat_cols(mixed);
  return out;
}

/// Stacks the slots' layer inputs into an n_mem x d matrix (constant).
template <class T>
std::optional<Tensor<T>> memory_inputs(const LayerMemory<T>& mem) {
  if (mem.empty()) return std::nullopt;
  const std::size_t d = mem.slots.front().h_in.size();
  std::vector<T> v;
  v.reserve(mem.size() * d);
  for (const auto& s : mem.slots) {
    if (s.h_in.size() != d) throw ContractError("memory slot without layer input");
    v.insert(v.end(), s.h_in.begin(), s.h_in.end());
  }
  return Tensor<T>({mem.size(), d}, std::move(v));
}

/// Appends `new_slots` and drops the oldest entries beyond capacity.
template <class T>
LayerMemory<T> slide_memory(LayerMemory<T> mem, std::vector<MemorySlotState<T>> new_slots) {
  std::int64_t prev = mem.slots.empty() ? 0 : mem.slots.back().abs_pos;
  bool have_prev = !mem.slots.empty();
  for (const auto& s : new_slots) {
    if (have_prev && s.abs_pos != prev + 1)
      throw StreamIntegrityError("slide_memory: position " + std::to_string(s.abs_pos) +
                                 " does not follow " + std::to_string(prev));
    prev = s.abs_pos;
    have_prev = true;
  }
  if (mem.mode == MemMode::none || mem.capacity == 0) {
    mem.slots.clear();
    return mem;
  }
  for (auto& s : new_slots) mem.slots.push_back(std::move(s));
  if (mem.slots.size() > mem.capacity)
    mem.slots.erase(mem.slots.begin(),
                    mem.slots.begin() + static_cast<std::ptrdiff_t>(mem.slots.size() - mem.capacity));
  return mem;
}

/// Writes a refresh result back into the memory (existing slots) and slides
/// in the segment rows as new slots.
template <class T>
LayerMemory<T> commit_refresh(const LayerMemory<T>& mem, const std::optional<Tensor<T>>& mem_in,
                              const Tensor<T>& seg_in, std::int64_t seg_start,
                              const RefreshResult<T>& r) {
  if (mem.mode == MemMode::none || mem.capacity == 0) {
    LayerMemory<T> empty = mem;
    empty.slots.clear();
    return empty;
  }
  LayerMemory<T> next = mem;
  const std::size_t d = seg_in.cols();
  const std::size_t H = r.seg_log_s.size() / seg_in.rows();
  if (mem_in) {
    const auto& mv = mem_in->values();
    for (std::size_t i = 0; i < next.slots.size(); ++i)
      next.slots[i].h_in.assign(mv.begin() + i * d, mv.begin() + (i + 1) * d);
  }
  if (mem.mode == MemMode::lamemo && r.mem_context) {
    for (std::size_t i = 0; i < next.slots.size(); ++i) {
      auto& s = next.slots[i];
      s.c_agg.assign(r.mem_c_agg.begin() + i * d, r.mem_c_agg.begin() + (i + 1) * d);
      s.log_s.assign(r.mem_log_s.begin() + i * H, r.mem_log_s.begin() + (i + 1) * H);
      s.rightmost_key_pos = r.mem_rightmost[i];
    }
  }
  const std::size_t n = seg_in.rows();
  // Only the newest `capacity` rows can survive the slide.
  const std::size_t first = n > mem.capacity ? n - mem.capacity : 0;
  std::vector<MemorySlotState<T>> fresh;
  const auto& sv = seg_in.values();
  const auto& cv = r.seg_context.values();
  for (std::size_t i = first; i < n; ++i) {
    MemorySlotState<T> s;
    s.abs_pos = seg_start + static_cast<std::int64_t>(i);
    s.h_in.assign(sv.begin() + i * d, sv.begin() + (i + 1) * d);
    if (mem.mode == MemMode::lamemo) {
      s.c_agg.assign(cv.begin() + i * d, cv.begin() + (i + 1) * d);
      s.log_s.assign(r.seg_log_s.begin() + i * H, r.seg_log_s.begin() + (i + 1) * H);
    }
    s.leftmost_key_pos = r.seg_leftmost_key_pos;
    s.rightmost_key_pos = s.abs_pos;
    fresh.push_back(std::move(s));
  }
  if (first > 0) next.slots.clear();
  return slide_memory(std::move(next), std::move(fresh));
}

// ---------------------------------------------------------------------------
// Brute-force reference.

/// Single-head scoring view of head `h`.
template <class T>
RpeTable<T> head_table(const AttentionWeights<T>& w, std::size_t h, std::size_t max_dist) {
  const std::size_t dh = w.d_head();
  RpeTable<T> t;
  t.scheme = w.scheme;
  t.sinusoid = sinusoid_table<T>(max_dist, w.d_model());
  t.w_q = detail::head_cols(w.w_q, h, dh);
  t.w_k = detail::head_cols(w.w_k, h, dh);
  t.w_r = detail::head_cols(w.w_r, h, dh);
  t.content_bias = detail::head_cols(w.u, h, dh);
  t.position_bias = detail::head_cols(w.v, h, dh);
  t.position_bias_back = w.v_back.defined() ? detail::head_cols(w.v_back, h, dh) : t.position_bias;
  return t;
}

/// Direct softmax attention of the token at `query_pos` over every key in
/// the contiguous window [lo, hi], scoring each pair with the scalar RPE
/// functions. Rows of `inputs` are indexed by absolute position. Returns the
/// per-head contexts concatenated.
template <class T>
std::vector<T> oracle_full_attention(const Tensor<T>& inputs, std::int64_t query_pos,
                                     std::int64_t lo, std::int64_t hi,
                                     const AttentionWeights<T>& w) {
  const auto total = static_cast<std::int64_t>(inputs.rows());
  if (lo < 0 || hi >= total || lo > hi || query_pos < lo || query_pos > hi)
    throw ContractError("oracle window [" + std::to_string(lo) + ", " + std::to_string(hi) +
                        "] invalid for query " + std::to_string(query_pos) + " over " +
                        std::to_string(total) + " positions");
  NoGradGuard guard;
  const std::size_t d = w.d_model(), H = w.n_heads, dh = w.d_head();
  const std::size_t max_dist = static_cast<std::size_t>(std::max(query_pos - lo, hi - query_pos));
  auto row = [&](std::int64_t p) { return slice_rows(inputs, std::size_t(p), std::size_t(p) + 1); };
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<T> out(d, T(0));
  for (std::size_t h = 0; h < H; ++h) {
    const auto table = head_table(w, h, max_dist);
    const Tensor<T> wv = detail::head_cols(w.w_v, h, dh);
    std::vector<double> logits;
    for (std::int64_t j = lo; j <= hi; ++j)
      logits.push_back(static_cast<double>(rpe_score(row(query_pos), row(j), query_pos - j, table).item()) *
                       inv_sqrt);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    for (std::int64_t j = lo; j <= hi; ++j) {
      const Tensor<T> val = matmul(row(j), wv);
      const double p = logits[std::size_t(j - lo)] / z;
      for (std::size_t c = 0; c < dh; ++c) out[h * dh + c] += static_cast<T>(p * val[c]);
    }
  }
  return out;
}

}  // namespace lamemo

#endif  // LAMEMO_MEMORY_ATTENTION_HPP_
