// Copyright 2026 The lamemo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LAMEMO_ANALYSIS_HPP_
#define LAMEMO_ANALYSIS_HPP_

#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "lamemo/config.hpp"
#include "lamemo/errors.hpp"
#include "lamemo/model.hpp"
#include "lamemo/pipeline.hpp"
#include "lamemo/posenc.hpp"

namespace lamemo {

// ---------------------------------------------------------------------------
// FLOPS accounting
//
// Cost of one segment of N tokens, per layer, with memory length M, model
// width d, H heads, FFN width f and K = M + N keys. Matrix products are
// counted in multiply-accumulates (MACs); elementwise work (softmax, layer
// norm, activation, interpolation) at one operation per element.
//
//   projections   Q: N d^2   K, V: 2 K d^2   O: N d^2
//   relative pos  R W_r: K d^2 (one row per distance 0..K-1)
//   attention     content scores, position scores, value mixing: 3 N K d
//   softmax       N K H
//   FFN           2 N d f, activation N f, two layer norms 2 N d
//
// lamemo adds, per layer:
//   look-ahead    Q of the memory rows: M d^2; window of N + 1 keys:
//                 3 M (N + 1) d scores/mixing, M (N + 1) H softmax;
//                 xl-scheme negative distances: (N + 1) d^2 extra R rows
//   interpolation 3 M d
//   f(memory)     O: M d^2, FFN 2 M d f, activation M f, layer norms 2 M d
//
// The per-token figure is L * (segment cost) / N plus the output projection
// and softmax over the vocabulary (V d + V). MACs are converted with
// `flops_per_mac`.

struct FlopsBreakdown {
  double projections = 0;
  double relative_position = 0;
  double attention = 0;
  double feed_forward = 0;
  double lookahead = 0;
  double memory_update = 0;
  double output = 0;

  double total() const {
    return projections + relative_position + attention + feed_forward + lookahead +
           memory_update + output;
  }
};

inline FlopsBreakdown flops_breakdown(const ModelConfig& cfg, double flops_per_mac = 1.0) {
  cfg.validate();
  const double d = static_cast<double>(cfg.d_model), H = static_cast<double>(cfg.n_heads);
  const double f = static_cast<double>(cfg.d_ff), N = static_cast<double>(cfg.seg_len);
  const double M = cfg.mem_mode == MemMode::none ? 0.0 : static_cast<double>(cfg.mem_len);
  const double L = static_cast<double>(cfg.n_layers), V = static_cast<double>(cfg.vocab_size);
  const double K = M + N, c = flops_per_mac;
  const double per_token = L / N;

  FlopsBreakdown b;
  b.projections = per_token * c * (N * d * d + 2 * K * d * d + N * d * d);
  b.relative_position = per_token * c * K * d * d;
  b.attention = per_token * (c * 3 * N * K * d + N * K * H);
  b.feed_forward = per_token * (c * 2 * N * d * f + N * f + 2 * N * d);
  if (cfg.mem_mode == MemMode::lamemo && M > 0) {
    const double extra_rows = cfg.rpe_scheme == RpeScheme::xl ? (N + 1) : 0.0;
    b.lookahead = per_token * (c * (M * d * d + 3 * M * (N + 1) * d + extra_rows * d * d) +
                               M * (N + 1) * H);
    b.memory_update = per_token * (3 * M * d + c * (M * d * d + 2 * M * d * f) + M * f + 2 * M * d);
  }
  b.output = c * V * d + V;
  return b;
}

/// Analytic FLOPS for one step of prediction, averaged over a segment.
inline double flops_count(const ModelConfig& cfg, double flops_per_mac = 1.0) {
  return flops_breakdown(cfg, flops_per_mac).total();
}

struct FlopsRow {
  std::string mode;
  double flops_per_step = 0;
};

/// One row per memory mode for the given architecture (none uses M = 0).
inline std::vector<FlopsRow> flops_table(ModelConfig cfg, double flops_per_mac = 1.0) {
  std::vector<FlopsRow> rows;
  for (MemMode m : {MemMode::none, MemMode::xl, MemMode::lamemo}) {
    ModelConfig c = cfg;
    c.mem_mode = m;
    if (m == MemMode::none) c.mem_len = 0;
    rows.push_back({to_string(m), flops_count(c, flops_per_mac)});
  }
  return rows;
}

/// The WikiText-103 architecture used for the FLOPS comparison: 16 layers,
/// d = 410, 10 heads, FFN 2100, N = M = 150 and the 267,735-word vocabulary.
inline ModelConfig wikitext_config(MemMode mode) {
  ModelConfig c;
  c.n_layers = 16;
  c.d_model = 410;
  c.n_heads = 10;
  c.d_head = 41;
  c.d_ff = 2100;
  c.vocab_size = 267735;
  c.seg_len = 150;
  c.mem_mode = mode;
  c.mem_len = mode == MemMode::none ? 0 : 150;
  return c;
}

// ---------------------------------------------------------------------------
// Attention utilization profile

struct AttnProfileRow {
  std::string mode;
  double bucket_start = 0;
  double bucket_end = 0;
  double mean_log_max_weight = 0;
};

struct AttnProfileOptions {
  std::size_t tokens = 1024;    // query tokens to average over
  std::size_t buckets = 20;     // intervals over the rescaled context
  double scaled_context = 100;  // distances are mapped linearly onto [0, scaled_context)
};

/// Final-layer, head-averaged attention of every query token is reduced to
/// the maximal weight inside each distance interval. Distances run over the
/// context M + N and are rescaled onto [0, 100); the bucket value is the
/// natural log of the mean (over tokens) of those maxima. Tokens with no key
/// in a bucket do not contribute to it.
template <class T>
std::vector<AttnProfileRow> attn_profile(const LanguageModel<T>& model, std::span<const int> split,
                                         const AttnProfileOptions& opt = {}) {
  const auto& cfg = model.config();
  if (opt.buckets == 0 || !(opt.scaled_context > 0))
    throw AnalysisError("attn_profile: buckets and scaled context must be positive");
  if (split.size() < opt.tokens + 1 || opt.tokens == 0)
    throw AnalysisError("attn_profile: split has " + std::to_string(split.size()) +
                        " tokens, needs at least " + std::to_string(opt.tokens + 1));
  const std::size_t N = cfg.seg_len;
  const double context = static_cast<double>((cfg.mem_mode == MemMode::none ? 0 : cfg.mem_len) + N);
  const double width = opt.scaled_context / static_cast<double>(opt.buckets);

  std::vector<double> sum(opt.buckets, 0.0);
  std::vector<std::size_t> count(opt.buckets, 0);
  NoGradGuard guard;
  LmState<T> state = model.initial_state(0);
  for (std::size_t t = 0; t < opt.tokens; t += N) {
    const std::size_t n = std::min(N, opt.tokens - t);
    ForwardTrace<T> trace;
    trace.record_last_layer_probs = true;
    auto r = model.forward_segment(split.subspan(t, n), {}, state, {}, &trace);
    state = std::move(r.next);
    const std::size_t keys = trace.last_key_pos.size();
    for (std::size_t i = 0; i < n; ++i) {
      const std::int64_t q = trace.seg_start + static_cast<std::int64_t>(i);
      std::vector<double> best(opt.buckets, -1.0);
      for (std::size_t j = 0; j < keys; ++j) {
        const std::int64_t dist = q - trace.last_key_pos[j];
        if (dist < 0) continue;
        const double scaled = static_cast<double>(dist) * opt.scaled_context / context;
        const auto b = std::min(opt.buckets - 1, static_cast<std::size_t>(scaled / width));
        best[b] = std::max(best[b], static_cast<double>(trace.last_probs[i * keys + j]));
      }
      for (std::size_t b = 0; b < opt.buckets; ++b)
        if (best[b] >= 0) {
          sum[b] += best[b];
          ++count[b];
        }
    }
  }
  std::vector<AttnProfileRow> rows;
  for (std::size_t b = 0; b < opt.buckets; ++b) {
    if (!count[b]) continue;
    const double mean = sum[b] / static_cast<double>(count[b]);
    rows.push_back({to_string(cfg.mem_mode), b * width, (b + 1) * width,
                    std::log(std::min(1.0, mean))});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Memorizing-coefficient profile

struct AlphaProfileRow {
  std::size_t layer = 0;
  std::size_t mem_index = 0;  // 0 = oldest slot
  double mean_alpha = 0;
};

/// Streams `n_segments` segments of the split and averages every alpha
/// (over heads and segments) per (layer, memory index).
template <class T>
std::vector<AlphaProfileRow> alpha_profile(const LanguageModel<T>& model,
                                           std::span<const int> split, std::size_t n_segments) {
  const auto& cfg = model.config();
  if (cfg.mem_mode != MemMode::lamemo)
    throw AnalysisError("alpha_profile needs a lamemo model, got mem_mode " +
                        to_string(cfg.mem_mode));
  const std::size_t N = cfg.seg_len, H = cfg.n_heads;
  if (n_segments == 0 || split.size() < n_segments * N)
    throw AnalysisError("alpha_profile: split has " + std::to_string(split.size()) +
                        " tokens, needs " + std::to_string(n_segments * N));
  std::map<std::pair<std::size_t, std::size_t>, std::pair<double, std::size_t>> acc;
  NoGradGuard guard;
  LmState<T> state = model.initial_state(0);
  for (std::size_t s = 0; s < n_segments; ++s) {
    ForwardTrace<T> trace;
    auto r = model.forward_segment(split.subspan(s * N, N), {}, state, {}, &trace);
    state = std::move(r.next);
    for (std::size_t l = 0; l < cfg.n_layers; ++l)
      for (std::size_t i = 0; i < trace.alpha_rows[l]; ++i)
        for (std::size_t h = 0; h < H; ++h) {
          auto& [sum, n] = acc[{l, i}];
          sum += static_cast<double>(trace.alpha[l][i * H + h]);
          ++n;
        }
  }
  std::vector<AlphaProfileRow> rows;
  for (const auto& [key, v] : acc)
    rows.push_back({key.first, key.second, v.first / static_cast<double>(v.second)});
  return rows;
}

// ---------------------------------------------------------------------------
// g(x) curve

struct GCurveRow {
  double x = 0;
  double g_x = 0;
};

/// g on a uniform grid of n_points over [x_lo, x_hi]. Grid points are formed
/// as (x_lo (n-1-i) + x_hi i) / (n-1) so a symmetric range yields exactly
/// negated abscissae.
inline std::vector<GCurveRow> export_g_curve(std::size_t d, double x_lo, double x_hi,
                                             std::size_t n_points) {
  if (n_points < 2) throw AnalysisError("g curve needs at least two points");
  if (!(x_hi > x_lo)) throw AnalysisError("g curve range must be increasing");
  require_even_width(d);
  std::vector<GCurveRow> rows(n_points);
  const double span = static_cast<double>(n_points - 1);
  for (std::size_t i = 0; i < n_points; ++i) {
    const double x = (x_lo * static_cast<double>(n_points - 1 - i) + x_hi * static_cast<double>(i)) / span;
    rows[i] = {x, g_func(x, d)};
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV

inline void write_flops_csv(std::ostream& os, std::span<const FlopsRow> rows) {
  os << "mode,flops_per_step\n";
  for (const auto& r : rows) os << r.mode << ',' << detail::format_double(r.flops_per_step) << '\n';
}

inline void write_attn_profile_csv(std::ostream& os, std::span<const AttnProfileRow> rows) {
  os << "mode,bucket_start,bucket_end,mean_log_max_weight\n";
  for (const auto& r : rows)
    os << r.mode << ',' << detail::format_double(r.bucket_start) << ','
       << detail::format_double(r.bucket_end) << ',' << detail::format_double(r.mean_log_max_weight)
       << '\n';
}

inline void write_alpha_profile_csv(std::ostream& os, std::span<const AlphaProfileRow> rows) {
  os << "layer,mem_index,mean_alpha\n";
  for (const auto& r : rows)
    os << r.layer << ',' << r.mem_index << ',' << detail::format_double(r.mean_alpha) << '\n';
}

inline void write_g_curve_csv(std::ostream& os, std::span<const GCurveRow> rows) {
  os << "x,g_x\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", r.x, r.g_x);
    os << buf;
  }
}

}  // namespace lamemo

#endif  // LAMEMO_ANALYSIS_HPP_
