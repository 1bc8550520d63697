// Copyright 2026 The lamemo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LAMEMO_MODEL_HPP_
#define LAMEMO_MODEL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lamemo/config.hpp"
#include "lamemo/memory_attention.hpp"
#include "lamemo/numerics/ops.hpp"
#include "lamemo/numerics/optim.hpp"
#include "lamemo/rng.hpp"

namespace lamemo {

template <class T>
struct LayerParams {
  Tensor<T> w_q, w_k, w_v, w_r, w_o;  // d x d
  Tensor<T> ln1_gain, ln1_bias;       // 1 x d
  Tensor<T> ffn_w1, ffn_b1;           // d x d_ff, 1 x d_ff
  Tensor<T> ffn_w2, ffn_b2;           // d_ff x d, 1 x d
  Tensor<T> ln2_gain, ln2_bias;       // 1 x d
};

/// Recurrent state carried between segments of one stream.
template <class T>
struct LmState {
  std::vector<LayerMemory<T>> layers;
  std::int64_t position = 0;  // stream position of the next token
};

/// Per-forward instrumentation.
template <class T>
struct ForwardTrace {
  bool record_last_layer_probs = false;
  // alpha[l] holds n_mem x n_heads memorizing coefficients of layer l
  // (row 0 = oldest slot); empty when no interpolation happened.
  std::vector<std::vector<T>> alpha;
  std::vector<std::size_t> alpha_rows;
  // Head-averaged causal probabilities of the final layer.
  std::vector<T> last_probs;
  std::vector<std::int64_t> last_key_pos;
  std::int64_t seg_start = 0;
};

struct ForwardOptions {
  bool training = false;  // enables dropout
  Rng* rng = nullptr;     // dropout source; required when training with dropout > 0
  AttentionCounters* counters = nullptr;
};

template <class T>
struct SegmentResult {
  Tensor<T> logits;  // N x vocab
  Tensor<T> loss;    // mean nll in nats (only when targets are given)
  LmState<T> next;
};

template <class T>
class LanguageModel {
 public:
  LanguageModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const std::size_t d = cfg_.d_model, f = cfg_.d_ff;
    embedding_ = normal_init({cfg_.vocab_size, d}, rng);
    layers_.resize(cfg_.n_layers);
    for (auto& L : layers_) {
      L.w_q = normal_init({d, d}, rng);
      L.w_k = normal_init({d, d}, rng);
      L.w_v = normal_init({d, d}, rng);
      L.w_r = normal_init({d, d}, rng);
      L.w_o = normal_init({d, d}, rng);
      L.ln1_gain = Tensor<T>({1, d}, T(1));
      L.ln1_bias = Tensor<T>({1, d}, T(0));
      L.ffn_w1 = normal_init({d, f}, rng);
      L.ffn_b1 = Tensor<T>({1, f}, T(0));
      L.ffn_w2 = normal_init({f, d}, rng);
      L.ffn_b2 = Tensor<T>({1, d}, T(0));
      L.ln2_gain = Tensor<T>({1, d}, T(1));
      L.ln2_bias = Tensor<T>({1, d}, T(0));
    }
    rpe_u_ = Tensor<T>({1, d}, T(0));
    rpe_v_ = Tensor<T>({1, d}, T(0));
    if (cfg_.rpe_scheme == RpeScheme::dis) rpe_v_back_ = Tensor<T>({1, d}, T(0));
    for (auto& p : parameters()) p.tensor.set_requires_grad(true);
  }

  const ModelConfig& config() const { return cfg_; }

  /// Every trainable tensor under a stable name, in a fixed order.
  ParameterList<T> parameters() const {
    ParameterList<T> out;
    out.push_back({"embedding", embedding_});
    out.push_back({"rpe.u", rpe_u_});
    out.push_back({"rpe.v", rpe_v_});
    if (rpe_v_back_.defined()) out.push_back({"rpe.v_back", rpe_v_back_});
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      const std::string p = "layer" + std::to_string(l) + ".";
      out.push_back({p + "w_q", L.w_q});
      out.push_back({p + "w_k", L.w_k});
      out.push_back({p + "w_v", L.w_v});
      out.push_back({p + "w_r", L.w_r});
      out.push_back({p + "w_o", L.w_o});
      out.push_back({p + "ln1.gain", L.ln1_gain});
      out.push_back({p + "ln1.bias", L.ln1_bias});
      out.push_back({p + "ffn.w1", L.ffn_w1});
      out.push_back({p + "ffn.b1", L.ffn_b1});
      out.push_back({p + "ffn.w2", L.ffn_w2});
      out.push_back({p + "ffn.b2", L.ffn_b2});
      out.push_back({p + "ln2.gain", L.ln2_gain});
      out.push_back({p + "ln2.bias", L.ln2_bias});
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
  }

  const Tensor<T>& embedding() const { return embedding_; }
  const LayerParams<T>& layer(std::size_t l) const { return layers_.at(l); }

  /// Attention view of layer `l` (biases shared across layers).
  AttentionWeights<T> attention(std::size_t l) const {
    const auto& L = layers_.at(l);
    AttentionWeights<T> w;
    w.n_heads = cfg_.n_heads;
    w.scheme = cfg_.rpe_scheme;
    w.w_q = L.w_q;
    w.w_k = L.w_k;
    w.w_v = L.w_v;
    w.w_r = L.w_r;
    w.u = rpe_u_;
    w.v = rpe_v_;
    w.v_back = rpe_v_back_;
    return w;
  }

  /// Row lookup scaled by sqrt(d).
  Tensor<T> embed(std::span<const int> ids) const {
    return embedding_lookup(embedding_, ids,
                            static_cast<T>(std::sqrt(static_cast<double>(cfg_.d_model))));
  }

  /// f(x) = LN(FFN(LN(x)) + LN(x)), with two separately parameterized LNs.
  Tensor<T> layer_transform(const Tensor<T>& x, std::size_t l, const ForwardOptions& opt = {}) const {
    const auto& L = layers_.at(l);
    const Tensor<T> h = layer_norm(x, L.ln1_gain, L.ln1_bias);
    Tensor<T> hidden = relu(add_row(matmul(h, L.ffn_w1), L.ffn_b1));
    hidden = maybe_dropout(hidden, opt);
    const Tensor<T> ffn = add_row(matmul(hidden, L.ffn_w2), L.ffn_b2);
    return layer_norm(add(ffn, h), L.ln2_gain, L.ln2_bias);
  }

  /// Fresh state for a stream starting at `position`, with memory capacity
  /// `mem_len` (defaults to the configured length).
  LmState<T> initial_state(std::int64_t position = 0,
                           std::optional<std::size_t> mem_len = std::nullopt) const {
    LmState<T> s;
    s.position = position;
    const std::size_t cap = cfg_.mem_mode == MemMode::none ? 0 : mem_len.value_or(cfg_.mem_len);
    s.layers.assign(cfg_.n_layers, LayerMemory<T>{cfg_.mem_mode, cap, {}});
    return s;
  }

  /// One segment: the refresh schedule bottom-up through the layers, then the
  /// tied output projection. `targets` may be empty (no loss).
  SegmentResult<T> forward_segment(std::span<const int> ids, std::span<const int> targets,
                                   const LmState<T>& state, const ForwardOptions& opt = {},
                                   ForwardTrace<T>* trace = nullptr) const {
    if (ids.empty()) throw DimensionError("forward_segment: empty segment");
    if (!targets.empty() && targets.size() != ids.size())
      throw DimensionError("forward_segment: one target per input token");
    if (state.layers.size() != cfg_.n_layers)
      throw ContractError("forward_segment: state has the wrong number of layers");
    if (opt.training && cfg_.dropout > 0.0 && opt.rng == nullptr)
      throw ContractError("forward_segment: dropout needs an rng");

    const std::int64_t start = state.position;
    SegmentResult<T> out;
    out.next.position = start + static_cast<std::int64_t>(ids.size());
    out.next.layers.resize(cfg_.n_layers);
    if (trace) {
      trace->alpha.assign(cfg_.n_layers, {});
      trace->alpha_rows.assign(cfg_.n_layers, 0);
      trace->seg_start = start;
    }

    Tensor<T> x = embed(ids);
    std::optional<Tensor<T>> refreshed;  // lamemo: memory rows refreshed by the layer below
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      const auto& mem = state.layers[l];
      std::optional<Tensor<T>> mem_in;
      if (cfg_.mem_mode == MemMode::xl || (cfg_.mem_mode == MemMode::lamemo && l == 0))
        mem_in = memory_inputs(mem);
      else if (cfg_.mem_mode == MemMode::lamemo)
        mem_in = refreshed;
      if (mem_in && mem_in->rows() != mem.size())
        throw ContractError("forward_segment: layers disagree on memory length");

      RefreshOptions ropt;
      ropt.eps = cfg_.interp_eps;
      ropt.counters = opt.counters;
      ropt.record_probs = trace && trace->record_last_layer_probs && l + 1 == cfg_.n_layers;
      const auto w = attention(l);
      auto r = refresh_and_advance(mem_in, x, start, mem, w, ropt);

      const auto& L = layers_[l];
      Tensor<T> seg_out =
          layer_transform(add(maybe_dropout(matmul(r.seg_context, L.w_o), opt), x), l, opt);
      std::optional<Tensor<T>> mem_out;
      if (r.mem_context)
        mem_out = layer_transform(add(maybe_dropout(matmul(*r.mem_context, L.w_o), opt), *mem_in),
                                  l, opt);

      if (trace) {
        trace->alpha[l] = r.alpha;
        trace->alpha_rows[l] = r.mem_context ? mem.size() : 0;
        if (ropt.record_probs) {
          trace->last_probs = r.causal_probs_mean;
          trace->last_key_pos = r.key_pos;
        }
      }
      {
        NoGradGuard guard;
        out.next.layers[l] = commit_refresh(mem, mem_in, x.detach(), start, r);
      }
      x = seg_out;
      refreshed = mem_out;
    }
    // The tied projection is rescaled by 1/sqrt(d); without it a fresh model
    // scores each input token about sigma * d above the rest and starts out
    // copying its input instead of near-uniform.
    out.logits = scale(matmul_nt(x, embedding_),
                       static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg_.d_model))));
    if (!targets.empty()) out.loss = cross_entropy(out.logits, targets);
    return out;
  }

  /// Mutable access for optimizers and checkpoint loading.
  ParameterList<T> mutable_parameters() { return parameters(); }

 private:
  Tensor<T> normal_init(Shape shape, Rng& rng) const {
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.normal(0.0, 0.02));
    return Tensor<T>(std::move(shape), std::move(v));
  }

  Tensor<T> maybe_dropout(const Tensor<T>& t, const ForwardOptions& opt) const {
    if (!opt.training || cfg_.dropout <= 0.0) return t;
    return dropout(t, cfg_.dropout, *opt.rng);
  }

  ModelConfig cfg_;
  Tensor<T> embedding_;
  std::vector<LayerParams<T>> layers_;
  Tensor<T> rpe_u_, rpe_v_, rpe_v_back_;
};

/// Nucleus sampling: keep the most probable tokens until their mass reaches
/// `p`, renormalize, draw one.
template <class T>
int sample_top_p(std::span<const T> logits, double p, Rng& rng) {
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("top-p must lie in (0, 1]");
  if (logits.empty()) throw DimensionError("sample_top_p: empty logits");
  std::vector<double> prob(logits.size());
  const double hi = static_cast<double>(*std::max_element(logits.begin(), logits.end()));
  double z = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += prob[i] = std::exp(double(logits[i]) - hi);
  for (auto& q : prob) q /= z;
  std::vector<int> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return prob[a] > prob[b]; });
  double mass = 0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    mass += prob[order[keep++]];
    if (mass >= p - 1e-12) break;
  }
  double u = rng.uniform() * mass;
  for (std::size_t k = 0; k < keep; ++k) {
    u -= prob[order[k]];
    if (u < 0) return order[k];
  }
  return order[keep - 1];
}

}  // namespace lamemo

#endif  // LAMEMO_MODEL_HPP_
