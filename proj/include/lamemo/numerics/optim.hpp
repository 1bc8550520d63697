// Copyright 2026 The lamemo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LAMEMO_NUMERICS_OPTIM_HPP_
#define LAMEMO_NUMERICS_OPTIM_HPP_

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "lamemo/errors.hpp"
#include "lamemo/numerics/tensor.hpp"

namespace lamemo {

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
using ParameterList = std::vector<NamedTensor<T>>;

template <class T>
void zero_grads(ParameterList<T>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

struct AdamHyper {
  double lr = 2.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct OptimizerState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;

  static OptimizerState for_params(const ParameterList<T>& params, AdamHyper h = {}) {
    OptimizerState s;
    s.hyper = h;
    for (const auto& p : params) {
      s.first_moment.emplace_back(p.tensor.numel(), T(0));
      s.second_moment.emplace_back(p.tensor.numel(), T(0));
    }
    return s;
  }
};

/// One bias-corrected Adam update at learning rate `lr`. Parameters without
/// a gradient buffer are treated as having a zero gradient. A non-finite
/// gradient rejects the whole step: nothing is modified and NonFiniteError
/// names the offending parameter.
template <class T>
void adam_step(ParameterList<T>& params, OptimizerState<T>& state, double lr) {
  if (state.first_moment.size() != params.size())
    throw DimensionError("adam_step: optimizer state does not match parameters");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& t = params[k].tensor;
    if (state.first_moment[k].size() != t.numel())
      throw DimensionError("adam_step: moment shape mismatch for " + params[k].name);
    if (!t.has_grad()) continue;
    for (T g : t.grad())
      if (!std::isfinite(static_cast<double>(g)))
        throw NonFiniteError("adam_step: non-finite gradient in " + params[k].name);
  }
  ++state.step;
  const double b1 = state.hyper.beta1, b2 = state.hyper.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& t = params[k].tensor;
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    auto w = t.mutable_values();
    const bool has = t.has_grad();
    auto g = t.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T gi = has ? g[i] : T(0);
      m[i] = static_cast<T>(b1 * m[i] + (1.0 - b1) * gi);
      v[i] = static_cast<T>(b2 * v[i] + (1.0 - b2) * gi * gi);
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] = static_cast<T>(w[i] - lr * mhat / (std::sqrt(vhat) + state.hyper.eps));
    }
  }
}

/// Cosine decay from base_lr to 0 over total_steps, no warmup. Steps past
/// the end clamp to 0.
inline double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double base_lr) {
  if (total_steps == 0) return base_lr;
  if (step >= total_steps) return 0.0;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the factor applied (1 when no clipping happened).
template <class T>
double clip_grad_norm(ParameterList<T>& params, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip_grad_norm: max_norm must be > 0");
  double sq = 0.0;
  for (const auto& p : params)
    if (p.tensor.has_grad())
      for (T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (!(norm > max_norm)) return 1.0;
  const double s = max_norm / norm;
  for (auto& p : params)
    if (p.tensor.has_grad())
      for (auto& g : p.tensor.mutable_grad()) g = static_cast<T>(g * s);
  return s;
}

template <class T>
double global_grad_norm(const ParameterList<T>& params) {
  double sq = 0.0;
  for (const auto& p : params)
    if (p.tensor.has_grad())
      for (T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(sq);
}

}  // namespace lamemo

#endif  // LAMEMO_NUMERICS_OPTIM_HPP_
