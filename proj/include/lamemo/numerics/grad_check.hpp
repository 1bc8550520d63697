// Copyright 2026 The lamemo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LAMEMO_NUMERICS_GRAD_CHECK_HPP_
#define LAMEMO_NUMERICS_GRAD_CHECK_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "lamemo/errors.hpp"
#include "lamemo/numerics/tensor.hpp"

namespace lamemo {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;

  // A central difference carries round-off of roughly eps_machine * |f| / h
  // (`fd_noise`). Entries whose analytic and numeric values are both below
  // 1e5 * fd_noise cannot be resolved to 1e-5 relative; they are judged by
  // absolute error instead and excluded from `max_rel_error_resolved`.
  double fd_noise = 0.0;
  double max_rel_error_resolved = 0.0;
  std::size_t unresolved = 0;
  double max_abs_error_unresolved = 0.0;

  /// Relative tolerance on resolved entries plus an absolute bound of
  /// 100 * fd_noise on unresolved ones.
  bool passes(double rel_tol) const {
    return max_rel_error_resolved < rel_tol && max_abs_error_unresolved <= 100.0 * fd_noise;
  }
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences (f(x+h) - f(x-h)) / 2h, element by element. The relative
/// error uses max(|analytic|, |numeric|, 1e-8) as denominator.
///
/// `fn` must rebuild its graph from the current parameter values on every
/// call. Parameters are restored after each perturbation.
template <class T>
GradCheckReport grad_check(const std::function<Tensor<T>()>& fn,
                           std::vector<Tensor<T>> params, double step_size = 1e-5) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  double f0 = 0.0;
  {
    Tensor<T> y = fn();
    f0 = static_cast<double>(y.item());
    if (!std::isfinite(f0))
      throw NonFiniteError("grad_check: non-finite value at the base point");
    y.backward();
  }
  std::vector<std::vector<T>> analytic;
  for (auto& p : params) {
    if (p.has_grad())
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    else
      analytic.emplace_back(p.numel(), T(0));
  }

  GradCheckReport report;
  report.fd_noise = static_cast<double>(std::numeric_limits<T>::epsilon()) *
                    std::max(1.0, std::abs(f0)) / step_size;
  const double resolvable = 1e5 * report.fd_noise;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T orig = w[i];
      w[i] = static_cast<T>(orig + step_size);
      const double fp = static_cast<double>(fn().item());
      w[i] = static_cast<T>(orig - step_size);
      const double fm = static_cast<double>(fn().item());
      w[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NonFiniteError("grad_check: non-finite value perturbing parameter " +
                             std::to_string(k) + " element " + std::to_string(i));
      const double numeric = (fp - fm) / (2.0 * step_size);
      const double a = static_cast<double>(analytic[k][i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (std::max(std::abs(a), std::abs(numeric)) < resolvable) {
        ++report.unresolved;
        report.max_abs_error_unresolved =
            std::max(report.max_abs_error_unresolved, std::abs(a - numeric));
      } else {
        report.max_rel_error_resolved = std::max(report.max_rel_error_resolved, rel);
      }
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = k;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace lamemo

#endif  // LAMEMO_NUMERICS_GRAD_CHECK_HPP_
