// Copyright 2026 The lamemo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LAMEMO_VERIFY_HPP_
#define LAMEMO_VERIFY_HPP_

// Property suites shared by `lamemo check` and the acceptance runner. Each
// suite is self-contained, deterministic, and reports what it measured next
// to the threshold it was held to.

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "lamemo/analysis.hpp"
#include "lamemo/memory_attention.hpp"
#include "lamemo/model.hpp"
#include "lamemo/numerics/grad_check.hpp"
#include "lamemo/numerics/kernels.hpp"
#include "lamemo/pipeline.hpp"
#include "lamemo/posenc.hpp"

namespace lamemo::verify {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string measured;
  std::string threshold;
  double seconds = 0.0;
};

namespace detail {

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

inline std::string sci(double v, int digits = 3) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(digits) << v;
  return os.str();
}

inline std::string fixed(double v, int digits = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

inline constexpr MemMode kModes[] = {MemMode::none, MemMode::xl, MemMode::lamemo};
inline constexpr RpeScheme kSchemes[] = {RpeScheme::xl, RpeScheme::dis};

/// 2 layers, d = 8, 2 heads, FFN 16, vocab 11, 64-bit.
inline ModelConfig toy_config(MemMode mode, RpeScheme scheme, std::size_t M, std::size_t N) {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_head = 4;
  c.d_ff = 16;
  c.dropout = 0.0;
  c.vocab_size = 11;
  c.mem_mode = mode;
  c.mem_len = mode == MemMode::none ? 0 : M;
  c.seg_len = N;
  c.rpe_scheme = scheme;
  c.precision = "f64";
  return c;
}

/// Replaces the 0.02 initialization (gains excepted) with N(0, sd) so that
/// attention is far from uniform and every parameter matters.
template <class T>
void perturb_parameters(LanguageModel<T>& m, std::uint64_t seed, double sd = 0.3) {
  Rng rng(seed);
  for (auto& p : m.mutable_parameters()) {
    if (p.name.find("gain") != std::string::npos) continue;
    for (auto& v : p.tensor.mutable_values()) v = static_cast<T>(rng.normal(0.0, sd));
  }
}

inline std::vector<int> random_ids(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<int> ids(n);
  for (auto& i : ids) i = static_cast<int>(rng.next_u64() % vocab);
  return ids;
}

template <class T>
std::vector<T> stream_logits(const LanguageModel<T>& m, const std::vector<int>& ids,
                             std::size_t N) {
  NoGradGuard guard;
  auto state = m.initial_state();
  std::vector<T> all;
  for (std::size_t s = 0; s < ids.size(); s += N) {
    const std::size_t e = std::min(ids.size(), s + N);
    auto r = m.forward_segment(std::span<const int>(ids.data() + s, e - s), {}, state);
    all.insert(all.end(), r.logits.values().begin(), r.logits.values().end());
    state = std::move(r.next);
  }
  return all;
}

inline std::vector<double> cholesky(const std::vector<double>& a, std::size_t n) {
  std::vector<double> l(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      if (i == j) {
        if (!(s > 0)) throw ContractError("cholesky: matrix is not positive definite");
        l[i * n + i] = std::sqrt(s);
      } else {
        l[i * n + j] = s / l[j * n + j];
      }
    }
  return l;
}

struct LinearFit {
  double slope = 0, intercept = 0, r2 = 0;
};

inline LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  LinearFit f;
  f.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  f.intercept = (sy - f.slope * sx) / n;
  const double mean = sy / n;
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (f.slope * x[i] + f.intercept);
    ss_res += e * e;
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  f.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
  return f;
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// First-layer memory aggregates of a 2-layer toy model against a direct
/// softmax over each slot's key window, for N in {1,2,3}, M in {2,4}, both
/// encodings, after each of 4 iterations (interpolation eps = 0).
inline SuiteResult oracle_equivalence(double tol = 1e-10) {
  detail::Timer timer;
  double worst = 0.0;
  std::size_t slots_checked = 0;
  for (RpeScheme scheme : detail::kSchemes)
    for (std::size_t N : {1u, 2u, 3u})
      for (std::size_t M : {2u, 4u}) {
        auto cfg = detail::toy_config(MemMode::lamemo, scheme, M, N);
        cfg.interp_eps = 0.0;
        LanguageModel<double> m(cfg, 40 + N * 7 + M);
        detail::perturb_parameters(m, 41 + N * 7 + M);
        Rng rng(42 + N * 7 + M);
        const auto ids = detail::random_ids(rng, 4 * N, cfg.vocab_size);
        NoGradGuard guard;
        const Tensor<double> inputs = m.embed(ids);
        const auto w = m.attention(0);
        auto state = m.initial_state();
        for (std::size_t it = 0; it < 4; ++it) {
          auto seg = std::span<const int>(ids).subspan(it * N, N);
          state = m.forward_segment(seg, {}, state).next;
          for (const auto& s : state.layers[0].slots) {
            const auto ref =
                oracle_full_attention(inputs, s.abs_pos, s.leftmost_key_pos, s.rightmost_key_pos, w);
            for (std::size_t c = 0; c < ref.size(); ++c)
              worst = std::max(worst, std::abs(ref[c] - s.c_agg[c]));
            ++slots_checked;
          }
        }
      }
  return {"oracle_equivalence", worst < tol,
          "max |c_agg - oracle| = " + detail::sci(worst) + " over " + std::to_string(slots_checked) +
              " slot checks",
          "< " + detail::sci(tol, 0), timer.seconds()};
}

/// Randomized token perturbations; logits of every earlier position must be
/// bit-identical. Trials cycle through all (mode, scheme) pairs.
inline SuiteResult no_leakage(std::size_t trials = 200) {
  detail::Timer timer;
  const unsigned threads = kernels::threads();
  kernels::set_threads(1);
  std::vector<LanguageModel<double>> models;
  std::vector<std::string> labels;
  for (MemMode mode : detail::kModes)
    for (RpeScheme scheme : detail::kSchemes) {
      models.emplace_back(detail::toy_config(mode, scheme, 4, 3), 60 + models.size());
      detail::perturb_parameters(models.back(), 70 + models.size());
      labels.push_back(to_string(mode) + "/" + to_string(scheme));
    }
  Rng rng(13);
  std::size_t leaks = 0, inert = 0;
  std::string first_leak;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto& m = models[t % models.size()];
    const std::size_t V = m.config().vocab_size;
    const auto ids = detail::random_ids(rng, 15, V);
    const std::size_t p = rng.next_u64() % ids.size();
    auto other = ids;
    other[p] = static_cast<int>((other[p] + 1 + rng.next_u64() % (V - 1)) % V);
    const auto base = detail::stream_logits(m, ids, 3);
    const auto pert = detail::stream_logits(m, other, 3);
    bool leaked = false, changed = false;
    for (std::size_t i = 0; i < p * V; ++i) leaked = leaked || base[i] != pert[i];
    for (std::size_t i = p * V; i < base.size(); ++i) changed = changed || base[i] != pert[i];
    if (leaked && first_leak.empty())
      first_leak = " (first: " + labels[t % models.size()] + " p=" + std::to_string(p) + ")";
    leaks += leaked;
    inert += !changed;
  }
  kernels::set_threads(threads);
  return {"no_leakage", leaks == 0 && inert == 0,
          std::to_string(trials) + " trials, " + std::to_string(leaks) + " with earlier logits changed, " +
              std::to_string(inert) + " with no effect at all" + first_leak,
          "0 leaks, bit-identical prefix", timer.seconds()};
}

/// Central-difference check of every differentiable primitive.
inline SuiteResult gradient_ops(double tol = 1e-6) {
  detail::Timer timer;
  using Td = Tensor<double>;
  Rng rng(100);
  auto rt = [&](Shape s) {
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = rng.normal();
    return Td(std::move(s), std::move(v));
  };
  auto a = rt({3, 4}), b = rt({4, 2}), c = rt({3, 4}), w = rt({3, 2});
  auto bias = rt({1, 4}), gain = rt({1, 4}), nt = rt({5, 4}), table = rt({3, 4});
  auto proj = rt({4, 3}), lse = rt({3});
  Mask mask(3, 4);
  mask.set(0, 3, false);
  mask.set(2, 0, false);
  const std::vector<int> ids{1, 0, 1, 2}, tg{2, 0, 1};
  std::vector<double> c_old(12), s_old(3);
  for (auto& v : c_old) v = rng.normal();
  for (auto& v : s_old) v = rng.normal();

  auto wsum = [](const Td& t, std::uint64_t seed) {
    Rng r(seed);
    std::vector<double> v(t.numel());
    for (auto& x : v) x = r.normal();
    return sum(mul(t, Td(t.shape(), std::move(v))));
  };
  const std::vector<std::pair<std::string, std::function<Td()>>> cases = {
      {"matmul", [&] { return wsum(matmul(a, b), 1); }},
      {"matmul_nt", [&] { return wsum(matmul_nt(a, nt), 2); }},
      {"add/sub/mul", [&] { return wsum(mul(add(a, c), sub(c, a)), 3); }},
      {"scale/add_row", [&] { return wsum(add_row(scale(a, 0.7), bias), 4); }},
      {"relu", [&] { return wsum(relu(a), 5); }},
      {"layer_norm", [&] { return wsum(layer_norm(a, gain, bias), 6); }},
      {"slice/concat_cols",
       [&] { return wsum(concat_cols<double>({slice_cols(a, 1, 3), slice_rows(c, 0, 3)}), 7); }},
      {"concat_rows", [&] { return wsum(concat_rows<double>({a, slice_rows(c, 1, 2)}), 8); }},
      {"gather_cols", [&] { return wsum(gather_cols(a, {0, -1, 3, 1, 1, 2}, 2), 9); }},
      {"softmax", [&] { return wsum(softmax_masked(a, mask).probs, 10); }},
      {"log_denominator", [&] { return wsum(softmax_masked(a, mask).log_denoms, 11); }},
      {"embedding", [&] { return wsum(embedding_lookup(table, ids, 2.0), 12); }},
      {"cross_entropy", [&] { return cross_entropy(matmul(a, proj), tg); }},
      {"mean", [&] { return mean(mul(w, w)); }},
      {"interpolate", [&] {
         return wsum(interpolate_rows<double>(c_old, s_old, a, lse, 1e-4).c_mix, 13);
       }},
  };
  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, fn] : cases) {
    const auto r = grad_check<double>(fn, {a, b, c, w, bias, gain, nt, table, proj, lse});
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = name;
    }
  }
  return {"gradient_ops", worst < tol,
          std::to_string(cases.size()) + " primitives, max rel error " + detail::sci(worst) + " (" +
              worst_name + ")",
          "< " + detail::sci(tol, 0), timer.seconds()};
}

/// Full-model gradient check on the toy configuration for every
/// (mode, scheme) pair: loss of a third segment after two warm-up segments.
inline SuiteResult gradient_model(double tol = 1e-4) {
  detail::Timer timer;
  bool ok = true;
  double worst_resolved = 0.0, worst_strict = 0.0, worst_unresolved_ratio = 0.0;
  std::size_t checked = 0, unresolved = 0;
  for (MemMode mode : detail::kModes)
    for (RpeScheme scheme : detail::kSchemes) {
      LanguageModel<double> m(detail::toy_config(mode, scheme, 3, 3), 19);
      detail::perturb_parameters(m, 20);
      Rng rng(21);
      auto state = m.initial_state();
      for (int s = 0; s < 2; ++s) {
        NoGradGuard guard;
        state = m.forward_segment(detail::random_ids(rng, 3, 11), {}, state).next;
      }
      const auto ids = detail::random_ids(rng, 3, 11), tg = detail::random_ids(rng, 3, 11);
      std::vector<Tensor<double>> params;
      for (auto& p : m.parameters()) params.push_back(p.tensor);
      const auto r =
          grad_check<double>([&] { return m.forward_segment(ids, tg, state).loss; }, params);
      ok = ok && r.passes(tol);
      worst_resolved = std::max(worst_resolved, r.max_rel_error_resolved);
      worst_strict = std::max(worst_strict, r.max_rel_error);
      if (r.fd_noise > 0)
        worst_unresolved_ratio = std::max(worst_unresolved_ratio, r.max_abs_error_unresolved / r.fd_noise);
      checked += r.checked;
      unresolved += r.unresolved;
    }
  return {"gradient_model", ok,
          "6 pairs, " + std::to_string(checked) + " entries; resolved rel " +
              detail::sci(worst_resolved) + "; " + std::to_string(unresolved) +
              " below FD resolution, abs <= " + detail::fixed(worst_unresolved_ratio, 1) +
              " x noise; strict rel (all entries) " + detail::sci(worst_strict),
          "resolved < " + detail::sci(tol, 0) + ", unresolved abs <= 100 x noise", timer.seconds()};
}

/// g(0), antisymmetry, near-zero slope, and a Monte-Carlo estimate of
/// Var(x^T R_delta) against the closed form at d = 64.
inline SuiteResult posenc_numerics(std::size_t samples = 1000000) {
  detail::Timer timer;
  const std::size_t d = 64;
  const double g0 = g_func(0.0, d);
  double asym = 0.0;
  for (const auto& row : export_g_curve(d, 0.0, 200.0, 2001))
    asym = std::max(asym, std::abs(g_func(row.x, d) + g_func(-row.x, d)));
  const double h = 1e-3;
  const double slope = (g_func(h, d) - g_func(-h, d)) / (2 * h);
  const double slope_rel = std::abs(slope - gamma_d(d)) / gamma_d(d);

  // x ~ N(0, S): S_ii = sigma_s, S[sin k, cos l] = sigma_c for k != l. One
  // set of draws serves every delta.
  const double sigma_s = 1.0, sigma_c = 0.03;
  std::vector<double> cov(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) cov[i * d + i] = sigma_s;
  for (std::size_t k = 0; k < d / 2; ++k)
    for (std::size_t l = 0; l < d / 2; ++l)
      if (k != l) cov[(2 * k) * d + 2 * l + 1] = cov[(2 * l + 1) * d + 2 * k] = sigma_c;
  const auto chol = detail::cholesky(cov, d);
  const std::vector<double> deltas{-5, -2, -1, -0.5, 0.5, 1, 2, 5};
  std::vector<std::vector<double>> wts;
  for (double delta : deltas) {
    const auto r = sinusoid_row<double>(delta, d);
    std::vector<double> w(d, 0.0);  // x.R = z.(L^T R) for x = L z
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j <= i; ++j) w[j] += chol[i * d + j] * r[i];
    wts.push_back(std::move(w));
  }
  const std::size_t D = deltas.size();
  std::vector<double> s1(D, 0), s2(D, 0), s3(D, 0), s4(D, 0);
  Rng rng(2024);
  std::vector<double> z(d);
  for (std::size_t n = 0; n < samples; ++n) {
    for (auto& v : z) v = rng.normal();
    for (std::size_t k = 0; k < D; ++k) {
      double y = 0;
      for (std::size_t j = 0; j < d; ++j) y += wts[k][j] * z[j];
      const double y2 = y * y;
      s1[k] += y;
      s2[k] += y2;
      s3[k] += y2 * y;
      s4[k] += y2 * y2;
    }
  }
  double worst_z = 0.0;
  std::ostringstream detail_os;
  const double ns = static_cast<double>(samples);
  for (std::size_t k = 0; k < D; ++k) {
    const double m1 = s1[k] / ns, m2 = s2[k] / ns, m3 = s3[k] / ns, m4 = s4[k] / ns;
    const double var = m2 - m1 * m1;
    const double c4 = m4 - 4 * m1 * m3 + 6 * m1 * m1 * m2 - 3 * m1 * m1 * m1 * m1;
    const double se = std::sqrt((c4 - var * var) / ns);
    const double expected = analytic_var(sigma_s, sigma_c, deltas[k], d);
    const double zs = std::abs(var * ns / (ns - 1) - expected) / se;
    worst_z = std::max(worst_z, zs);
  }
  const bool ok = g0 == 0.0 && asym < 1e-12 && slope_rel < 0.05 && worst_z < 3.0;
  return {"posenc_numerics", ok,
          "g(0)=" + detail::sci(g0, 1) + ", max|g(x)+g(-x)|=" + detail::sci(asym, 1) +
              ", slope " + detail::fixed(slope, 2) + " vs gamma_64 " + detail::fixed(gamma_d(d), 2) +
              " (" + detail::fixed(100 * slope_rel, 2) + "%), MC worst " +
              detail::fixed(worst_z, 2) + " SE over " + std::to_string(samples) + " samples",
          "g(0)=0, asym<1e-12, slope<5%, |MC-closed|<3 SE", timer.seconds()};
}

/// Analytic FLOPS for the WikiText-103 architecture against the reference
/// 148M / 157M / 191M.
inline SuiteResult flops(double tol = 0.10) {
  detail::Timer timer;
  const double reference[] = {148e6, 157e6, 191e6};
  bool ok = true;
  std::ostringstream os;
  int i = 0;
  for (MemMode m : detail::kModes) {
    const double f = flops_count(wikitext_config(m));
    const double rel = (f - reference[i]) / reference[i];
    ok = ok && std::abs(rel) <= tol;
    os << (i ? ", " : "") << to_string(m) << " " << detail::fixed(f / 1e6, 1) << "M ("
       << (rel >= 0 ? "+" : "") << detail::fixed(100 * rel, 1) << "%)";
    ++i;
  }
  os << "; 2 FLOPs/MAC would give " << detail::fixed(flops_count(wikitext_config(MemMode::xl), 2.0) / 1e6, 0)
     << "M for xl";
  return {"flops", ok, os.str(), "within +-10% of 148M/157M/191M", timer.seconds()};
}

/// Look-ahead score evaluations per iteration, measured by the attention
/// counters in steady state, for M in {64,128,256,512} at N = 64.
inline SuiteResult complexity() {
  detail::Timer timer;
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_head = 8;
  cfg.d_ff = 32;
  cfg.seg_len = 64;
  cfg.dropout = 0.0;
  std::vector<double> ms, la, causal;
  for (std::size_t M : {64u, 128u, 256u, 512u}) {
    cfg.mem_len = M;
    LanguageModel<float> model(cfg, 5);
    Rng rng(6);
    NoGradGuard guard;
    auto state = model.initial_state();
    AttentionCounters counters;
    for (std::size_t it = 0; it < M / cfg.seg_len + 2; ++it) {
      counters.reset();
      ForwardOptions fo;
      fo.counters = &counters;
      state = model.forward_segment(detail::random_ids(rng, cfg.seg_len, cfg.vocab_size), {}, state, fo)
                  .next;
    }
    ms.push_back(static_cast<double>(M));
    la.push_back(static_cast<double>(counters.lookahead_computed));
    causal.push_back(static_cast<double>(counters.causal_computed));
  }
  const auto fit = detail::fit_line(ms, la);
  // Quadratic growth would make the per-M increments grow; compare the
  // first and last increments.
  const double inc_first = (la[1] - la[0]) / (ms[1] - ms[0]);
  const double inc_last = (la[3] - la[2]) / (ms[3] - ms[2]);
  std::ostringstream os;
  os << "look-ahead scores/iteration";
  for (std::size_t i = 0; i < ms.size(); ++i)
    os << (i ? ", " : " ") << "M=" << ms[i] << ":" << static_cast<std::uint64_t>(la[i]);
  os << "; slope " << detail::fixed(fit.slope, 2) << "/slot, R^2=" << detail::fixed(fit.r2, 6)
     << ", increment ratio last/first " << detail::fixed(inc_last / inc_first, 3);
  return {"complexity", fit.r2 > 0.999, os.str(), "R^2 > 0.999 (linear in M)", timer.seconds()};
}

/// The log-space interpolation against the naive exponential path at 32 bit:
/// agreement on bounded logits and finiteness at magnitude 1000.
inline SuiteResult stability(double tol = 1e-5) {
  detail::Timer timer;
  const std::size_t rows = 256, dh = 8;
  const double eps = 1e-4;
  Rng rng(31);
  std::vector<float> c_old(rows * dh), s_old(rows), c_new(rows * dh), lse(rows);
  for (auto& v : c_old) v = static_cast<float>(rng.normal());
  for (auto& v : c_new) v = static_cast<float>(rng.normal());
  for (auto& v : s_old) v = static_cast<float>(-20 + 40 * rng.uniform());
  for (auto& v : lse) v = static_cast<float>(-20 + 40 * rng.uniform());

  NoGradGuard guard;
  auto run = [&](const std::vector<float>& so, const std::vector<float>& ln) {
    return interpolate_rows<float>(c_old, so, Tensor<float>({rows, dh}, c_new),
                                   Tensor<float>({rows}, ln), eps);
  };
  const auto got = run(s_old, lse);
  double worst_bounded = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const float so = std::exp(s_old[i]), sn = std::exp(lse[i]);
    const float tot = so + sn + static_cast<float>(eps);
    const float alpha = so / tot, keep = (sn + static_cast<float>(eps)) / tot;
    worst_bounded = std::max(worst_bounded, static_cast<double>(std::abs(got.alpha[i] - alpha) / std::max(alpha, 1e-30f)));
    float scale = 0;
    for (std::size_t c = 0; c < dh; ++c) scale = std::max(scale, std::abs(c_old[i * dh + c]) + std::abs(c_new[i * dh + c]));
    for (std::size_t c = 0; c < dh; ++c) {
      const float naive = alpha * c_old[i * dh + c] + keep * c_new[i * dh + c];
      worst_bounded = std::max(worst_bounded,
                               static_cast<double>(std::abs(got.c_mix.values()[i * dh + c] - naive) / scale));
    }
  }

  // Magnitude 1000: exp overflows in float, the log-space path must not.
  std::vector<float> big_old(rows), big_new(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    big_old[i] = static_cast<float>(1000 + 4 * rng.uniform() - 2);
    big_new[i] = static_cast<float>(1000 + 4 * rng.uniform() - 2);
  }
  const auto big = run(big_old, big_new);
  bool finite = true;
  double worst_big = 0.0;
  bool naive_overflows = false;
  for (std::size_t i = 0; i < rows; ++i) {
    naive_overflows = naive_overflows || !std::isfinite(std::exp(big_old[i]));
    const double ref_alpha = 1.0 / (1.0 + std::exp(double(big_new[i]) - double(big_old[i])));
    finite = finite && std::isfinite(big.alpha[i]) && std::isfinite(big.log_s[i]);
    worst_big = std::max(worst_big, std::abs(big.alpha[i] - ref_alpha) / ref_alpha);
  }
  for (float v : big.c_mix.values()) finite = finite && std::isfinite(v);

  return {"stability", worst_bounded < tol && finite,
          "bounded logits: max rel diff vs naive " + detail::sci(worst_bounded) +
              "; |logit|~1000: naive exp " + (naive_overflows ? "overflows" : "finite") +
              ", log-space " + (finite ? "finite" : "NON-FINITE") + ", alpha rel err vs f64 " +
              detail::sci(worst_big),
          "< " + detail::sci(tol, 0) + " and finite at 1000", timer.seconds()};
}

/// Identical seeds give identical logs and checkpoints; 50 + 50 resumed
/// steps equal 100 uninterrupted ones; save -> load -> save is byte-exact.
inline SuiteResult determinism(const Corpus& corpus) {
  detail::Timer timer;
  const unsigned threads = kernels::threads();
  kernels::set_threads(1);
  RunConfig r;
  r.model.n_layers = 2;
  r.model.d_model = 16;
  r.model.n_heads = 2;
  r.model.d_head = 8;
  r.model.d_ff = 32;
  r.model.seg_len = 8;
  r.model.mem_len = 8;
  r.model.vocab_size = corpus.vocab.size();
  r.train.steps = 100;
  r.train.batch = 2;
  r.train.eval_interval = 25;
  r.train.eval_tokens = 128;
  r.train.log_interval = 10;
  r.train.lr = 2e-3;
  r.seed = 11;
  auto bytes = [](const Checkpoint<float>& ck) {
    std::ostringstream os(std::ios::binary);
    save_checkpoint(ck, os);
    return os.str();
  };
  auto csv = [](const std::vector<MetricRow>& rows) {
    std::ostringstream os;
    write_metrics_csv(os, rows);
    return os.str();
  };
  const auto a = train<float>(r, corpus), b = train<float>(r, corpus);
  const bool same_seed = csv(a.metrics) == csv(b.metrics) && bytes(a.checkpoint) == bytes(b.checkpoint);

  TrainOptions half;
  half.stop_at = 50;
  const auto first = train<float>(r, corpus, std::nullopt, half);
  const std::string mid = bytes(first.checkpoint);
  std::istringstream is(mid, std::ios::binary);
  auto loaded = load_checkpoint<float>(is, r.model);
  const bool roundtrip = bytes(loaded) == mid;
  const auto second = train<float>(r, corpus, std::move(loaded));
  auto joined = first.metrics;
  joined.insert(joined.end(), second.metrics.begin(), second.metrics.end());
  const bool resume = csv(joined) == csv(a.metrics) && bytes(second.checkpoint) == bytes(a.checkpoint);
  kernels::set_threads(threads);
  return {"determinism", same_seed && resume && roundtrip,
          std::string("same-seed logs+checkpoint ") + (same_seed ? "identical" : "DIFFER") +
              "; 50+50 resume " + (resume ? "bit-exact" : "DIFFERS") + "; save/load/save " +
              (roundtrip ? "byte-identical" : "DIFFERS"),
          "all exact", timer.seconds()};
}

/// Every suite above, in a fixed order.
inline std::vector<SuiteResult> run_all(const Corpus& corpus,
                                        const std::function<void(const SuiteResult&)>& on_done = {}) {
  std::vector<SuiteResult> out;
  auto add = [&](SuiteResult r) {
    if (on_done) on_done(r);
    out.push_back(std::move(r));
  };
  add(oracle_equivalence());
  add(no_leakage());
  add(gradient_ops());
  add(gradient_model());
  add(posenc_numerics());
  add(flops());
  add(complexity());
  add(stability());
  add(determinism(corpus));
  return out;
}

inline void print_row(std::ostream& os, const SuiteResult& r) {
  os << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(20) << r.name << " "
     << r.measured << " [" << r.threshold << "] (" << detail::fixed(r.seconds, 2) << " s)\n";
}

}  // namespace lamemo::verify

#endif  // LAMEMO_VERIFY_HPP_
