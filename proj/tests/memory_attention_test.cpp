// Copyright 2026 The lamemo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "lamemo/memory_attention.hpp"
#include "lamemo/numerics/grad_check.hpp"
#include "test_util.hpp"

namespace lamemo {
namespace {

using testing::random_tensor;
using Td = Tensor<double>;
using Pos = std::vector<std::int64_t>;
constexpr double kInf = std::numeric_limits<double>::infinity();

template <class T = double>
AttentionWeights<T> make_weights(Rng& rng, std::size_t d, std::size_t heads, RpeScheme scheme,
                                 double sd = 0.4) {
  AttentionWeights<T> w;
  w.n_heads = heads;
  w.scheme = scheme;
  w.w_q = random_tensor<T>({d, d}, rng, sd);
  w.w_k = random_tensor<T>({d, d}, rng, sd);
  w.w_v = random_tensor<T>({d, d}, rng, sd);
  w.w_r = random_tensor<T>({d, d}, rng, sd);
  w.u = random_tensor<T>({1, d}, rng, sd);
  w.v = random_tensor<T>({1, d}, rng, sd);
  w.v_back = random_tensor<T>({1, d}, rng, sd);
  return w;
}

Pos iota_pos(std::int64_t start, std::size_t n) {
  Pos p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = start + std::int64_t(i);
  return p;
}

std::vector<double> values(const Td& t) { return {t.values().begin(), t.values().end()}; }

TEST(CausalAttend, SingleQueryAttendsItself) {
  Rng rng(1);
  auto w = make_weights(rng, 4, 2, RpeScheme::dis);
  auto x = random_tensor({1, 4}, rng);
  auto out = causal_attend(x, x, {7}, {7}, w);
  auto v = matmul(x, w.w_v);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out.context[c], v[c], 1e-14);
  // log-denominator of a single survivor is its own scaled score
  for (std::size_t h = 0; h < 2; ++h) {
    auto t = head_table(w, h, 0);
    const double s = rpe_score(x, x, 0, t).item() / std::sqrt(2.0);
    EXPECT_NEAR(out.log_denoms[h][0], s, 1e-12);
  }
}

TEST(CausalAttend, MemoryTwoSegmentOneMatchesHandSoftmax) {
  for (auto scheme : {RpeScheme::xl, RpeScheme::dis}) {
    Rng rng(2);
    auto w = make_weights(rng, 6, 1, scheme);
    auto keys = random_tensor({3, 6}, rng);  // positions 10, 11, 12; query at 12
    auto q = slice_rows(keys, 2, 3);
    auto out = causal_attend(q, keys, {12}, {10, 11, 12}, w);
    auto t = head_table(w, 0, 2);
    double logits[3], z = 0;
    for (int j = 0; j < 3; ++j) {
      logits[j] = rpe_score(q, slice_rows(keys, j, j + 1), 2 - j, t).item() / std::sqrt(6.0);
      z += std::exp(logits[j]);
    }
    auto v = matmul(keys, w.w_v);
    for (std::size_t c = 0; c < 6; ++c) {
      double ref = 0;
      for (int j = 0; j < 3; ++j) ref += std::exp(logits[j]) / z * v(j, c);
      EXPECT_NEAR(out.context[c], ref, 1e-12);
    }
    EXPECT_NEAR(out.log_denoms[0][0], std::log(z), 1e-12);
  }
}

TEST(CausalAttend, FutureKeysCarryNoWeight) {
  Rng rng(3);
  auto w = make_weights(rng, 8, 2, RpeScheme::xl);
  auto keys = random_tensor({6, 8}, rng);
  auto q = slice_rows(keys, 0, 3);
  auto base = causal_attend(q, keys, iota_pos(0, 3), iota_pos(0, 6), w);
  // positions 3..5 are in the future of every query: scramble them
  auto scrambled = concat_rows<double>({slice_rows(keys, 0, 3), random_tensor({3, 8}, rng, 5.0)});
  auto again = causal_attend(q, scrambled, iota_pos(0, 3), iota_pos(0, 6), w);
  for (std::size_t i = 0; i < base.context.numel(); ++i)
    ASSERT_EQ(base.context[i], again.context[i]);
}

TEST(LookaheadAttend, NewestSlotOldestSlotAndEmptyRow) {
  Rng rng(4);
  auto w = make_weights(rng, 4, 1, RpeScheme::dis);
  // memory positions 5..8 (tau = 8); keys 6..9 (tau + 1 = 9)
  auto mem = random_tensor({4, 4}, rng);
  auto keys = random_tensor({4, 4}, rng);
  auto out = lookahead_attend(mem, keys, {5, 6, 7, 8}, {6, 7, 8, 9}, {5, 6, 7, 8}, w);
  auto v = matmul(keys, w.w_v);
  // newest slot sees only key 9
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out.context(3, c), v(3, c), 1e-13);
  auto t = head_table(w, 0, 4);
  EXPECT_NEAR(out.log_denoms[0][3],
              rpe_score(slice_rows(mem, 3, 4), slice_rows(keys, 3, 4), -1, t).item() / 2.0, 1e-12);
  // oldest slot sees all four keys: plain softmax
  double z = 0, logits[4];
  for (int j = 0; j < 4; ++j) {
    logits[j] = rpe_score(slice_rows(mem, 0, 1), slice_rows(keys, j, j + 1), 5 - (6 + j), t).item() / 2.0;
    z += std::exp(logits[j]);
  }
  for (std::size_t c = 0; c < 4; ++c) {
    double ref = 0;
    for (int j = 0; j < 4; ++j) ref += std::exp(logits[j]) / z * v(j, c);
    EXPECT_NEAR(out.context(0, c), ref, 1e-12);
  }
  // a slot already at tau + 1 has nothing to look at
  auto empty = lookahead_attend(slice_rows(mem, 0, 1), keys, {9}, {6, 7, 8, 9}, {9}, w);
  EXPECT_EQ(empty.log_denoms[0][0], -kInf);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(empty.context[c], 0.0);
}

TEST(Interpolate, AlphaExamples) {
  EXPECT_NEAR(interpolation_alpha(std::log(3.0), std::log(1.0), 1e-4), 3.0 / 4.0001, 1e-15);
  EXPECT_DOUBLE_EQ(interpolation_alpha(0.7, -kInf, 0.0), 1.0);
  EXPECT_NEAR(interpolation_alpha(1.3, 1.3, 0.0), 0.5, 1e-15);
  EXPECT_THROW(interpolation_alpha(0.0, 0.0, -1e-4), ConfigError);
}

TEST(Interpolate, SlotUpdate) {
  MemorySlotState<double> slot;
  slot.c_agg = {1.0, 2.0, -1.0, 4.0};  // two heads of width 2
  slot.log_s = {std::log(2.0), std::log(5.0)};
  slot.rightmost_key_pos = 3;
  // equal mass on head 0, no new mass on head 1
  auto out = interpolate(slot, {3.0, 0.0, 9.0, 9.0}, {std::log(2.0), -kInf}, 0.0,
                         std::optional<std::int64_t>{6});
  EXPECT_NEAR(out.c_agg[0], 2.0, 1e-15);
  EXPECT_NEAR(out.c_agg[1], 1.0, 1e-15);
  EXPECT_EQ(out.c_agg[2], -1.0);
  EXPECT_EQ(out.c_agg[3], 4.0);
  EXPECT_NEAR(out.log_s[0], std::log(4.0), 1e-15);
  EXPECT_EQ(out.log_s[1], std::log(5.0));
  EXPECT_EQ(out.rightmost_key_pos, 6);
  EXPECT_THROW(interpolate(slot, {0, 0, 0, 0}, {0.0, 0.0}, -1.0), ConfigError);
}

TEST(Interpolate, AlphaPropertiesRandomized) {
  Rng rng(5);
  for (int t = 0; t < 2000; ++t) {
    const double s_old = rng.normal(0, 10);
    const double s_a = rng.normal(0, 10), s_b = s_a + std::abs(rng.normal(0, 3)) + 1e-9;
    const double eps = rng.uniform() < 0.5 ? 0.0 : 1e-4;
    const double a = interpolation_alpha(s_old, s_a, eps);
    const double b = interpolation_alpha(s_old, s_b, eps);
    ASSERT_GT(a, 0.0);
    ASSERT_LE(a, 1.0);
    ASSERT_LE(b, a);  // decreasing in the new mass
    ASSERT_GE(logaddexp(s_old, s_a), s_old);  // running mass never shrinks
  }
}

TEST(Interpolate, GradientsMatchFiniteDifferences) {
  Rng rng(6);
  std::vector<double> c_old = values(random_tensor({3, 2}, rng));
  std::vector<double> s_old = {0.3, -1.0, 2.0};
  auto c_new = random_tensor({3, 2}, rng);
  Td lse({3}, {0.1, 1.5, -0.4});
  auto weights = random_tensor({3, 2}, rng);
  for (double eps : {0.0, 1e-4, 0.5}) {
    auto report = grad_check<double>(
        [&] { return sum(mul(interpolate_rows(c_old, s_old, c_new, lse, eps).c_mix, weights)); },
        {c_new, lse});
    EXPECT_LT(report.max_rel_error, 1e-7) << "eps=" << eps;
  }
}

TEST(Interpolate, LogSpaceMatchesNaiveAndSurvivesLargeMagnitudes) {
  Rng rng(7);
  for (int t = 0; t < 500; ++t) {
    const float s_old = float(rng.uniform() * 40 - 20), s_new = float(rng.uniform() * 40 - 20);
    const float naive = std::exp(s_old) / (std::exp(s_old) + std::exp(s_new) + 1e-4f);
    const auto c = interpolate_rows<float>({1.0f}, {s_old}, Tensor<float>({1, 1}, {0.0f}),
                                           Tensor<float>({1}, {s_new}), 1e-4);
    ASSERT_NEAR(c.alpha[0], naive, 1e-5 * std::max(naive, 1e-30f));
  }
  const float big = 1000.0f;
  const float naive = std::exp(big) / (std::exp(big) + std::exp(big) + 1e-4f);
  EXPECT_TRUE(std::isnan(naive));
  const auto c = interpolate_rows<float>({1.0f}, {big}, Tensor<float>({1, 1}, {3.0f}),
                                         Tensor<float>({1}, {big}), 1e-4);
  EXPECT_NEAR(c.alpha[0], 0.5f, 1e-4);
  EXPECT_NEAR(c.c_mix[0], 2.0f, 2e-4);
  EXPECT_NEAR(c.log_s[0], big + std::log(2.0f), 1e-3);
}

TEST(SlideMemory, Examples) {
  LayerMemory<double> mem{MemMode::xl, 3, {}};
  auto slot = [](std::int64_t p) {
    MemorySlotState<double> s;
    s.abs_pos = p;
    return s;
  };
  mem = slide_memory(mem, {slot(1), slot(2), slot(3)});
  mem = slide_memory(mem, {slot(4)});
  ASSERT_EQ(mem.size(), 3u);
  EXPECT_EQ(mem.slots[0].abs_pos, 2);
  EXPECT_EQ(mem.slots[2].abs_pos, 4);
  EXPECT_THROW(slide_memory(mem, {slot(6)}), StreamIntegrityError);
  EXPECT_THROW(slide_memory(mem, {slot(5), slot(5)}), StreamIntegrityError);

  LayerMemory<double> cold{MemMode::lamemo, 4, {}};
  cold = slide_memory(cold, {slot(0), slot(1)});
  EXPECT_EQ(cold.size(), 2u);

  // M = N: the memory is fully replaced each iteration
  LayerMemory<double> full{MemMode::lamemo, 2, {}};
  full = slide_memory(full, {slot(0), slot(1)});
  full = slide_memory(full, {slot(2), slot(3)});
  EXPECT_EQ(full.slots[0].abs_pos, 2);
  EXPECT_EQ(full.slots[1].abs_pos, 3);
}

// Drives a single layer over segments of the given lengths with static
// inputs and checks every slot's aggregate against the direct softmax over
// its key window.
double max_oracle_gap(RpeScheme scheme, std::size_t d, std::size_t heads, std::size_t M,
                      const std::vector<std::size_t>& lengths, std::uint64_t seed) {
  Rng rng(seed);
  auto w = make_weights(rng, d, heads, scheme);
  std::size_t total = 0;
  for (auto n : lengths) total += n;
  auto inputs = random_tensor({total, d}, rng);
  LayerMemory<double> mem{MemMode::lamemo, M, {}};
  double worst = 0;
  std::size_t start = 0;
  for (std::size_t n : lengths) {
    const auto pos = std::int64_t(start);
    auto seg = slice_rows(inputs, start, start + n);
    auto mem_in = memory_inputs(mem);
    RefreshOptions opt;
    opt.eps = 0.0;
    auto r = refresh_and_advance(mem_in, seg, pos, mem, w, opt);
    mem = commit_refresh(mem, mem_in, seg, pos, r);
    for (const auto& s : mem.slots) {
      EXPECT_LE(s.rightmost_key_pos, std::max(s.abs_pos, pos));  // never beyond tau + 1
      if (s.abs_pos < pos) EXPECT_EQ(s.rightmost_key_pos, pos);  // and never short of it
      auto ref = oracle_full_attention(inputs, s.abs_pos, s.leftmost_key_pos,
                                       s.rightmost_key_pos, w);
      for (std::size_t c = 0; c < d; ++c) worst = std::max(worst, std::abs(ref[c] - s.c_agg[c]));
    }
    start += n;
  }
  return worst;
}

double max_oracle_gap(RpeScheme scheme, std::size_t d, std::size_t heads, std::size_t M,
                      std::size_t N, std::size_t iters, std::uint64_t seed) {
  return max_oracle_gap(scheme, d, heads, M, std::vector<std::size_t>(iters, N), seed);
}

struct OracleCase {
  RpeScheme scheme;
  std::size_t M, N, iters;
};

class OracleEquivalence : public ::testing::TestWithParam<OracleCase> {};

TEST_P(OracleEquivalence, LayerOneAggregatesMatchFullAttention) {
  const auto c = GetParam();
  EXPECT_LT(max_oracle_gap(c.scheme, 8, 2, c.M, c.N, c.iters, 100 + c.M * 7 + c.N), 1e-10);
}

INSTANTIATE_TEST_SUITE_P(
    Windows, OracleEquivalence,
    ::testing::Values(OracleCase{RpeScheme::dis, 2, 1, 6}, OracleCase{RpeScheme::xl, 2, 1, 6},
                      OracleCase{RpeScheme::dis, 5, 3, 5}, OracleCase{RpeScheme::xl, 4, 4, 5},
                      OracleCase{RpeScheme::dis, 3, 6, 4}, OracleCase{RpeScheme::xl, 8, 2, 7}));

TEST(OracleEquivalenceRagged, ShortAndLongSegmentsStillMatch) {
  const std::vector<std::size_t> lengths{4, 4, 2, 1, 5, 3};
  EXPECT_LT(max_oracle_gap(RpeScheme::dis, 8, 2, 6, lengths, 77), 1e-10);
  EXPECT_LT(max_oracle_gap(RpeScheme::xl, 8, 2, 3, lengths, 78), 1e-10);
}

TEST(OracleFullAttention, SelfOnlyAndContract) {
  Rng rng(8);
  auto w = make_weights(rng, 4, 2, RpeScheme::dis);
  auto x = random_tensor({5, 4}, rng);
  auto got = oracle_full_attention(x, 2, 2, 2, w);
  auto v = matmul(slice_rows(x, 2, 3), w.w_v);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(got[c], v[c], 1e-14);
  EXPECT_THROW(oracle_full_attention(x, 2, 0, 5, w), ContractError);
  EXPECT_THROW(oracle_full_attention(x, 4, 0, 3, w), ContractError);
}

TEST(RefreshAndAdvance, NoneModeIsPlainCausalLayer) {
  Rng rng(9);
  auto w = make_weights(rng, 6, 3, RpeScheme::dis);
  auto seg = random_tensor({4, 6}, rng);
  LayerMemory<double> mem{MemMode::none, 0, {}};
  auto r = refresh_and_advance<double>(std::nullopt, seg, 20, mem, w);
  auto plain = causal_attend(seg, seg, iota_pos(20, 4), iota_pos(20, 4), w);
  for (std::size_t i = 0; i < plain.context.numel(); ++i)
    ASSERT_EQ(r.seg_context[i], plain.context[i]);
  EXPECT_FALSE(r.mem_context.has_value());
  EXPECT_TRUE(commit_refresh<double>(mem, std::nullopt, seg, 20, r).empty());
}

TEST(RefreshAndAdvance, XlLeavesMemoryAggregatesAlone) {
  Rng rng(10);
  auto w = make_weights(rng, 4, 1, RpeScheme::xl);
  LayerMemory<double> mem{MemMode::xl, 3, {}};
  for (int it = 0; it < 3; ++it) {
    auto seg = random_tensor({2, 4}, rng);
    auto mem_in = memory_inputs(mem);
    const auto before = mem.slots;
    auto r = refresh_and_advance(mem_in, seg, it * 2, mem, w);
    EXPECT_FALSE(r.mem_context.has_value());
    mem = commit_refresh(mem, mem_in, seg, it * 2, r);
    for (const auto& s : mem.slots) {
      EXPECT_TRUE(s.c_agg.empty());
      for (const auto& b : before)
        if (b.abs_pos == s.abs_pos) EXPECT_EQ(b.h_in, s.h_in);
    }
  }
}

TEST(RefreshAndAdvance, CountersStayLinearInMemory) {
  Rng rng(11);
  const std::size_t d = 4, N = 4;
  for (std::size_t M : {4u, 8u, 16u}) {
    auto w = make_weights(rng, d, 1, RpeScheme::dis);
    LayerMemory<double> mem{MemMode::lamemo, M, {}};
    AttentionCounters counters;
    for (std::size_t it = 0; it < M / N + 2; ++it) {
      auto seg = random_tensor({N, d}, rng);
      auto mem_in = memory_inputs(mem);
      counters.reset();
      RefreshOptions opt;
      opt.counters = &counters;
      auto r = refresh_and_advance(mem_in, seg, std::int64_t(it * N), mem, w, opt);
      const auto m = mem.size();
      EXPECT_EQ(counters.causal_computed, N * (m + N));
      EXPECT_EQ(counters.causal_admitted, N * m + N * (N + 1) / 2);
      EXPECT_LE(counters.lookahead_computed, m * N);
      mem = commit_refresh(mem, mem_in, seg, std::int64_t(it * N), r);
    }
    EXPECT_EQ(counters.lookahead_computed, M * N);
  }
}

TEST(RefreshAndAdvance, GradientsThroughLookaheadAndInterpolation) {
  for (auto scheme : {RpeScheme::xl, RpeScheme::dis}) {
    Rng rng(12);
    const std::size_t d = 4, N = 2;
    auto w = make_weights(rng, d, 2, scheme);
    LayerMemory<double> mem{MemMode::lamemo, 3, {}};
    // Two warm-up iterations give the slots a history.
    for (int it = 0; it < 2; ++it) {
      auto seg = random_tensor({N, d}, rng);
      auto mem_in = memory_inputs(mem);
      auto r = refresh_and_advance(mem_in, seg, it * 2, mem, w);
      mem = commit_refresh(mem, mem_in, seg, it * 2, r);
    }
    auto mem_in = random_tensor({3, d}, rng);
    auto seg = random_tensor({N, d}, rng);
    auto probe_seg = random_tensor({N, d}, rng);
    auto probe_mem = random_tensor({3, d}, rng);
    auto fn = [&] {
      auto r = refresh_and_advance<double>(mem_in, seg, 4, mem, w);
      return add(sum(mul(r.seg_context, probe_seg)), sum(mul(*r.mem_context, probe_mem)));
    };
    auto report = grad_check<double>(fn, {mem_in, seg, w.w_q, w.w_k, w.w_v, w.w_r, w.u, w.v, w.v_back});
    EXPECT_LT(report.max_rel_error, 1e-4) << to_string(scheme) << " worst param "
                                          << report.worst_param << " idx " << report.worst_index << " a=" << report.worst_analytic << " n=" << report.worst_numeric;
  }
}

}  // namespace
}  // namespace lamemo
