// Copyright 2026 The lamemo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "lamemo/analysis.hpp"
#include "lamemo/posenc.hpp"

namespace lamemo {
namespace {

ModelConfig small(MemMode mode, std::size_t M = 8, std::size_t N = 4) {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_head = 8;
  c.d_ff = 32;
  c.vocab_size = 27;
  c.dropout = 0.0;
  c.mem_mode = mode;
  c.mem_len = mode == MemMode::none ? 0 : M;
  c.seg_len = N;
  c.precision = "f64";
  return c;
}

std::vector<int> cyclic_ids(std::size_t n) {
  std::vector<int> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<int>((i * 7 + 3) % 27);
  return ids;
}

// Keys and positional projections of zero give every score the same value,
// so each token attends uniformly to its visible keys.
void flatten_attention(LanguageModel<double>& m) {
  for (auto& p : m.mutable_parameters())
    if (p.name.ends_with("w_k") || p.name.ends_with("w_r"))
      for (auto& v : p.tensor.mutable_values()) v = 0.0;
}

TEST(AttnProfile, UniformAttentionMatchesVisibleKeyCount) {
  for (MemMode mode : {MemMode::none, MemMode::xl, MemMode::lamemo}) {
    LanguageModel<double> m(small(mode), 3);
    flatten_attention(m);
    const auto ids = cyclic_ids(200);
    AttnProfileOptions opt;
    opt.tokens = 128;
    opt.buckets = 5;
    const auto rows = attn_profile(m, ids, opt);
    ASSERT_FALSE(rows.empty()) << to_string(mode);
    const double ctx = static_cast<double>(m.config().mem_len + m.config().seg_len);
    for (const auto& r : rows) {
      EXPECT_EQ(r.mode, to_string(mode));
      EXPECT_LE(r.mean_log_max_weight, 0.0);
      // Every visible key carries 1/keys with 1 <= keys <= M + N.
      EXPECT_GE(r.mean_log_max_weight, std::log(1.0 / ctx) - 1e-12);
    }
  }
}

TEST(AttnProfile, SteadyStateSingleBucketIsMeanOfReciprocals) {
  // With one bucket every token contributes 1/(visible keys). In steady
  // state token i of a segment sees M + i + 1 keys.
  const std::size_t M = 8, N = 4;
  LanguageModel<double> m(small(MemMode::xl, M, N), 4);
  flatten_attention(m);
  const auto ids = cyclic_ids(2000);
  AttnProfileOptions opt;
  opt.tokens = 1600;
  opt.buckets = 1;
  const auto rows = attn_profile(m, ids, opt);
  ASSERT_EQ(rows.size(), 1u);
  double steady = 0;
  for (std::size_t i = 0; i < N; ++i) steady += 1.0 / static_cast<double>(M + i + 1);
  steady /= N;
  EXPECT_NEAR(std::exp(rows[0].mean_log_max_weight), steady, 2e-3);
  EXPECT_DOUBLE_EQ(rows[0].bucket_start, 0.0);
  EXPECT_DOUBLE_EQ(rows[0].bucket_end, 100.0);
}

TEST(AttnProfile, RejectsShortSplit) {
  LanguageModel<double> m(small(MemMode::xl), 1);
  const auto ids = cyclic_ids(10);
  EXPECT_THROW(attn_profile(m, ids), AnalysisError);
}

TEST(AlphaProfile, CoefficientsAreProperFractions) {
  LanguageModel<double> m(small(MemMode::lamemo), 5);
  const auto ids = cyclic_ids(64);
  const auto rows = alpha_profile(m, ids, 6);
  ASSERT_FALSE(rows.empty());
  for (const auto& r : rows) {
    EXPECT_LT(r.layer, 2u);
    EXPECT_LT(r.mem_index, 8u);
    EXPECT_GT(r.mean_alpha, 0.0);
    EXPECT_LE(r.mean_alpha, 1.0);
  }
}

TEST(AlphaProfile, FirstSegmentHasNoMemoryToRefresh) {
  LanguageModel<double> m(small(MemMode::lamemo), 5);
  const auto ids = cyclic_ids(16);
  EXPECT_TRUE(alpha_profile(m, ids, 1).empty());
  EXPECT_FALSE(alpha_profile(m, ids, 2).empty());
}

TEST(AlphaProfile, RejectsOtherModesAndShortSplits) {
  LanguageModel<double> xl(small(MemMode::xl), 5);
  const auto ids = cyclic_ids(64);
  EXPECT_THROW(alpha_profile(xl, ids, 2), AnalysisError);
  LanguageModel<double> la(small(MemMode::lamemo), 5);
  EXPECT_THROW(alpha_profile(la, ids, 100), AnalysisError);
  EXPECT_THROW(alpha_profile(la, ids, 0), AnalysisError);
}

TEST(GCurve, GridIsSymmetricAndMatchesG) {
  const auto rows = export_g_curve(64, -10.0, 10.0, 201);
  ASSERT_EQ(rows.size(), 201u);
  EXPECT_EQ(rows.front().x, -10.0);
  EXPECT_EQ(rows.back().x, 10.0);
  EXPECT_EQ(rows[100].x, 0.0);
  EXPECT_EQ(rows[100].g_x, 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].x, -rows[rows.size() - 1 - i].x);
    EXPECT_EQ(rows[i].g_x, g_func(rows[i].x, 64));
    EXPECT_NEAR(rows[i].g_x, -rows[rows.size() - 1 - i].g_x, 1e-12);
  }
}

TEST(GCurve, RejectsBadArguments) {
  EXPECT_THROW(export_g_curve(64, 0.0, 1.0, 1), AnalysisError);
  EXPECT_THROW(export_g_curve(64, 1.0, 1.0, 5), AnalysisError);
  EXPECT_ANY_THROW(export_g_curve(7, 0.0, 1.0, 5));
}

TEST(Flops, LinearInLayers) {
  auto c = wikitext_config(MemMode::lamemo);
  c.n_layers = 1;
  const double f1 = flops_count(c);
  c.n_layers = 2;
  const double f2 = flops_count(c);
  c.n_layers = 16;
  const double f16 = flops_count(c);
  const double per_layer = f2 - f1;
  EXPECT_NEAR(f16, f1 + 15 * per_layer, 1e-6 * f16);
  EXPECT_DOUBLE_EQ(flops_breakdown(c).output, flops_breakdown(wikitext_config(MemMode::none)).output);
}

TEST(Flops, AffineInMemoryLength) {
  for (MemMode mode : {MemMode::xl, MemMode::lamemo}) {
    auto c = wikitext_config(mode);
    std::vector<double> f;
    for (std::size_t M : {50u, 100u, 150u, 200u}) {
      c.mem_len = M;
      f.push_back(flops_count(c));
    }
    EXPECT_GT(f[1], f[0]);
    EXPECT_NEAR(f[1] - f[0], f[2] - f[1], 1e-9 * f[2]);
    EXPECT_NEAR(f[3] - f[2], f[2] - f[1], 1e-9 * f[2]);
  }
}

TEST(Flops, OrderingAndMacConvention) {
  const auto table = flops_table(wikitext_config(MemMode::lamemo));
  ASSERT_EQ(table.size(), 3u);
  EXPECT_EQ(table[0].mode, "none");
  EXPECT_EQ(table[1].mode, "xl");
  EXPECT_EQ(table[2].mode, "lamemo");
  EXPECT_LT(table[0].flops_per_step, table[1].flops_per_step);
  EXPECT_LT(table[1].flops_per_step, table[2].flops_per_step);
  const auto c = wikitext_config(MemMode::xl);
  // Only multiply-accumulates scale with the convention; elementwise work
  // (softmax, activations, norms) stays fixed.
  const double f0 = flops_count(c, 0.0), f1 = flops_count(c, 1.0), f2 = flops_count(c, 2.0);
  EXPECT_GT(f0, 0.0);
  EXPECT_NEAR(f2 - f1, f1 - f0, 1e-9 * f2);
  EXPECT_LT(f0, 0.01 * f1);
  const auto b = flops_breakdown(c);
  EXPECT_EQ(b.lookahead, 0.0);
  EXPECT_EQ(b.memory_update, 0.0);
  EXPECT_DOUBLE_EQ(b.total(), flops_count(c));
}

TEST(Csv, Headers) {
  std::ostringstream a, b, c, d;
  write_flops_csv(a, std::vector<FlopsRow>{});
  write_attn_profile_csv(b, std::vector<AttnProfileRow>{});
  write_alpha_profile_csv(c, std::vector<AlphaProfileRow>{});
  write_g_curve_csv(d, std::vector<GCurveRow>{{0.5, 0.25}});
  EXPECT_EQ(a.str(), "mode,flops_per_step\n");
  EXPECT_EQ(b.str(), "mode,bucket_start,bucket_end,mean_log_max_weight\n");
  EXPECT_EQ(c.str(), "layer,mem_index,mean_alpha\n");
  EXPECT_EQ(d.str(), "x,g_x\n0.5,0.25\n");
}

}  // namespace
}  // namespace lamemo
