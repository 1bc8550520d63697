// Copyright 2026 The lamemo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "lamemo/pipeline.hpp"
#include "test_util.hpp"

namespace lamemo {
namespace {

RunConfig tiny_run(MemMode mode = MemMode::lamemo, RpeScheme scheme = RpeScheme::dis) {
  RunConfig r;
  r.model.n_layers = 2;
  r.model.d_model = 16;
  r.model.n_heads = 2;
  r.model.d_head = 8;
  r.model.d_ff = 32;
  r.model.seg_len = 8;
  r.model.mem_mode = mode;
  r.model.mem_len = mode == MemMode::none ? 0 : 8;
  r.model.rpe_scheme = scheme;
  r.train.steps = 100;
  r.train.batch = 2;
  r.train.eval_interval = 25;
  r.train.eval_tokens = 128;
  r.train.log_interval = 10;
  r.train.lr = 2e-3;
  r.seed = 7;
  return r;
}

const Corpus& sample_corpus() {
  static const Corpus c = ingest(testing::data_path("sample_small.txt"), "char");
  return c;
}

template <class T>
std::string serialize(const Checkpoint<T>& ck) {
  std::ostringstream os(std::ios::binary);
  save_checkpoint(ck, os);
  return os.str();
}

template <class T>
Checkpoint<T> deserialize(const std::string& bytes, std::optional<ModelConfig> expect = {}) {
  std::istringstream is(bytes, std::ios::binary);
  return load_checkpoint<T>(is, expect);
}

// --- ingestion ---------------------------------------------------------------

TEST(Ingest, CharModeLowersAndKeepsLettersAndSpace) {
  const Corpus c = ingest_text("Ab c", "char");
  EXPECT_EQ(c.vocab.size(), 27u);
  const std::vector<int> want{c.vocab.ids['a'], c.vocab.ids['b'], c.vocab.ids[' '],
                              c.vocab.ids['c']};
  EXPECT_EQ(c.tokens, want);
  EXPECT_EQ(c.vocab.decode(c.tokens), "ab c");
}

TEST(Ingest, CharModeDropsOtherSymbolsAndFoldsWhitespace) {
  EXPECT_EQ(Vocabulary::normalize_chars("Hello,\n\n World! 42"), "hello world ");
}

TEST(Ingest, ByteModeVocabIsDistinctBytes) {
  const std::string text = "abracadabra\n\x01\xff";
  const Corpus c = ingest_text(text, "byte");
  EXPECT_EQ(c.vocab.size(), 8u);  // a b r c d \n \x01 \xff
  EXPECT_EQ(c.vocab.decode(c.tokens), text);
  for (int t : c.tokens) {
    EXPECT_GE(t, 0);
    EXPECT_LT(t, 8);
  }
}

TEST(Ingest, SampleCorpusCharVocabAtMost27) {
  const Corpus& c = sample_corpus();
  EXPECT_LE(c.vocab.size(), 27u);
  for (int t : c.tokens) EXPECT_LT(static_cast<std::size_t>(t), c.vocab.size());
}

TEST(Ingest, SplitsAreContiguousNinetyFiveFive) {
  const Corpus& c = sample_corpus();
  const std::size_t n = c.tokens.size();
  EXPECT_EQ(c.train().size(), n * 90 / 100);
  EXPECT_EQ(c.train().size() + c.dev().size() + c.test().size(), n);
  EXPECT_EQ(c.dev().data(), c.train().data() + c.train().size());
  EXPECT_EQ(c.test().data(), c.dev().data() + c.dev().size());
  EXPECT_NEAR(static_cast<double>(c.dev().size()) / n, 0.05, 1e-3);
}

TEST(Ingest, EmptyInputsAreRejected) {
  EXPECT_THROW(ingest_text("", "char"), IngestionError);
  EXPECT_THROW(ingest_text("1234!?", "char"), IngestionError);
  const auto path = std::filesystem::temp_directory_path() / "lamemo_empty_corpus.txt";
  { std::ofstream(path).flush(); }
  EXPECT_THROW(ingest(path.string(), "byte"), IngestionError);
  std::filesystem::remove(path);
  EXPECT_THROW(ingest("/nonexistent/corpus.txt", "char"), IngestionError);
  EXPECT_THROW(ingest_text("abc", "word"), ConfigError);
}

TEST(Vocabulary, UnknownSymbolsAreReported) {
  const Vocabulary v = Vocabulary::from_bytes("abc");
  EXPECT_THROW(v.encode("abd"), VocabularyError);
  const std::vector<int> bad{5};
  EXPECT_THROW(v.decode(bad), VocabularyError);
}

// --- segment streaming ----------------------------------------------------

TEST(SegmentStream, ShiftedTargetsOnFiveTokenStream) {
  const std::vector<int> s{0, 1, 2, 3, 4};  // a b c d e
  SegmentStream st(s, 2, 1);
  ASSERT_EQ(st.size(), 2u);
  EXPECT_EQ(st.at(0).inputs[0], (std::vector<int>{0, 1}));
  EXPECT_EQ(st.at(0).targets[0], (std::vector<int>{1, 2}));
  EXPECT_EQ(st.at(1).inputs[0], (std::vector<int>{2, 3}));
  EXPECT_EQ(st.at(1).targets[0], (std::vector<int>{3, 4}));
  EXPECT_THROW(st.at(2), RangeError);
}

TEST(SegmentStream, LanesAreDisjointContiguousRegions) {
  std::vector<int> s(103);
  std::iota(s.begin(), s.end(), 0);
  SegmentStream st(s, 4, 3);
  EXPECT_EQ(st.lane_length(), 34u);
  std::vector<std::vector<int>> lanes(3);
  for (std::size_t k = 0; k < st.size(); ++k) {
    const auto b = st.at(k);
    for (std::size_t l = 0; l < 3; ++l) {
      lanes[l].insert(lanes[l].end(), b.inputs[l].begin(), b.inputs[l].end());
      EXPECT_EQ(b.targets[l].front(), b.inputs[l].front() + 1);
    }
  }
  for (std::size_t l = 0; l < 3; ++l) {
    ASSERT_FALSE(lanes[l].empty());
    for (std::size_t i = 0; i < lanes[l].size(); ++i)
      EXPECT_EQ(lanes[l][i], static_cast<int>(l * 34 + i));
    EXPECT_LT(lanes[l].back() + 1, static_cast<int>((l + 1) * 34));
  }
}

TEST(SegmentStream, TooSmallSplitIsAConfigurationError) {
  const std::vector<int> s(9);
  EXPECT_THROW(SegmentStream(s, 4, 2), ConfigError);
  EXPECT_NO_THROW(SegmentStream(std::vector<int>(10), 4, 2));
}

// --- evaluation -----------------------------------------------------------

TEST(Evaluate, NllConversions) {
  EXPECT_NEAR(ppl_from_nll(3.0), 20.0855369, 1e-6);
  EXPECT_DOUBLE_EQ(bpc_from_nll(std::log(2.0)), 1.0);
  EXPECT_NEAR(bpc_from_nll(std::log(27.0)), 4.7548875, 1e-6);
}

TEST(Evaluate, UniformModelScoresLogTwoOfVocab) {
  RunConfig r = tiny_run();
  r.model.precision = "f64";
  LanguageModel<double> m(r.model, 1);
  auto params = m.mutable_parameters();
  for (auto& v : params[0].tensor.mutable_values()) v = 0.0;  // zero embedding -> zero logits
  const auto e = evaluate(m, sample_corpus().dev(), 8);
  EXPECT_EQ(e.tokens, sample_corpus().dev().size() - 1);
  EXPECT_NEAR(e.bpc, std::log2(27.0), 1e-12);
  EXPECT_NEAR(e.ppl, 27.0, 1e-9);
}

TEST(Evaluate, FreshModelIsNearUniform) {
  ModelConfig cfg;  // the default 4-layer d=128 model
  LanguageModel<float> m(cfg, 3);
  const auto e = evaluate(m, sample_corpus().dev(), cfg.mem_len, 0, 512);
  EXPECT_NEAR(e.bpc, std::log2(27.0), 0.1 * std::log2(27.0));
}

TEST(Evaluate, ExtrapolationWithOneMultipleEqualsPlainEvaluation) {
  RunConfig r = tiny_run();
  LanguageModel<float> m(r.model, 2);
  const std::vector<std::size_t> ms{1};
  const auto rows = extrapolate_eval(m, sample_corpus().dev(), 8, ms, 300);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].mem_len, 8u);
  EXPECT_EQ(rows[0].ppl, evaluate(m, sample_corpus().dev(), 8, 8, 300).ppl);
}

TEST(Evaluate, NoMemoryModeIgnoresMultiple) {
  RunConfig r = tiny_run(MemMode::none);
  LanguageModel<float> m(r.model, 2);
  const std::vector<std::size_t> ms{1, 2, 5};
  const auto rows = extrapolate_eval(m, sample_corpus().dev(), 8, ms, 300);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& row : rows) {
    EXPECT_EQ(row.mem_len, 0u);
    EXPECT_EQ(row.ppl, rows[0].ppl);
  }
}

// --- checkpoints ------------------------------------------------------------

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  RunConfig r = tiny_run();
  r.train.steps = 12;
  auto res = train<float>(r, sample_corpus());
  const std::string a = serialize(res.checkpoint);
  const auto back = deserialize<float>(a, r.model);
  EXPECT_EQ(back.step, 12u);
  EXPECT_EQ(serialize(back), a);
  // the lanes carry memory after training
  ASSERT_EQ(back.lanes.size(), 2u);
  EXPECT_EQ(back.lanes[0].layers[0].size(), 8u);
}

TEST(Checkpoint, MismatchedConfigIsRejected) {
  RunConfig r = tiny_run();
  r.train.steps = 0;
  const std::string bytes = serialize(train<float>(r, sample_corpus()).checkpoint);
  ModelConfig other = r.model;
  other.n_layers = 3;
  EXPECT_THROW(deserialize<float>(bytes, other), CheckpointError);
  EXPECT_THROW(deserialize<double>(bytes), CheckpointError);
}

TEST(Checkpoint, CorruptInputsAreRejected) {
  RunConfig r = tiny_run();
  r.train.steps = 0;
  std::string bytes = serialize(train<float>(r, sample_corpus()).checkpoint);
  EXPECT_THROW(deserialize<float>(bytes.substr(0, bytes.size() - 3)), CheckpointError);
  EXPECT_THROW(deserialize<float>(bytes + "x"), CheckpointError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize<float>(bad_magic), CheckpointError);
  std::string bad_version = bytes;
  bad_version[8] = 9;
  EXPECT_THROW(deserialize<float>(bad_version), CheckpointError);
}

TEST(Checkpoint, ZeroStepsEqualsInitialization) {
  RunConfig r = tiny_run();
  r.train.steps = 0;
  const auto res = train<float>(r, sample_corpus());
  const LanguageModel<float> fresh(r.model, r.seed);
  const auto a = res.checkpoint.model.parameters();
  const auto b = fresh.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    const auto va = a[k].tensor.values(), vb = b[k].tensor.values();
    EXPECT_TRUE(std::equal(va.begin(), va.end(), vb.begin(), vb.end())) << a[k].name;
  }
}

// --- training ----------------------------------------------------------------

TEST(Train, FirstLossIsNearLogVocab) {
  RunConfig r;  // default model
  r.train.steps = 1;
  r.train.eval_tokens = 64;
  const auto res = train<float>(r, sample_corpus());
  ASSERT_FALSE(res.metrics.empty());
  EXPECT_EQ(res.metrics[0].step, 0u);
  EXPECT_NEAR(res.metrics[0].train_loss, std::log(27.0), 0.1 * std::log(27.0));
}

TEST(Train, IdenticalSeedsGiveIdenticalLogs) {
  const RunConfig r = tiny_run();
  const auto a = train<float>(r, sample_corpus());
  const auto b = train<float>(r, sample_corpus());
  std::ostringstream ca, cb;
  write_metrics_csv(ca, a.metrics);
  write_metrics_csv(cb, b.metrics);
  EXPECT_EQ(ca.str(), cb.str());
  EXPECT_EQ(serialize(a.checkpoint), serialize(b.checkpoint));
  // steps 0..90 every 10, evaluations at 25 and 75, and the final row
  EXPECT_EQ(a.metrics.size(), 13u);
  EXPECT_LT(a.metrics.back().train_loss, a.metrics.front().train_loss);
}

TEST(Train, ResumeReproducesUninterruptedRunExactly) {
  const RunConfig r = tiny_run();
  const auto full = train<float>(r, sample_corpus());

  TrainOptions half;
  half.stop_at = 50;
  const auto first = train<float>(r, sample_corpus(), std::nullopt, half);
  EXPECT_EQ(first.checkpoint.step, 50u);
  auto reloaded = deserialize<float>(serialize(first.checkpoint), r.model);
  const auto second = train<float>(r, sample_corpus(), std::move(reloaded));

  std::vector<MetricRow> joined = first.metrics;
  joined.insert(joined.end(), second.metrics.begin(), second.metrics.end());
  std::ostringstream a, b;
  write_metrics_csv(a, full.metrics);
  write_metrics_csv(b, joined);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(serialize(full.checkpoint), serialize(second.checkpoint));
}

TEST(Train, NonFiniteLossStopsWithDiagnostic) {
  RunConfig r = tiny_run();
  r.train.steps = 5;
  TrainOptions opt;
  opt.stop_at = 2;
  auto res = train<float>(r, sample_corpus(), std::nullopt, opt);
  auto params = res.checkpoint.model.mutable_parameters();
  params.back().tensor.mutable_values()[0] = std::numeric_limits<float>::quiet_NaN();
  const auto out = train<float>(r, sample_corpus(), std::move(res.checkpoint));
  ASSERT_TRUE(out.divergence.has_value());
  EXPECT_EQ(out.divergence->step, 2u);
  EXPECT_FALSE(out.divergence->layer_norms.empty());
  EXPECT_NE(out.divergence->describe().find("non-finite"), std::string::npos);
}

TEST(Train, VocabularyMismatchIsAConfigError) {
  RunConfig r = tiny_run();
  r.model.vocab_size = 30;
  EXPECT_THROW(train<float>(r, sample_corpus()), ConfigError);
}

// --- CSV ---------------------------------------------------------------------

TEST(Csv, HeadersMatchTheDocumentedFormats) {
  std::ostringstream m, c, e;
  write_metrics_csv(m, std::vector<MetricRow>{{0, 1e-3, 3.0, 4.5, 20.0}, {5, 1e-3, 2.9, {}, {}}});
  write_train_curve_csv(c, std::vector<TrainCurveRow>{{"dis", 0, 20.0}});
  write_extrapolation_csv(e, std::vector<ExtrapolationRow>{{1, 64, 9.5}});
  EXPECT_EQ(m.str(), "step,lr,train_loss,dev_bpc,dev_ppl\n0,0.001,3,4.5,20\n5,0.001,2.9,,\n");
  EXPECT_EQ(c.str(), "scheme,step,dev_ppl\ndis,0,20\n");
  EXPECT_EQ(e.str(), "m,mem_len,ppl\n1,64,9.5\n");
}

}  // namespace
}  // namespace lamemo
