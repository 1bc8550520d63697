// Copyright 2026 The lamemo-lab Authors
// SPDX-License-Identifier: Apache-2.0

// Trains a tiny character model with each memory mode on the bundled sample
// corpus and prints dev bits per character next to the analytic per-token
// cost. Usage: compare_modes [corpus.txt] [steps]

#include <cstdio>
#include <string>

#include "lamemo/analysis.hpp"
#include "lamemo/pipeline.hpp"

int main(int argc, char** argv) {
  using namespace lamemo;
  const std::string path = argc > 1 ? argv[1] : LAMEMO_DATA_DIR "/sample_small.txt";
  const std::uint64_t steps = argc > 2 ? std::stoull(argv[2]) : 300;
  try {
    const Corpus corpus = ingest(path, "char");
    std::printf("%-8s %10s %12s\n", "mode", "dev bpc", "flops/token");
    for (MemMode mode : {MemMode::none, MemMode::xl, MemMode::lamemo}) {
      RunConfig cfg;
      cfg.model.n_layers = 2;
      cfg.model.d_model = 32;
      cfg.model.n_heads = 2;
      cfg.model.d_head = 16;
      cfg.model.d_ff = 64;
      cfg.model.dropout = 0.0;
      cfg.model.seg_len = 16;
      cfg.model.mem_mode = mode;
      cfg.model.mem_len = mode == MemMode::none ? 0 : 16;
      cfg.model.vocab_size = corpus.vocab.size();
      cfg.train.steps = steps;
      cfg.train.batch = 2;
      cfg.train.lr = 2e-3;
      cfg.train.eval_interval = steps;
      cfg.train.eval_tokens = 512;
      cfg.seed = 3;
      const auto res = train<float>(cfg, corpus);
      if (res.divergence) {
        std::printf("%-8s %10s\n", to_string(mode).c_str(), "diverged");
        continue;
      }
      const auto dev = evaluate(res.checkpoint.model, corpus.dev(), cfg.model.mem_len);
      std::printf("%-8s %10.4f %12.0f\n", to_string(mode).c_str(), dev.bpc, flops_count(cfg.model));
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: kind=%s message=%s\n", e.kind().c_str(), e.what());
    return 1;
  }
  return 0;
}
