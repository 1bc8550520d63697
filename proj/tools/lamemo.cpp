// Copyright 2026 The lamemo-lab Authors
// SPDX-License-Identifier: Apache-2.0

// lamemo: train, evaluate, extrapolate, sample from and analyze segment-
// recurrent language models, and run the property suites.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "lamemo/analysis.hpp"
#include "lamemo/pipeline.hpp"
#include "lamemo/verify.hpp"

#ifndef LAMEMO_DEFAULT_CORPUS
#define LAMEMO_DEFAULT_CORPUS ""
#endif

namespace fs = std::filesystem;
using namespace lamemo;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mem_mode;
  std::optional<std::string> rpe;
  std::optional<std::size_t> mem_len;
  std::optional<std::size_t> seg_len;
  std::optional<std::uint64_t> steps;
  std::optional<std::string> data;
  std::optional<std::string> data_mode;
  std::optional<std::string> precision;
  std::string out = "out";
};

void add_common(CLI::App& sub, CommonFlags& f) {
  sub.add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
  sub.add_option("--seed", f.seed, "Random seed");
  sub.add_option("--mem-mode", f.mem_mode, "Memory mode")->check(CLI::IsMember({"none", "xl", "lamemo"}));
  sub.add_option("--rpe", f.rpe, "Relative position encoding")->check(CLI::IsMember({"xl", "dis"}));
  sub.add_option("--mem-len", f.mem_len, "Memory length M");
  sub.add_option("--seg-len", f.seg_len, "Segment length N");
  sub.add_option("--steps", f.steps, "Training steps");
  sub.add_option("--data", f.data, "Corpus file (overrides data.path)");
  sub.add_option("--data-mode", f.data_mode, "Ingestion mode")->check(CLI::IsMember({"char", "byte"}));
  sub.add_option("--precision", f.precision, "Scalar type")->check(CLI::IsMember({"f32", "f64"}));
  sub.add_option("--out", f.out, "Output directory")->capture_default_str();
}

RunConfig resolve(const CommonFlags& f, RunConfig base) {
  if (!f.config.empty()) base = load_run_config(f.config);
  if (f.seed) base.seed = *f.seed;
  if (f.mem_mode) base.model.mem_mode = parse_mem_mode(*f.mem_mode);
  if (f.rpe) base.model.rpe_scheme = parse_rpe_scheme(*f.rpe);
  if (f.seg_len) base.model.seg_len = *f.seg_len;
  if (f.mem_len) base.model.mem_len = *f.mem_len;
  if (base.model.mem_mode == MemMode::none) base.model.mem_len = 0;
  if (f.steps) base.train.steps = *f.steps;
  if (f.data) base.data.path = *f.data;
  if (f.data_mode) base.data.mode = *f.data_mode;
  if (f.precision) base.model.precision = *f.precision;
  return base;
}

Corpus load_corpus(RunConfig& cfg) {
  if (cfg.data.path.empty()) cfg.data.path = LAMEMO_DEFAULT_CORPUS;
  if (cfg.data.path.empty()) throw ConfigError("no corpus given (set data.path or --data)");
  Corpus c = ingest(cfg.data.path, cfg.data.mode);
  cfg.model.vocab_size = c.vocab.size();
  return c;
}

void echo_config(const RunConfig& cfg) { std::cerr << "config: " << to_json(cfg).dump() << "\n"; }

fs::path prepare_out(const std::string& dir) {
  fs::path p(dir);
  fs::create_directories(p);
  return p;
}

void write_config(const fs::path& out, const RunConfig& cfg) {
  std::ofstream(out / "config.json") << to_json(cfg).dump(2) << "\n";
}

std::ofstream open_csv(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw IoError("cannot write '" + p.string() + "'");
  return os;
}

/// Loads a checkpoint of either precision and hands the model to `fn`.
template <class Fn>
void with_checkpoint(const std::string& path, Fn&& fn) {
  if (checkpoint_scalar_bytes(path) == 8)
    fn(load_checkpoint<double>(path));
  else
    fn(load_checkpoint<float>(path));
}

/// Applies the architecture flags that are meaningful for an already trained
/// model (memory length only) and re-attaches the corpus.
template <class T>
Corpus checkpoint_corpus(Checkpoint<T>& ck, const CommonFlags& f) {
  if (f.data) ck.config.data.path = *f.data;
  if (f.data_mode) ck.config.data.mode = *f.data_mode;
  const std::size_t vocab = ck.config.model.vocab_size;
  Corpus c = load_corpus(ck.config);
  if (c.vocab.size() != vocab)
    throw ConfigError("corpus vocabulary (" + std::to_string(c.vocab.size()) +
                      ") does not match the checkpoint (" + std::to_string(vocab) + ")");
  return c;
}

std::vector<std::size_t> parse_m_values(const std::string& spec) {
  std::vector<std::size_t> out;
  std::stringstream ss(spec);
  std::string item;
  auto num = [&](const std::string& s) {
    std::size_t pos = 0;
    const unsigned long v = std::stoul(s, &pos);
    if (pos != s.size() || v == 0) throw ConfigError("bad --m value '" + s + "'");
    return static_cast<std::size_t>(v);
  };
  try {
    while (std::getline(ss, item, ',')) {
      const auto dots = item.find("..");
      if (dots == std::string::npos) {
        out.push_back(num(item));
      } else {
        const std::size_t lo = num(item.substr(0, dots)), hi = num(item.substr(dots + 2));
        if (hi < lo) throw ConfigError("bad --m range '" + item + "'");
        for (std::size_t m = lo; m <= hi; ++m) out.push_back(m);
      }
    }
  } catch (const std::logic_error&) {
    throw ConfigError("bad --m list '" + spec + "'");
  }
  if (out.empty()) throw ConfigError("--m list is empty");
  return out;
}

// ---------------------------------------------------------------------------

template <class T>
int run_train(RunConfig cfg, const Corpus& corpus, const std::string& resume, const fs::path& out) {
  std::optional<Checkpoint<T>> start;
  if (!resume.empty()) start.emplace(load_checkpoint<T>(resume, cfg.model));
  TrainOptions opt;
  opt.progress = &std::cerr;
  auto res = train<T>(cfg, corpus, std::move(start), opt);
  write_config(out, cfg);
  {
    auto os = open_csv(out / "metrics.csv");
    write_metrics_csv(os, res.metrics);
  }
  {
    auto os = open_csv(out / "train_curve.csv");
    write_train_curve_csv(os, res.curve);
  }
  if (res.divergence) throw DivergenceError(res.divergence->describe());
  save_checkpoint(res.checkpoint, (out / "checkpoint.bin").string());
  write_metrics_csv(std::cout, std::span(res.metrics).last(res.metrics.empty() ? 0 : 1));
  return 0;
}

template <class T>
int run_eval(Checkpoint<T>& ck, const CommonFlags& f, const std::string& split, std::size_t max_tokens,
             const fs::path& out) {
  const Corpus corpus = checkpoint_corpus(ck, f);
  const auto& m = ck.config.model;
  const std::size_t mem = f.mem_len ? *f.mem_len : m.mem_len;
  const std::size_t seg = f.seg_len ? *f.seg_len : m.seg_len;
  echo_config(ck.config);
  const auto r = evaluate(ck.model, corpus.split(split), mem, seg, max_tokens);
  auto write = [&](std::ostream& os) {
    os << "split,mem_len,seg_len,tokens,mean_nll,ppl,bpc\n"
       << split << ',' << mem << ',' << seg << ',' << r.tokens << ','
       << detail::format_double(r.mean_nll) << ',' << detail::format_double(r.ppl) << ','
       << detail::format_double(r.bpc) << '\n';
  };
  auto os = open_csv(out / "eval.csv");
  write(os);
  write(std::cout);
  return 0;
}

template <class T>
int run_extrapolate(Checkpoint<T>& ck, const CommonFlags& f, const std::string& split,
                    std::size_t target, const std::vector<std::size_t>& ms, std::size_t max_tokens,
                    const fs::path& out) {
  const Corpus corpus = checkpoint_corpus(ck, f);
  echo_config(ck.config);
  const auto rows = extrapolate_eval(ck.model, corpus.split(split), target, ms, max_tokens);
  auto os = open_csv(out / "extrapolation.csv");
  write_extrapolation_csv(os, rows);
  write_extrapolation_csv(std::cout, rows);
  return 0;
}

template <class T>
int run_generate(Checkpoint<T>& ck, const CommonFlags& f, const std::string& prompt,
                 std::size_t n_tokens, double top_p) {
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("--top-p must lie in (0, 1]");
  Vocabulary vocab = Vocabulary::char_table();
  if (ck.config.data.mode == "byte" || f.data) vocab = checkpoint_corpus(ck, f).vocab;
  if (vocab.size() != ck.config.model.vocab_size)
    throw ConfigError("vocabulary does not match the checkpoint");
  echo_config(ck.config);
  const std::string text = vocab.mode == "char" ? Vocabulary::normalize_chars(prompt) : prompt;
  if (text.empty()) throw ConfigError("--prompt is empty after normalization");
  const auto ids = vocab.encode(text);

  Rng rng(f.seed ? *f.seed : ck.config.seed);
  NoGradGuard guard;
  const auto& model = ck.model;
  const std::size_t N = model.config().seg_len;
  auto state = model.initial_state(0);
  Tensor<T> logits;
  for (std::size_t s = 0; s < ids.size(); s += N) {
    const std::size_t n = std::min(N, ids.size() - s);
    auto r = model.forward_segment(std::span(ids).subspan(s, n), {}, state);
    state = std::move(r.next);
    logits = r.logits;
  }
  const std::size_t V = model.config().vocab_size;
  std::vector<int> generated;
  for (std::size_t k = 0; k < n_tokens; ++k) {
    const auto last = std::span<const T>(logits.values()).last(V);
    const int next = sample_top_p(last, top_p, rng);
    generated.push_back(next);
    const int one[1] = {next};
    auto r = model.forward_segment(one, {}, state);
    state = std::move(r.next);
    logits = r.logits;
  }
  std::cout << text << vocab.decode(generated) << "\n";
  return 0;
}

template <class T>
int run_analyze(const LanguageModel<T>& model, const RunConfig& cfg, const Corpus& corpus,
                const std::string& split, std::size_t tokens, std::size_t segments,
                const fs::path& out) {
  {
    auto os = open_csv(out / "flops.csv");
    const auto rows = flops_table(cfg.model);
    write_flops_csv(os, rows);
    write_flops_csv(std::cout, rows);
  }
  {
    AttnProfileOptions opt;
    opt.tokens = tokens;
    auto os = open_csv(out / "attn_profile.csv");
    write_attn_profile_csv(os, attn_profile(model, corpus.split(split), opt));
  }
  {
    auto os = open_csv(out / "alpha_profile.csv");
    if (cfg.model.mem_mode == MemMode::lamemo)
      write_alpha_profile_csv(os, alpha_profile(model, corpus.split(split), segments));
    else
      write_alpha_profile_csv(os, std::vector<AlphaProfileRow>{});
  }
  {
    auto os = open_csv(out / "g_curve.csv");
    write_g_curve_csv(os, export_g_curve(cfg.model.d_head, -200.0, 200.0, 801));
  }
  std::cerr << "wrote flops.csv, attn_profile.csv, alpha_profile.csv, g_curve.csv to " << out << "\n";
  return 0;
}

int run_check(const Corpus& corpus) {
  bool ok = true;
  verify::run_all(corpus, [&](const verify::SuiteResult& r) {
    verify::print_row(std::cout, r);
    std::cout.flush();
    ok = ok && r.passed;
  });
  std::cout << (ok ? "all suites passed" : "some suites FAILED") << "\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lamemo: segment-recurrent language models with look-ahead memory"};
  app.require_subcommand(1);

  CommonFlags f;
  std::string resume, checkpoint, split = "test", prompt, m_spec = "1..10";
  std::size_t max_tokens = 0, n_tokens = 200, target = 64, profile_tokens = 1024, alpha_segments = 64;
  double top_p = 0.95;

  auto* train_cmd = app.add_subcommand("train", "Train a model; writes metrics.csv, train_curve.csv, checkpoint.bin");
  add_common(*train_cmd, f);
  train_cmd->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);

  auto* eval_cmd = app.add_subcommand("eval", "Perplexity and bits per character of a checkpoint");
  add_common(*eval_cmd, f);
  eval_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", split)->check(CLI::IsMember({"train", "dev", "test"}))->capture_default_str();
  eval_cmd->add_option("--max-tokens", max_tokens, "Evaluate only a prefix (0 = whole split)");

  auto* extra_cmd = app.add_subcommand("extrapolate", "Evaluate with memory target*m for each m");
  add_common(*extra_cmd, f);
  extra_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  extra_cmd->add_option("--m", m_spec, "m values, e.g. 1..10 or 1,2,4")->capture_default_str();
  extra_cmd->add_option("--target", target, "Evaluation segment length")->capture_default_str();
  extra_cmd->add_option("--split", split)->check(CLI::IsMember({"train", "dev", "test"}))->capture_default_str();
  extra_cmd->add_option("--max-tokens", max_tokens, "Evaluate only a prefix (0 = whole split)");

  auto* gen_cmd = app.add_subcommand("generate", "Continue a prompt with nucleus sampling");
  add_common(*gen_cmd, f);
  gen_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  gen_cmd->add_option("--prompt", prompt)->required();
  gen_cmd->add_option("--tokens", n_tokens)->capture_default_str();
  gen_cmd->add_option("--top-p", top_p)->capture_default_str();

  auto* an_cmd = app.add_subcommand("analyze", "Write flops, attention, alpha and g(x) CSVs");
  add_common(*an_cmd, f);
  an_cmd->add_option("--checkpoint", checkpoint, "Trained model (default: fresh model from the config)")
      ->check(CLI::ExistingFile);
  an_cmd->add_option("--split", split)->check(CLI::IsMember({"train", "dev", "test"}))->capture_default_str();
  an_cmd->add_option("--tokens", profile_tokens, "Query tokens for the attention profile")->capture_default_str();
  an_cmd->add_option("--segments", alpha_segments, "Segments for the alpha profile")->capture_default_str();

  auto* check_cmd = app.add_subcommand("check", "Run the property suites");
  add_common(*check_cmd, f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: kind=usage message=" << e.what() << "\n";
    return 2;
  }

  const char* det = std::getenv("LAMEMO_DETERMINISTIC");
  kernels::set_threads(det && std::string(det) == "1" ? 1u : std::max(1u, std::thread::hardware_concurrency()));

  try {
    const fs::path out = prepare_out(f.out);
    if (train_cmd->parsed()) {
      RunConfig cfg = resolve(f, RunConfig{});
      const Corpus corpus = load_corpus(cfg);
      cfg.validate();
      echo_config(cfg);
      return cfg.model.precision == "f64" ? run_train<double>(cfg, corpus, resume, out)
                                          : run_train<float>(cfg, corpus, resume, out);
    }
    if (check_cmd->parsed()) {
      RunConfig cfg = resolve(f, RunConfig{});
      const Corpus corpus = load_corpus(cfg);
      echo_config(cfg);
      return run_check(corpus);
    }
    if (an_cmd->parsed() && checkpoint.empty()) {
      RunConfig cfg = resolve(f, RunConfig{});
      const Corpus corpus = load_corpus(cfg);
      cfg.validate();
      echo_config(cfg);
      std::cerr << "note: no --checkpoint, analyzing an untrained model\n";
      if (cfg.model.precision == "f64")
        return run_analyze(LanguageModel<double>(cfg.model, cfg.seed), cfg, corpus, split,
                           profile_tokens, alpha_segments, out);
      return run_analyze(LanguageModel<float>(cfg.model, cfg.seed), cfg, corpus, split,
                         profile_tokens, alpha_segments, out);
    }
    int rc = 0;
    with_checkpoint(checkpoint, [&](auto&& ck) {
      if (eval_cmd->parsed()) {
        rc = run_eval(ck, f, split, max_tokens, out);
      } else if (extra_cmd->parsed()) {
        rc = run_extrapolate(ck, f, split, target, parse_m_values(m_spec), max_tokens, out);
      } else if (gen_cmd->parsed()) {
        rc = run_generate(ck, f, prompt, n_tokens, top_p);
      } else {
        const Corpus corpus = checkpoint_corpus(ck, f);
        echo_config(ck.config);
        rc = run_analyze(ck.model, ck.config, corpus, split, profile_tokens, alpha_segments, out);
      }
    });
    return rc;
  } catch (const lamemo::Error& e) {
    std::cerr << "error: kind=" << e.kind() << " message=" << e.what() << "\n";
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: kind=io message=" << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: kind=internal message=" << e.what() << "\n";
  }
  return 1;
}
