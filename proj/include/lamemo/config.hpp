// Copyright 2026 The lamemo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LAMEMO_CONFIG_HPP_
#define LAMEMO_CONFIG_HPP_

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "lamemo/errors.hpp"
#include "lamemo/memory_attention.hpp"
#include "lamemo/posenc.hpp"

namespace lamemo {

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t d_head = 32;
  std::size_t d_ff = 512;
  double dropout = 0.1;
  std::size_t vocab_size = 27;
  MemMode mem_mode = MemMode::lamemo;
  std::size_t mem_len = 32;
  std::size_t seg_len = 32;
  RpeScheme rpe_scheme = RpeScheme::dis;
  double interp_eps = 1e-4;
  std::string precision = "f32";   // f32 | f64
  std::string ln_variant = "eq3";  // eq3 | postln (the same composition)

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw ConfigError(std::string(name) + " must be positive");
    };
    positive(n_layers, "n_layers");
    positive(d_model, "d_model");
    positive(n_heads, "n_heads");
    positive(d_head, "d_head");
    positive(d_ff, "d_ff");
    positive(vocab_size, "vocab_size");
    positive(seg_len, "seg_len");
    if (n_heads * d_head != d_model)
      throw ConfigError("d_model (" + std::to_string(d_model) + ") must equal n_heads * d_head (" +
                        std::to_string(n_heads) + " * " + std::to_string(d_head) + ")");
    if (d_model % 2 != 0) throw ConfigError("d_model must be even for the sinusoid table");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (!std::isfinite(interp_eps) || interp_eps < 0.0)
      throw ConfigError("interp_eps must be finite and >= 0");
    if (precision != "f32" && precision != "f64")
      throw ConfigError("precision must be f32 or f64, got '" + precision + "'");
    if (ln_variant != "eq3" && ln_variant != "postln")
      throw ConfigError("ln_variant must be eq3 or postln, got '" + ln_variant + "'");
    if (mem_mode == MemMode::none && mem_len != 0)
      throw ConfigError("mem_mode none requires mem_len 0");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
  double lr = 2.5e-4;
  std::uint64_t steps = 3000;
  std::size_t batch = 4;
  double clip = 0.25;
  std::uint64_t eval_interval = 500;
  std::size_t eval_tokens = 16384;  // dev tokens per periodic evaluation; 0 = full split
  std::uint64_t log_interval = 100;

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be positive");
    if (batch == 0) throw ConfigError("train.batch must be positive");
    if (!(clip > 0.0)) throw ConfigError("train.clip must be positive");
    if (eval_interval == 0) throw ConfigError("train.eval_interval must be positive");
    if (log_interval == 0) throw ConfigError("train.log_interval must be positive");
  }

  bool operator==(const TrainConfig&) const = default;
};

struct DataConfig {
  std::string path;
  std::string mode = "char";  // char | byte

  void validate() const {
    if (mode != "char" && mode != "byte")
      throw ConfigError("data.mode must be char or byte, got '" + mode + "'");
  }

  bool operator==(const DataConfig&) const = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  std::uint64_t seed = 1;

  void validate() const {
    model.validate();
    train.validate();
    data.validate();
  }
};

// ---------------------------------------------------------------------------
// JSON mapping. Unknown keys are rejected so typos do not pass silently.

namespace detail {

template <class V>
void read_key(const nlohmann::json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known,
                           const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("unknown config key '" + where + it.key() + "'");
  }
}

}  // namespace detail

inline nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{{"n_layers", c.n_layers},     {"d_model", c.d_model},
                        {"n_heads", c.n_heads},       {"d_head", c.d_head},
                        {"d_ff", c.d_ff},             {"dropout", c.dropout},
                        {"vocab_size", c.vocab_size}, {"mem_mode", to_string(c.mem_mode)},
                        {"mem_len", c.mem_len},       {"seg_len", c.seg_len},
                        {"rpe_scheme", to_string(c.rpe_scheme)},
                        {"interp_eps", c.interp_eps}, {"precision", c.precision},
                        {"ln_variant", c.ln_variant}};
}

inline void read_model_keys(const nlohmann::json& j, ModelConfig& c) {
  using detail::read_key;
  read_key(j, "n_layers", c.n_layers);
  read_key(j, "d_model", c.d_model);
  read_key(j, "n_heads", c.n_heads);
  read_key(j, "d_head", c.d_head);
  read_key(j, "d_ff", c.d_ff);
  read_key(j, "dropout", c.dropout);
  read_key(j, "vocab_size", c.vocab_size);
  read_key(j, "mem_len", c.mem_len);
  read_key(j, "seg_len", c.seg_len);
  read_key(j, "interp_eps", c.interp_eps);
  read_key(j, "precision", c.precision);
  read_key(j, "ln_variant", c.ln_variant);
  std::string s;
  if (j.contains("mem_mode")) {
    read_key(j, "mem_mode", s);
    c.mem_mode = parse_mem_mode(s);
  }
  if (j.contains("rpe_scheme")) {
    read_key(j, "rpe_scheme", s);
    c.rpe_scheme = parse_rpe_scheme(s);
  }
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, {"n_layers", "d_model", "n_heads", "d_head", "d_ff", "dropout",
                             "vocab_size", "mem_mode", "mem_len", "seg_len", "rpe_scheme",
                             "interp_eps", "precision", "ln_variant"},
                         "");
  ModelConfig c;
  read_model_keys(j, c);
  return c;
}

inline nlohmann::json to_json(const RunConfig& r) {
  nlohmann::json j = to_json(r.model);
  j["train"] = {{"lr", r.train.lr},
                {"steps", r.train.steps},
                {"batch", r.train.batch},
                {"clip", r.train.clip},
                {"eval_interval", r.train.eval_interval},
                {"eval_tokens", r.train.eval_tokens},
                {"log_interval", r.train.log_interval}};
  j["data"] = {{"path", r.data.path}, {"mode", r.data.mode}};
  j["seed"] = r.seed;
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using detail::read_key;
  detail::reject_unknown(j, {"n_layers", "d_model", "n_heads", "d_head", "d_ff", "dropout",
                             "vocab_size", "mem_mode", "mem_len", "seg_len", "rpe_scheme",
                             "interp_eps", "precision", "ln_variant", "train", "data", "seed"},
                         "");
  RunConfig r;
  read_model_keys(j, r.model);
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::reject_unknown(
        t, {"lr", "steps", "batch", "clip", "eval_interval", "eval_tokens", "log_interval"},
        "train.");
    read_key(t, "lr", r.train.lr);
    read_key(t, "steps", r.train.steps);
    read_key(t, "batch", r.train.batch);
    read_key(t, "clip", r.train.clip);
    read_key(t, "eval_interval", r.train.eval_interval);
    read_key(t, "eval_tokens", r.train.eval_tokens);
    read_key(t, "log_interval", r.train.log_interval);
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::reject_unknown(d, {"path", "mode"}, "data.");
    read_key(d, "path", r.data.path);
    read_key(d, "mode", r.data.mode);
  }
  read_key(j, "seed", r.seed);
  return r;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace lamemo

#endif  // LAMEMO_CONFIG_HPP_
