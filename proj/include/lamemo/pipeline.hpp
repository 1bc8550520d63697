// Copyright 2026 The lamemo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LAMEMO_PIPELINE_HPP_
#define LAMEMO_PIPELINE_HPP_

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "lamemo/config.hpp"
#include "lamemo/errors.hpp"
#include "lamemo/model.hpp"
#include "lamemo/numerics/optim.hpp"
#include "lamemo/rng.hpp"

namespace lamemo {

// ---------------------------------------------------------------------------
// Corpus

/// id <-> symbol mapping. Char mode has a fixed 27-entry table (space, then
/// a-z); byte mode assigns dense ids to the distinct bytes present, in
/// ascending byte order.
struct Vocabulary {
  std::string mode = "char";
  std::vector<unsigned char> symbols;  // id -> byte
  std::array<int, 256> ids{};          // byte -> id, -1 when absent

  std::size_t size() const { return symbols.size(); }

  static Vocabulary char_table() {
    Vocabulary v;
    v.mode = "char";
    v.symbols.push_back(' ');
    for (unsigned char c = 'a'; c <= 'z'; ++c) v.symbols.push_back(c);
    v.index();
    return v;
  }

  static Vocabulary from_bytes(std::string_view text) {
    Vocabulary v;
    v.mode = "byte";
    std::array<bool, 256> seen{};
    for (char c : text) seen[static_cast<unsigned char>(c)] = true;
    for (int b = 0; b < 256; ++b)
      if (seen[b]) v.symbols.push_back(static_cast<unsigned char>(b));
    v.index();
    return v;
  }

  /// Char-mode normalization: lowercase, whitespace runs become one space,
  /// everything outside a-z and space is dropped.
  static std::string normalize_chars(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool last_space = false;
    for (char raw : text) {
      unsigned char c = static_cast<unsigned char>(raw);
      if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
      if (c >= 'a' && c <= 'z') {
        out.push_back(static_cast<char>(c));
        last_space = false;
      } else if (c == ' ' || c == '\n' || c == '\t' || c == '\r' || c == '\f' || c == '\v') {
        if (!last_space) out.push_back(' ');
        last_space = true;
      }
    }
    return out;
  }

  std::vector<int> encode(std::string_view text) const {
    const std::string norm = mode == "char" ? normalize_chars(text) : std::string(text);
    std::vector<int> out;
    out.reserve(norm.size());
    for (char c : norm) {
      const int id = ids[static_cast<unsigned char>(c)];
      if (id < 0)
        throw VocabularyError("byte " + std::to_string(static_cast<unsigned char>(c)) +
                              " is not in the vocabulary");
      out.push_back(id);
    }
    return out;
  }

  std::string decode(std::span<const int> tokens) const {
    std::string out;
    out.reserve(tokens.size());
    for (int t : tokens) {
      if (t < 0 || static_cast<std::size_t>(t) >= symbols.size())
        throw VocabularyError("token id " + std::to_string(t) + " is out of range");
      out.push_back(static_cast<char>(symbols[static_cast<std::size_t>(t)]));
    }
    return out;
  }

 private:
  void index() {
    ids.fill(-1);
    for (std::size_t i = 0; i < symbols.size(); ++i) ids[symbols[i]] = static_cast<int>(i);
  }
};

/// A token stream cut into contiguous train / dev / test regions (90/5/5).
struct Corpus {
  Vocabulary vocab;
  std::vector<int> tokens;
  std::size_t train_end = 0;
  std::size_t dev_end = 0;

  std::span<const int> train() const { return std::span(tokens).subspan(0, train_end); }
  std::span<const int> dev() const {
    return std::span(tokens).subspan(train_end, dev_end - train_end);
  }
  std::span<const int> test() const { return std::span(tokens).subspan(dev_end); }

  std::span<const int> split(std::string_view name) const {
    if (name == "train") return train();
    if (name == "dev") return dev();
    if (name == "test") return test();
    throw ConfigError("unknown split '" + std::string(name) + "' (expected train, dev or test)");
  }
};

inline Corpus ingest_text(std::string_view text, const std::string& mode) {
  if (mode != "char" && mode != "byte")
    throw ConfigError("data.mode must be char or byte, got '" + mode + "'");
  if (text.empty()) throw IngestionError("corpus is empty");
  Corpus c;
  c.vocab = mode == "char" ? Vocabulary::char_table() : Vocabulary::from_bytes(text);
  c.tokens = c.vocab.encode(text);
  if (c.tokens.empty()) throw IngestionError("corpus has no symbols left after normalization");
  const std::size_t n = c.tokens.size();
  c.train_end = n * 90 / 100;
  c.dev_end = n * 95 / 100;
  return c;
}

inline Corpus ingest(const std::string& path, const std::string& mode) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open corpus file '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (text.empty()) throw IngestionError("corpus file '" + path + "' is empty");
  return ingest_text(text, mode);
}

// ---------------------------------------------------------------------------
// Segment streaming

struct SegmentBatch {
  std::vector<std::vector<int>> inputs;   // one row per lane
  std::vector<std::vector<int>> targets;  // inputs shifted by one
};

/// Splits a token region into `batch` equal contiguous lanes and walks each
/// lane in steps of `seg_len`. Lane b owns [b*L, (b+1)*L); segment k of a
/// lane reads inputs [k*N, k*N+N) and targets one position later. Only full
/// segments are produced, so every lane yields the same count.
class SegmentStream {
 public:
  SegmentStream(std::span<const int> split, std::size_t seg_len, std::size_t batch)
      : split_(split), seg_len_(seg_len), batch_(batch) {
    if (seg_len == 0 || batch == 0) throw ConfigError("segment length and batch must be positive");
    if (split.size() < batch * (seg_len + 1))
      throw ConfigError("split of " + std::to_string(split.size()) + " tokens is too small for " +
                        std::to_string(batch) + " lanes of segment length " +
                        std::to_string(seg_len) + " (needs " +
                        std::to_string(batch * (seg_len + 1)) + ")");
    lane_len_ = split.size() / batch;
    count_ = (lane_len_ - 1) / seg_len;
  }

  std::size_t lanes() const { return batch_; }
  std::size_t lane_length() const { return lane_len_; }
  std::size_t seg_len() const { return seg_len_; }
  std::size_t size() const { return count_; }

  /// Stream position (within the lane) of segment k's first input token.
  std::int64_t position(std::size_t k) const { return static_cast<std::int64_t>(k * seg_len_); }

  SegmentBatch at(std::size_t k) const {
    if (k >= count_) throw RangeError("segment index " + std::to_string(k) + " out of range");
    SegmentBatch b;
    b.inputs.resize(batch_);
    b.targets.resize(batch_);
    for (std::size_t lane = 0; lane < batch_; ++lane) {
      const std::size_t off = lane * lane_len_ + k * seg_len_;
      b.inputs[lane].assign(split_.begin() + off, split_.begin() + off + seg_len_);
      b.targets[lane].assign(split_.begin() + off + 1, split_.begin() + off + seg_len_ + 1);
    }
    return b;
  }

 private:
  std::span<const int> split_;
  std::size_t seg_len_, batch_;
  std::size_t lane_len_ = 0, count_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  double mean_nll = 0.0;  // nats per predicted token
  double ppl = 0.0;
  double bpc = 0.0;
  std::size_t tokens = 0;
};

inline double ppl_from_nll(double nll) { return std::exp(nll); }
inline double bpc_from_nll(double nll) { return nll / std::numbers::ln2; }

/// Streams `split` once as a single lane with memory length `mem_len` and
/// segment length `seg_len` (0 = the model's own). `max_tokens` caps the
/// number of predicted tokens (0 = whole split). The last segment may be
/// shorter than `seg_len`.
template <class T>
EvalResult evaluate(const LanguageModel<T>& model, std::span<const int> split, std::size_t mem_len,
                    std::size_t seg_len = 0, std::size_t max_tokens = 0) {
  if (split.size() < 2) throw ConfigError("evaluation split needs at least two tokens");
  const std::size_t N = seg_len ? seg_len : model.config().seg_len;
  std::size_t predict = split.size() - 1;
  if (max_tokens && max_tokens < predict) predict = max_tokens;

  NoGradGuard guard;
  LmState<T> state = model.initial_state(0, mem_len);
  double total = 0.0;
  for (std::size_t t = 0; t < predict; t += N) {
    const std::size_t n = std::min(N, predict - t);
    auto in = split.subspan(t, n);
    auto tg = split.subspan(t + 1, n);
    auto r = model.forward_segment(in, tg, state);
    const double loss = static_cast<double>(r.loss.item());
    total += loss * static_cast<double>(n);
    state = std::move(r.next);
  }
  EvalResult e;
  e.tokens = predict;
  e.mean_nll = total / static_cast<double>(predict);
  e.ppl = ppl_from_nll(e.mean_nll);
  e.bpc = bpc_from_nll(e.mean_nll);
  return e;
}

struct ExtrapolationRow {
  std::size_t m = 0;
  std::size_t mem_len = 0;
  double ppl = 0.0;
};

/// One evaluation per m with target length `n_eval` and memory n_eval * m.
template <class T>
std::vector<ExtrapolationRow> extrapolate_eval(const LanguageModel<T>& model,
                                               std::span<const int> split, std::size_t n_eval,
                                               std::span<const std::size_t> m_values,
                                               std::size_t max_tokens = 0) {
  if (n_eval == 0) throw ConfigError("extrapolation target length must be positive");
  std::vector<ExtrapolationRow> rows;
  for (std::size_t m : m_values) {
    const std::size_t mem = model.config().mem_mode == MemMode::none ? 0 : n_eval * m;
    const auto e = evaluate(model, split, mem, n_eval, max_tokens);
    rows.push_back({m, mem, e.ppl});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Checkpoint

/// Complete training state: everything needed to resume bit-exactly.
template <class T>
struct Checkpoint {
  RunConfig config;
  std::uint64_t step = 0;
  LanguageModel<T> model;
  OptimizerState<T> optimizer;
  std::uint64_t rng_state = 0;
  std::vector<LmState<T>> lanes;  // carried memory of each batch lane
  double loss_sum = 0.0;          // train losses since the last metrics row
  std::uint64_t loss_count = 0;

  explicit Checkpoint(const RunConfig& cfg)
      : config(cfg), model(cfg.model, cfg.seed),
        optimizer(OptimizerState<T>::for_params(model.parameters(), AdamHyper{cfg.train.lr})),
        rng_state(cfg.seed ^ 0xd1b54a32d192ed03ULL) {
    for (std::size_t b = 0; b < cfg.train.batch; ++b) lanes.push_back(model.initial_state(0));
  }
};

template <class T>
constexpr std::uint8_t scalar_tag() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? 4 : 8;
}

inline constexpr char kCheckpointMagic[8] = {'L', 'M', 'M', 'O', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  template <class V>
  void pod(V v) {
    static_assert(std::is_trivially_copyable_v<V>);
    os_.write(reinterpret_cast<const char*>(&v), sizeof(V));
  }
  void bytes(std::string_view s) {
    pod<std::uint64_t>(s.size());
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  template <class V>
  void array(std::span<const V> xs) {
    pod<std::uint64_t>(xs.size());
    os_.write(reinterpret_cast<const char*>(xs.data()),
              static_cast<std::streamsize>(xs.size() * sizeof(V)));
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}
  template <class V>
  V pod() {
    V v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!is_) throw CheckpointError("checkpoint is truncated");
    return v;
  }
  std::string bytes(std::uint64_t limit = std::uint64_t{1} << 30) {
    const auto n = pod<std::uint64_t>();
    if (n > limit) throw CheckpointError("checkpoint string length is implausible");
    std::string s(n, '\0');
    is_.read(s.data(), static_cast<std::streamsize>(n));
    if (!is_) throw CheckpointError("checkpoint is truncated");
    return s;
  }
  template <class V>
  std::vector<V> array(std::uint64_t expected) {
    const auto n = pod<std::uint64_t>();
    if (n != expected)
      throw CheckpointError("checkpoint array has " + std::to_string(n) + " elements, expected " +
                            std::to_string(expected));
    std::vector<V> v(n);
    is_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(V)));
    if (!is_) throw CheckpointError("checkpoint is truncated");
    return v;
  }
  bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& is_;
};

}  // namespace detail

/// Serializes a checkpoint. Layout (little-endian, no padding):
///
///   magic "LMMOCKPT" | u32 version | u8 scalar bytes (4 or 8)
///   config           : u64 length + compact JSON of the run config
///   u64 step | u64 rng state | f64 loss_sum | u64 loss_count
///   u32 n_params, then per parameter:
///       name (u64 length + bytes) | u32 rank | u64 extents[rank]
///       values (u64 count + scalars)
///   optimizer        : u64 adam step, then per parameter m and v arrays
///   u32 n_lanes, then per lane: i64 position | u32 n_layers, then per layer:
///       u8 mode | u64 capacity | u64 n_slots, then per slot:
///       i64 abs_pos | i64 leftmost | i64 rightmost | h_in | c_agg | log_s
template <class T>
void save_checkpoint(const Checkpoint<T>& ck, std::ostream& os) {
  detail::Writer w(os);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.pod<std::uint8_t>(scalar_tag<T>());
  w.bytes(to_json(ck.config).dump());
  w.pod<std::uint64_t>(ck.step);
  w.pod<std::uint64_t>(ck.rng_state);
  w.pod<double>(ck.loss_sum);
  w.pod<std::uint64_t>(ck.loss_count);

  const auto params = ck.model.parameters();
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.bytes(p.name);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto e : p.tensor.shape()) w.pod<std::uint64_t>(e);
    w.array(p.tensor.values());
  }

  w.pod<std::uint64_t>(ck.optimizer.step);
  for (std::size_t k = 0; k < params.size(); ++k) {
    w.array(std::span<const T>(ck.optimizer.first_moment.at(k)));
    w.array(std::span<const T>(ck.optimizer.second_moment.at(k)));
  }

  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ck.lanes.size()));
  for (const auto& lane : ck.lanes) {
    w.pod<std::int64_t>(lane.position);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(lane.layers.size()));
    for (const auto& layer : lane.layers) {
      w.pod<std::uint8_t>(static_cast<std::uint8_t>(layer.mode));
      w.pod<std::uint64_t>(layer.capacity);
      w.pod<std::uint64_t>(layer.slots.size());
      for (const auto& s : layer.slots) {
        w.pod<std::int64_t>(s.abs_pos);
        w.pod<std::int64_t>(s.leftmost_key_pos);
        w.pod<std::int64_t>(s.rightmost_key_pos);
        w.array(std::span<const T>(s.h_in));
        w.array(std::span<const T>(s.c_agg));
        w.array(std::span<const T>(s.log_s));
      }
    }
  }
  if (!os) throw CheckpointError("failed to write checkpoint");
}

/// Reads a checkpoint. When `expected` is given, the embedded model config
/// must equal it.
template <class T>
Checkpoint<T> load_checkpoint(std::istream& is,
                              const std::optional<ModelConfig>& expected = std::nullopt) {
  detail::Reader r(is);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw CheckpointError("not a lamemo checkpoint (bad magic)");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                          " (this build reads " + std::to_string(kCheckpointVersion) + ")");
  const auto tag = r.pod<std::uint8_t>();
  if (tag != scalar_tag<T>())
    throw CheckpointError("checkpoint stores " + std::to_string(8 * tag) +
                          "-bit scalars, reader expects " + std::to_string(8 * scalar_tag<T>()));

  RunConfig cfg;
  try {
    cfg = run_config_from_json(nlohmann::json::parse(r.bytes()));
    cfg.validate();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint config is not valid JSON: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config is invalid: ") + e.what());
  }
  if (expected && !(*expected == cfg.model))
    throw CheckpointError("checkpoint model config does not match the requested config: " +
                          to_json(cfg.model).dump() + " vs " + to_json(*expected).dump());

  Checkpoint<T> ck(cfg);
  ck.step = r.pod<std::uint64_t>();
  ck.rng_state = r.pod<std::uint64_t>();
  ck.loss_sum = r.pod<double>();
  ck.loss_count = r.pod<std::uint64_t>();

  auto params = ck.model.mutable_parameters();
  const auto n_params = r.pod<std::uint32_t>();
  if (n_params != params.size())
    throw CheckpointError("checkpoint has " + std::to_string(n_params) + " parameters, model has " +
                          std::to_string(params.size()));
  for (auto& p : params) {
    const std::string name = r.bytes(4096);
    if (name != p.name)
      throw CheckpointError("checkpoint parameter '" + name + "' where '" + p.name + "' expected");
    const auto rank = r.pod<std::uint32_t>();
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.pod<std::uint64_t>());
    if (shape != p.tensor.shape())
      throw CheckpointError("parameter '" + name + "' has shape " + shape_str(shape) +
                            ", model expects " + shape_str(p.tensor.shape()));
    const auto vals = r.array<T>(p.tensor.numel());
    std::copy(vals.begin(), vals.end(), p.tensor.mutable_values().begin());
  }

  ck.optimizer.step = r.pod<std::uint64_t>();
  for (std::size_t k = 0; k < params.size(); ++k) {
    ck.optimizer.first_moment[k] = r.array<T>(params[k].tensor.numel());
    ck.optimizer.second_moment[k] = r.array<T>(params[k].tensor.numel());
  }

  const std::size_t d = cfg.model.d_model, H = cfg.model.n_heads;
  const auto n_lanes = r.pod<std::uint32_t>();
  if (n_lanes != cfg.train.batch)
    throw CheckpointError("checkpoint lane count does not match train.batch");
  ck.lanes.assign(n_lanes, LmState<T>{});
  for (auto& lane : ck.lanes) {
    lane.position = r.pod<std::int64_t>();
    const auto n_layers = r.pod<std::uint32_t>();
    if (n_layers != cfg.model.n_layers) throw CheckpointError("checkpoint lane layer count mismatch");
    lane.layers.resize(n_layers);
    for (auto& layer : lane.layers) {
      const auto mode = r.pod<std::uint8_t>();
      if (mode != static_cast<std::uint8_t>(cfg.model.mem_mode))
        throw CheckpointError("checkpoint lane memory mode mismatch");
      layer.mode = cfg.model.mem_mode;
      layer.capacity = r.pod<std::uint64_t>();
      const auto n_slots = r.pod<std::uint64_t>();
      if (n_slots > layer.capacity) throw CheckpointError("checkpoint memory exceeds its capacity");
      layer.slots.resize(n_slots);
      for (auto& s : layer.slots) {
        s.abs_pos = r.pod<std::int64_t>();
        s.leftmost_key_pos = r.pod<std::int64_t>();
        s.rightmost_key_pos = r.pod<std::int64_t>();
        s.h_in = r.array<T>(d);
        s.c_agg = r.array<T>(d);
        s.log_s = r.array<T>(H);
      }
    }
  }
  if (!r.at_end()) throw CheckpointError("trailing bytes after checkpoint");
  return ck;
}

template <class T>
void save_checkpoint(const Checkpoint<T>& ck, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open '" + path + "' for writing");
  save_checkpoint(ck, os);
}

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path,
                              const std::optional<ModelConfig>& expected = std::nullopt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint '" + path + "'");
  return load_checkpoint<T>(is, expected);
}

/// Reads only the scalar width of a checkpoint file (4 or 8), so callers can
/// pick the matching reader.
inline std::uint8_t checkpoint_scalar_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint '" + path + "'");
  detail::Reader r(is);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw CheckpointError("not a lamemo checkpoint (bad magic)");
  (void)r.pod<std::uint32_t>();
  return r.pod<std::uint8_t>();
}

// ---------------------------------------------------------------------------
// Training

struct MetricRow {
  std::uint64_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> dev_bpc;
  std::optional<double> dev_ppl;
};

struct TrainCurveRow {
  std::string scheme;
  std::uint64_t step = 0;
  double dev_ppl = 0.0;
};

/// State dump written when training produces a non-finite loss or gradient.
struct Divergence {
  std::uint64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::vector<std::pair<std::string, double>> layer_norms;  // L2 norm of each layer's weights

  std::string describe() const {
    std::ostringstream os;
    os << "non-finite training loss at step " << step << " (lr=" << lr << ", loss=" << loss
       << ")";
    for (const auto& [name, norm] : layer_norms) os << "; " << name << " norm=" << norm;
    return os.str();
  }
};

template <class T>
struct TrainResult {
  Checkpoint<T> checkpoint;
  std::vector<MetricRow> metrics;
  std::vector<TrainCurveRow> curve;
  std::optional<Divergence> divergence;
};

struct TrainOptions {
  std::uint64_t stop_at = 0;        // stop early after this many updates (0 = run to the end)
  std::ostream* progress = nullptr; // echoes each metrics row
};

namespace detail {

template <class T>
std::vector<std::pair<std::string, double>> layer_norms(const LanguageModel<T>& model) {
  std::vector<std::pair<std::string, double>> out;
  auto add = [&](const std::string& group, const Tensor<T>& t) {
    double s = 0.0;
    for (T v : t.values()) s += static_cast<double>(v) * static_cast<double>(v);
    if (out.empty() || out.back().first != group) out.push_back({group, 0.0});
    out.back().second += s;
  };
  for (const auto& p : model.parameters()) {
    const auto dot = p.name.find('.');
    const bool layered = p.name.rfind("layer", 0) == 0;
    add(layered ? p.name.substr(0, dot) : p.name, p.tensor);
  }
  for (auto& [name, s] : out) s = std::sqrt(s);
  return out;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace detail

/// Runs (or resumes) the step loop: every step forwards one segment per
/// lane, backpropagates the lane-averaged loss, clips the global gradient
/// norm, and applies Adam at the cosine-decayed learning rate. Lane memory
/// is carried between steps as plain values, so no gradient crosses a
/// segment boundary. When the lanes run out of segments the stream restarts
/// from the beginning with empty memory.
template <class T>
TrainResult<T> train(const RunConfig& cfg, const Corpus& corpus,
                     std::optional<Checkpoint<T>> resume = std::nullopt,
                     const TrainOptions& topt = {}) {
  cfg.validate();
  if (cfg.model.vocab_size != corpus.vocab.size())
    throw ConfigError("model vocab_size " + std::to_string(cfg.model.vocab_size) +
                      " does not match the corpus vocabulary (" +
                      std::to_string(corpus.vocab.size()) + ")");
  const SegmentStream stream(corpus.train(), cfg.model.seg_len, cfg.train.batch);

  TrainResult<T> res{resume ? std::move(*resume) : Checkpoint<T>(cfg), {}, {}, std::nullopt};
  auto& ck = res.checkpoint;
  if (!(ck.config.model == cfg.model) || ck.config.train.batch != cfg.train.batch)
    throw CheckpointError("resumed checkpoint was trained with a different model or batch");
  ck.config = cfg;
  auto& model = ck.model;
  auto params = model.mutable_parameters();
  Rng rng(0);
  rng.set_state(ck.rng_state);

  const auto dev = corpus.dev();
  const std::string scheme = to_string(cfg.model.rpe_scheme);
  const std::uint64_t total = cfg.train.steps;
  const std::uint64_t stop = topt.stop_at ? std::min(topt.stop_at, total) : total;
  const double inv_lanes = 1.0 / static_cast<double>(cfg.train.batch);

  auto dev_eval = [&](MetricRow& row) {
    if (dev.size() < 2) return;
    const auto e = evaluate(model, dev, cfg.model.mem_len, cfg.model.seg_len, cfg.train.eval_tokens);
    row.dev_bpc = e.bpc;
    row.dev_ppl = e.ppl;
    res.curve.push_back({scheme, row.step, e.ppl});
  };
  auto emit = [&](MetricRow row) {
    if (topt.progress) {
      *topt.progress << "step " << row.step << " lr " << detail::format_double(row.lr);
      if (std::isfinite(row.train_loss))
        *topt.progress << " train_loss " << detail::format_double(row.train_loss);
      if (row.dev_bpc)
        *topt.progress << " dev_bpc " << detail::format_double(*row.dev_bpc) << " dev_ppl "
                       << detail::format_double(*row.dev_ppl);
      *topt.progress << "\n";
    }
    res.metrics.push_back(std::move(row));
  };

  for (std::uint64_t s = ck.step; s < stop; ++s) {
    const double lr = cosine_lr(s, total, cfg.train.lr);
    const std::size_t k = static_cast<std::size_t>(s % stream.size());
    if (k == 0)
      for (auto& lane : ck.lanes) lane = model.initial_state(0);
    const SegmentBatch batch = stream.at(k);

    ForwardOptions fo;
    fo.training = true;
    fo.rng = &rng;
    Tensor<T> loss;
    for (std::size_t b = 0; b < cfg.train.batch; ++b) {
      auto r = model.forward_segment(batch.inputs[b], batch.targets[b], ck.lanes[b], fo);
      loss = b == 0 ? r.loss : add(loss, r.loss);
      ck.lanes[b] = std::move(r.next);
    }
    loss = scale(loss, static_cast<T>(inv_lanes));
    const double loss_value = static_cast<double>(loss.item());

    auto diverge = [&] {
      res.divergence = Divergence{s, lr, loss_value, detail::layer_norms(model)};
      ck.step = s;
      ck.rng_state = rng.state();
      return res;
    };
    if (!std::isfinite(loss_value)) return diverge();

    ck.loss_sum += loss_value;
    ++ck.loss_count;
    const bool log_row = s % cfg.train.log_interval == 0;
    const bool eval_row = s % cfg.train.eval_interval == 0;
    if (log_row || eval_row) {
      MetricRow row{s, lr, ck.loss_sum / static_cast<double>(ck.loss_count), {}, {}};
      if (eval_row) dev_eval(row);
      ck.loss_sum = 0.0;
      ck.loss_count = 0;
      emit(std::move(row));
    }

    zero_grads(params);
    loss.backward();
    clip_grad_norm(params, cfg.train.clip);
    try {
      adam_step(params, ck.optimizer, lr);
    } catch (const NonFiniteError&) {
      return diverge();
    }
    ck.step = s + 1;
    ck.rng_state = rng.state();
  }
  zero_grads(params);

  if (ck.step == total) {
    MetricRow row{total, cosine_lr(total, total, cfg.train.lr),
                  ck.loss_count ? ck.loss_sum / static_cast<double>(ck.loss_count)
                                : std::numeric_limits<double>::quiet_NaN(),
                  {}, {}};
    dev_eval(row);
    emit(std::move(row));
  }
  return res;
}

// ---------------------------------------------------------------------------
// CSV output

inline void write_metrics_csv(std::ostream& os, std::span<const MetricRow> rows) {
  os << "step,lr,train_loss,dev_bpc,dev_ppl\n";
  for (const auto& r : rows) {
    os << r.step << ',' << detail::format_double(r.lr) << ',';
    if (std::isfinite(r.train_loss)) os << detail::format_double(r.train_loss);
    os << ',';
    if (r.dev_bpc) os << detail::format_double(*r.dev_bpc);
    os << ',';
    if (r.dev_ppl) os << detail::format_double(*r.dev_ppl);
    os << '\n';
  }
}

inline void write_train_curve_csv(std::ostream& os, std::span<const TrainCurveRow> rows) {
  os << "scheme,step,dev_ppl\n";
  for (const auto& r : rows)
    os << r.scheme << ',' << r.step << ',' << detail::format_double(r.dev_ppl) << '\n';
}

inline void write_extrapolation_csv(std::ostream& os, std::span<const ExtrapolationRow> rows) {
  os << "m,mem_len,ppl\n";
  for (const auto& r : rows)
    os << r.m << ',' << r.mem_len << ',' << detail::format_double(r.ppl) << '\n';
}

}  // namespace lamemo

#endif  // LAMEMO_PIPELINE_HPP_
