#include "fshgr/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace fshgr {

namespace {
std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}
}  // namespace

std::string to_string(EmbeddingKind k) {
  switch (k) {
    case EmbeddingKind::FC: return "fc";
    case EmbeddingKind::LSTM: return "lstm";
    case EmbeddingKind::TBlockI: return "tblock1";
    case EmbeddingKind::TBlockII: return "tblock2";
  }
  return "?";
}

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::NewRepetitions: return "new-repetitions";
    case Scenario::NewSubjects: return "new-subjects";
    case Scenario::NewGestures: return "new-gestures";
  }
  return "?";
}

std::string to_string(SamplingMode m) {
  return m == SamplingMode::SameSubject ? "same-subject" : "cross-subject";
}

std::string to_string(Split s) {
  switch (s) {
    case Split::MetaTrain: return "meta-train";
    case Split::MetaVal: return "meta-val";
    case Split::MetaTest: return "meta-test";
  }
  return "?";
}

EmbeddingKind embedding_kind_from_string(const std::string& s) {
  if (s == "fc") return EmbeddingKind::FC;
  if (s == "lstm") return EmbeddingKind::LSTM;
  if (s == "tblock1") return EmbeddingKind::TBlockI;
  if (s == "tblock2") return EmbeddingKind::TBlockII;
  throw ParameterError("unknown embedding '" + s + "', expected one of {fc, lstm, tblock1, tblock2}");
}

Scenario scenario_from_string(const std::string& s) {
  if (s == "new-repetitions") return Scenario::NewRepetitions;
  if (s == "new-subjects") return Scenario::NewSubjects;
  if (s == "new-gestures") return Scenario::NewGestures;
  throw ParameterError("unknown scenario '" + s +
                       "', expected one of {new-repetitions, new-subjects, new-gestures}");
}

SamplingMode sampling_mode_from_string(const std::string& s) {
  if (s == "same-subject") return SamplingMode::SameSubject;
  if (s == "cross-subject") return SamplingMode::CrossSubject;
  throw ParameterError("unknown sampling mode '" + s +
                       "', expected one of {same-subject, cross-subject}");
}

Split split_from_string(const std::string& s) {
  if (s == "meta-train") return Split::MetaTrain;
  if (s == "meta-val") return Split::MetaVal;
  if (s == "meta-test") return Split::MetaTest;
  throw ParameterError("unknown split '" + s +
                       "', expected one of {meta-train, meta-val, meta-test}");
}

// --- ConfigMap ----------------------------------------------------------------

ConfigMap ConfigMap::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str(), path.string());
}

ConfigMap ConfigMap::parse_text(const std::string& text, const std::string& context) {
  ConfigMap map;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError(context + ":" + std::to_string(lineno) +
                        ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw FormatError(context + ":" + std::to_string(lineno) + ": empty key");
    map.kv_[key] = value;
  }
  return map;
}

std::string ConfigMap::to_text() const {
  std::string out;
  for (const auto& [k, v] : kv_) {
    out += k;
    out += " = ";
    out += v;
    out += "\n";
  }
  return out;
}

void ConfigMap::write_file(const std::filesystem::path& path,
                           const std::vector<std::string>& header_comments) const {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  for (const auto& c : header_comments) out << "# " << c << "\n";
  out << to_text();
  if (!out) throw FormatError("write failure on " + path.string());
}

void ConfigMap::set_double(const std::string& key, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  kv_[key] = buf;
}

std::string ConfigMap::get(const std::string& key, const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

std::string ConfigMap::require(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) throw ParameterError("missing required config key '" + key + "'");
  return it->second;
}

std::int64_t ConfigMap::get_int(const std::string& key, std::int64_t fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  std::int64_t v = 0;
  const auto [p, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
  if (ec != std::errc() || p != it->second.data() + it->second.size())
    throw ParameterError("config key '" + key + "': expected integer, got '" + it->second + "'");
  return v;
}

std::uint64_t ConfigMap::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
  if (ec != std::errc() || p != it->second.data() + it->second.size())
    throw ParameterError("config key '" + key + "': expected unsigned integer, got '" +
                         it->second + "'");
  return v;
}

double ConfigMap::get_double(const std::string& key, double fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ParameterError("config key '" + key + "': expected number, got '" + it->second + "'");
  }
}

bool ConfigMap::get_bool(const std::string& key, bool fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ParameterError("config key '" + key + "': expected true/false, got '" + it->second + "'");
}

void ConfigMap::overlay(const ConfigMap& other) {
  for (const auto& [k, v] : other.kv_) kv_[k] = v;
}

// --- struct <-> map -------------------------------------------------------------

void to_map(const ModelConfig& cfg, ConfigMap& out) {
  out.set("model.embedding", to_string(cfg.embedding.kind));
  out.set_int("model.input_channels", cfg.embedding.input_channels);
  out.set_int("model.window_len", cfg.embedding.window_len);
  out.set_int("model.out_dim", cfg.embedding.out_dim);
  out.set_int("model.hidden_time", cfg.embedding.hidden_time);
  out.set_int("model.n_way", cfg.n_way);
  out.set_int("model.k_shot", cfg.k_shot);
  out.set_int("model.tcn_filters", cfg.tcn_filters);
  out.set_int("model.tcn_kernel", cfg.tcn_kernel);
  out.set_int("model.d_k", cfg.attention.d_k);
  out.set_int("model.d_v", cfg.attention.d_v);
  out.set_bool("model.causal_mask", cfg.attention.causal_mask);
  out.set_u64("model.seed", cfg.seed);
}

ModelConfig model_config_from_map(const ConfigMap& map) {
  ModelConfig cfg;
  cfg.embedding.kind = embedding_kind_from_string(
      map.get("model.embedding", to_string(cfg.embedding.kind)));
  cfg.embedding.input_channels =
      static_cast<int>(map.get_int("model.input_channels", cfg.embedding.input_channels));
  cfg.embedding.window_len =
      static_cast<int>(map.get_int("model.window_len", cfg.embedding.window_len));
  cfg.embedding.out_dim = static_cast<int>(map.get_int("model.out_dim", cfg.embedding.out_dim));
  cfg.embedding.hidden_time =
      static_cast<int>(map.get_int("model.hidden_time", cfg.embedding.hidden_time));
  cfg.n_way = static_cast<int>(map.get_int("model.n_way", cfg.n_way));
  cfg.k_shot = static_cast<int>(map.get_int("model.k_shot", cfg.k_shot));
  cfg.tcn_filters = static_cast<int>(map.get_int("model.tcn_filters", cfg.tcn_filters));
  cfg.tcn_kernel = static_cast<int>(map.get_int("model.tcn_kernel", cfg.tcn_kernel));
  cfg.attention.d_k = static_cast<int>(map.get_int("model.d_k", cfg.attention.d_k));
  cfg.attention.d_v = static_cast<int>(map.get_int("model.d_v", cfg.attention.d_v));
  cfg.attention.causal_mask = map.get_bool("model.causal_mask", cfg.attention.causal_mask);
  cfg.seed = map.get_u64("model.seed", cfg.seed);
  cfg.validate();
  return cfg;
}

void to_map(const TrainConfig& cfg, ConfigMap& out) {
  out.set_double("train.lr", cfg.lr);
  out.set_int("train.batch_size", cfg.batch_size);
  out.set_int("train.max_steps", cfg.max_steps);
  out.set_int("train.eval_every", cfg.eval_every);
  out.set_int("train.eval_episodes", cfg.eval_episodes);
  out.set_u64("train.seed", cfg.seed);
  out.set("train.scenario", to_string(cfg.scenario));
  out.set_int("train.n_way", cfg.n_way);
  out.set_int("train.k_shot", cfg.k_shot);
  out.set("train.sampling_mode", to_string(cfg.sampling_mode));
  out.set_bool("train.label_shuffle", cfg.label_shuffle);
  out.set_bool("train.include_rest", cfg.include_rest);
  out.set_int("train.workers", cfg.workers);
}

TrainConfig train_config_from_map(const ConfigMap& map) {
  TrainConfig cfg;
  cfg.lr = map.get_double("train.lr", cfg.lr);
  cfg.batch_size = static_cast<int>(map.get_int("train.batch_size", cfg.batch_size));
  cfg.max_steps = static_cast<int>(map.get_int("train.max_steps", cfg.max_steps));
  cfg.eval_every = static_cast<int>(map.get_int("train.eval_every", cfg.eval_every));
  cfg.eval_episodes = static_cast<int>(map.get_int("train.eval_episodes", cfg.eval_episodes));
  cfg.seed = map.get_u64("train.seed", cfg.seed);
  cfg.scenario = scenario_from_string(map.get("train.scenario", to_string(cfg.scenario)));
  cfg.n_way = static_cast<int>(map.get_int("train.n_way", cfg.n_way));
  cfg.k_shot = static_cast<int>(map.get_int("train.k_shot", cfg.k_shot));
  cfg.sampling_mode =
      sampling_mode_from_string(map.get("train.sampling_mode", to_string(cfg.sampling_mode)));
  cfg.label_shuffle = map.get_bool("train.label_shuffle", cfg.label_shuffle);
  cfg.include_rest = map.get_bool("train.include_rest", cfg.include_rest);
  cfg.workers = static_cast<int>(map.get_int("train.workers", cfg.workers));
  cfg.validate();
  return cfg;
}

void to_map(const PreprocessConfig& cfg, ConfigMap& out) {
  out.set_double("prep.fs", cfg.fs);
  out.set_double("prep.cutoff_hz", cfg.cutoff_hz);
  out.set_double("prep.mu", cfg.mu);
  out.set_double("prep.window_ms", cfg.window_ms);
  out.set_double("prep.step_ms", cfg.step_ms);
}

PreprocessConfig preprocess_config_from_map(const ConfigMap& map) {
  PreprocessConfig cfg;
  cfg.fs = map.get_double("prep.fs", cfg.fs);
  cfg.cutoff_hz = map.get_double("prep.cutoff_hz", cfg.cutoff_hz);
  cfg.mu = map.get_double("prep.mu", cfg.mu);
  cfg.window_ms = map.get_double("prep.window_ms", cfg.window_ms);
  cfg.step_ms = map.get_double("prep.step_ms", cfg.step_ms);
  cfg.validate();
  return cfg;
}

}  // namespace fshgr
