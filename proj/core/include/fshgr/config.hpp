#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fshgr/errors.hpp"
#include "fshgr/signal.hpp"

namespace fshgr {

enum class EmbeddingKind { FC, LSTM, TBlockI, TBlockII };
enum class Scenario { NewRepetitions, NewSubjects, NewGestures };
enum class SamplingMode { SameSubject, CrossSubject };
enum class Split { MetaTrain, MetaVal, MetaTest };

std::string to_string(EmbeddingKind k);
std::string to_string(Scenario s);
std::string to_string(SamplingMode m);
std::string to_string(Split s);
EmbeddingKind embedding_kind_from_string(const std::string& s);
Scenario scenario_from_string(const std::string& s);
SamplingMode sampling_mode_from_string(const std::string& s);
Split split_from_string(const std::string& s);

struct EmbeddingConfig {
  EmbeddingKind kind = EmbeddingKind::FC;
  int input_channels = 12;  // N_S
  int window_len = 400;     // W in samples
  int out_dim = 128;        // feature vector width
  int hidden_time = 100;    // intermediate time-axis FC size

  void validate() const {
    if (out_dim <= 0 || window_len <= 0 || input_channels <= 0 || hidden_time <= 0)
      throw ParameterError("embedding config: all sizes must be positive");
  }
};

struct AttentionConfig {
  int d_k = 64;
  int d_v = 32;
  bool causal_mask = true;

  void validate() const {
    if (d_k <= 0 || d_v <= 0) throw ParameterError("attention config: d_k and d_v must be positive");
  }
};

struct ModelConfig {
  EmbeddingConfig embedding;
  int n_way = 5;
  int k_shot = 1;
  int tcn_filters = 128;
  int tcn_kernel = 2;
  AttentionConfig attention;
  std::uint64_t seed = 0;

  int seq_len() const { return n_way * k_shot + 1; }
  void validate() const {
    embedding.validate();
    attention.validate();
    if (n_way < 2) throw ParameterError("model config: n_way must be >= 2");
    if (k_shot < 1) throw ParameterError("model config: k_shot must be >= 1");
    if (tcn_filters <= 0 || tcn_kernel <= 0)
      throw ParameterError("model config: tcn sizes must be positive");
  }
};

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 0;  // 0 = auto: 32 for 10-way 5-shot, otherwise 64
  int max_steps = 30000;
  int eval_every = 500;
  int eval_episodes = 1000;
  std::uint64_t seed = 0;
  Scenario scenario = Scenario::NewSubjects;
  int n_way = 5;
  int k_shot = 1;
  SamplingMode sampling_mode = SamplingMode::SameSubject;
  bool label_shuffle = true;
  bool include_rest = false;
  int workers = 0;  // 0 = all available cores

  int resolved_batch_size() const {
    if (batch_size > 0) return batch_size;
    return (n_way == 10 && k_shot == 5) ? 32 : 64;
  }
  void validate() const {
    if (lr <= 0) throw ParameterError("train config: lr must be positive");
    if (batch_size < 0) throw ParameterError("train config: batch_size must be >= 1 (or 0 for auto)");
    if (max_steps < 1) throw ParameterError("train config: max_steps must be >= 1");
    if (eval_every < 1) throw ParameterError("train config: eval_every must be >= 1");
    if (eval_episodes < 1) throw ParameterError("train config: eval_episodes must be >= 1");
  }
};

// Flat, ordered key=value store backing config files and run manifests.
// File syntax: one `key = value` per line, '#' starts a comment.
class ConfigMap {
 public:
  ConfigMap() = default;

  static ConfigMap parse_file(const std::filesystem::path& path);
  static ConfigMap parse_text(const std::string& text, const std::string& context);
  void write_file(const std::filesystem::path& path,
                  const std::vector<std::string>& header_comments = {}) const;
  std::string to_text() const;

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  void set_int(const std::string& key, std::int64_t v) { kv_[key] = std::to_string(v); }
  void set_u64(const std::string& key, std::uint64_t v) { kv_[key] = std::to_string(v); }
  void set_double(const std::string& key, double v);
  void set_bool(const std::string& key, bool v) { kv_[key] = v ? "true" : "false"; }

  std::string get(const std::string& key, const std::string& fallback) const;
  std::string require(const std::string& key) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Copies every key of `other` over this map.
  void overlay(const ConfigMap& other);

  const std::map<std::string, std::string>& items() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

// model.* / train.* / prep.* key blocks.
void to_map(const ModelConfig& cfg, ConfigMap& out);
void to_map(const TrainConfig& cfg, ConfigMap& out);
void to_map(const PreprocessConfig& cfg, ConfigMap& out);
ModelConfig model_config_from_map(const ConfigMap& map);
TrainConfig train_config_from_map(const ConfigMap& map);
PreprocessConfig preprocess_config_from_map(const ConfigMap& map);

}  // namespace fshgr
