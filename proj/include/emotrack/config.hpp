#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace emotrack {

enum class SpeakerView { client, counselor, both };
enum class MemoryMode { none, summary, summary_retrieval };
enum class Readout { symptom_query, mean_pooled };
enum class InputSource { both, features, dialogue };

std::string to_string(SpeakerView v);
std::string to_string(MemoryMode m);
std::string to_string(Readout r);
std::string to_string(InputSource s);
SpeakerView parse_speaker_view(std::string_view s);
MemoryMode parse_memory_mode(std::string_view s);
Readout parse_readout(std::string_view s);
InputSource parse_input_source(std::string_view s);

inline constexpr std::size_t kSymptoms = 8;

/// Architecture and data-view settings. Everything needed to rebuild the
/// forward pass from a checkpoint lives here.
struct ModelConfig {
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t d_ff = 256;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 4;
  std::size_t num_features = 23;
  std::size_t num_symptoms = kSymptoms;
  std::size_t memory_slots = 16;
  std::size_t max_turns = 80;
  std::size_t embed_dim = 4096;
  std::size_t score_hidden = 32;
  double dropout = 0.1;
  double ln_eps = 1e-5;
  /// Group (1, 2 or 3) of each feature. Empty means the standard 8/5/10 layout,
  /// which requires num_features == 23.
  std::vector<int> group_map;
  MemoryMode memory = MemoryMode::summary_retrieval;
  Readout readout = Readout::symptom_query;
  InputSource input_source = InputSource::both;
  SpeakerView speaker_view = SpeakerView::client;
  bool query_self_attention = true;

  /// Throws ConfigError naming the offending key.
  void validate() const;
  /// group_map with the default expanded.
  std::vector<int> resolved_group_map() const;
};

struct TrainConfig {
  ModelConfig model;
  double lr = 1e-3;
  double weight_decay = 1e-2;
  std::size_t batch_size = 32;
  double warmup_ratio = 0.05;
  double lambda_sym = 0.5;
  double p_hist = 0.1;
  std::size_t max_epochs = 100;
  std::size_t patience = 8;
  double clip_norm = 1.0;
  double huber_delta = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Parameter-name prefixes exempt from weight decay.
  std::vector<std::string> decay_exclude;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);

/// Stable 16-hex-digit fingerprint of a JSON value (hash of its canonical dump).
std::string fingerprint(const nlohmann::json& j);

/// Flat `key = value` configuration. Grammar, one entry per line:
///   - blank lines and lines starting with `#` are ignored; `#` after a value starts a comment
///   - `key = value`, whitespace around key and value trimmed
///   - list values are comma separated
/// Keys are tracked as they are read so leftovers can be reported as unknown.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, const std::string& source = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& entries() const { return values_; }

  std::optional<std::string> get_string(const std::string& key) const;
  std::optional<double> get_double(const std::string& key) const;
  std::optional<std::uint64_t> get_uint(const std::string& key) const;
  std::optional<bool> get_bool(const std::string& key) const;
  std::optional<std::vector<std::string>> get_list(const std::string& key) const;
  std::optional<std::vector<double>> get_double_list(const std::string& key) const;

  /// Throws ConfigError naming the first key that was never read.
  void require_all_consumed(std::string_view context) const;

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
  std::string source_;
};

/// Reads training and model keys, starting from defaults. Corpus dimensions
/// (num_features, embed_dim) are not read here; they come from the data.
TrainConfig train_config_from(const KeyValueConfig& kv, TrainConfig base = {});

}  // namespace emotrack
