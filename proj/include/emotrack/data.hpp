#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "emotrack/autodiff.hpp"
#include "emotrack/config.hpp"
#include "emotrack/tensor.hpp"

namespace emotrack::data {

using Items = std::array<double, kSymptoms>;

enum class Speaker { client, counselor };

struct Turn {
  Speaker speaker = Speaker::client;
  std::vector<double> embedding;
  std::optional<std::string> text;
};

struct Labels {
  Items items{};
  double total = 0.0;
};

struct SessionRecord {
  std::string client_id;
  int session_index = 1;
  std::vector<Turn> turns;
  std::vector<double> features;
  std::optional<Labels> labels;
  std::optional<Items> latent_items;
};

struct TrajectoryRecord {
  std::string run_id;
  std::vector<SessionRecord> sessions;
};

/// A loaded corpus: header dimensions plus trajectories in first-seen order.
struct Corpus {
  std::size_t embed_dim = 0;
  std::size_t num_features = 0;
  std::vector<TrajectoryRecord> trajectories;

  std::size_t session_count() const;
};

/// Sum of PHQ-8 items; throws DataError when an item lies outside [0, 3].
double total_score(const Items& items);

/// Loads the session JSONL format (header line, then one session per line).
/// Turns may carry inline embeddings or `embedding_ref` rows into the binary
/// sidecar named by the header's `embedding_sidecar` key (relative to the file).
Corpus load_dataset(const std::filesystem::path& path);

/// Writes the session JSONL format with inline embeddings.
void save_dataset(const Corpus& corpus, const std::filesystem::path& path);

nlohmann::json session_to_json(const SessionRecord& s);

// ---- binary embedding sidecar ------------------------------------------------
// "EMOT" | version u32 | rows u32 | cols u32 | rows*cols float32, all little-endian.

struct EmbeddingMatrix {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> values;
};

EmbeddingMatrix read_embedding_sidecar(const std::filesystem::path& path);
void write_embedding_sidecar(const EmbeddingMatrix& m, const std::filesystem::path& path);

// ---- turn filtering ------------------------------------------------------------

/// Turns matching the view in original order; turns whose text is present but
/// blank are dropped. Throws DataError when nothing usable remains.
std::vector<Turn> filter_turns(const SessionRecord& session, SpeakerView view);

/// First min(len, max_turns) turns.
std::vector<Turn> truncate_turns(std::vector<Turn> turns, std::size_t max_turns);

// ---- feature normalization ------------------------------------------------------

struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> std;
  static constexpr double kStdFloor = 1e-6;
};

/// Per-feature mean and population standard deviation (floored at 1e-6).
FeatureStats fit_feature_stats(const std::vector<const SessionRecord*>& training_sessions);
std::vector<double> z_normalize(const std::vector<double>& features, const FeatureStats& stats);

// ---- split manifest -------------------------------------------------------------

enum class Split { train, val, test };
std::string to_string(Split s);
Split parse_split(const std::string& s);

struct SplitManifest {
  std::uint64_t seed = 42;
  std::array<double, 3> ratios{0.7, 0.1, 0.2};
  std::map<std::string, Split> assignments;

  std::vector<std::string> ids(Split s) const;
  std::size_t count(Split s) const;
};

/// Sorts ids, shuffles them with Rng(seed).split("split-manifest"), then assigns
/// the first floor(r0 n) to train, up to floor((r0 + r1) n) to val, the rest to test.
SplitManifest build_split_manifest(std::vector<std::string> run_ids, std::uint64_t seed,
                                   std::array<double, 3> ratios = {0.7, 0.1, 0.2});

nlohmann::json to_json(const SplitManifest& m);
SplitManifest manifest_from_json(const nlohmann::json& j);
SplitManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const SplitManifest& m, const std::filesystem::path& path);

// ---- model-ready examples ---------------------------------------------------------

/// One session prepared for the model: normalized features, the filtered and
/// truncated turn embeddings, and the previous session's turns when they exist.
/// Rows of `turns` at or beyond `turn_count` are padding.
struct Example {
  std::string run_id;
  int session_index = 1;
  std::vector<double> features_z;
  num::Tensor turns;
  std::size_t turn_count = 0;
  std::optional<num::Tensor> history;
  std::optional<Items> label_items;
  /// Evaluation target: latent items when present, otherwise the labels.
  std::optional<Items> target_items;
};

struct ExampleOptions {
  SpeakerView view = SpeakerView::client;
  std::size_t max_turns = 80;
  bool require_labels = false;
};

/// Builds examples for every session of the trajectories assigned to `split`.
std::vector<Example> build_examples(const Corpus& corpus, const SplitManifest& manifest, Split split,
                                    const FeatureStats& stats, const ExampleOptions& options);

/// Training-split sessions, for fitting FeatureStats.
std::vector<const SessionRecord*> sessions_in(const Corpus& corpus, const SplitManifest& manifest, Split split);

}  // namespace emotrack::data
