#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "emotrack/config.hpp"
#include "emotrack/data.hpp"
#include "emotrack/rng.hpp"

namespace emotrack::synth {

inline constexpr std::size_t kVisits = 5;
inline constexpr std::size_t kFeatureCount = 23;

using Anchors = std::array<int, kVisits>;
using ItemVector = std::array<int, kSymptoms>;

enum class Trend { stable, improving, worsening, fluctuating };
std::string to_string(Trend t);

/// improving: last - first <= -3; worsening: >= +3; fluctuating: max - min >= 5
/// with no monotone direction; stable otherwise.
Trend classify_trend(const Anchors& anchors);

struct GeneratorConfig {
  std::size_t n_clients = 200;
  std::size_t client_turns = 10;
  std::size_t counselor_turns = 10;
  std::size_t embed_dim = 32;
  /// Share of the 8 symptoms expressed only in the previous session.
  double history_fraction = 0.25;
  /// Explicit history-dependent symptom indices (0-based); overrides history_fraction.
  std::optional<std::vector<std::size_t>> history_symptoms;
  double embed_noise = 1.0;
  double counselor_noise = 1.0;
  double feature_noise = 1.0;
  double p_flip = 0.1;
  std::size_t self_report_passes = 5;
  std::size_t bucket_size = 32;
  std::uint64_t seed = 42;
  std::array<double, 3> split_ratios{0.7, 0.1, 0.2};

  void validate() const;
  /// Mask over symptoms: true when a symptom is history-dependent.
  std::array<bool, kSymptoms> history_mask() const;
};

/// Reads generator keys from a key=value file; unknown keys are errors.
GeneratorConfig generator_config_from(const KeyValueConfig& kv, GeneratorConfig base = {});
nlohmann::json to_json(const GeneratorConfig& c);

/// One quarterly window: score at its start and at its end.
using Window = std::pair<int, int>;

/// Anchor 1 is the first window's start; anchor k+1 is window k's end, except
/// that where window k's end and window k+1's start disagree the anchor is
/// their mean rounded half up.
Anchors reconstruct_anchor_chain(const std::array<Window, kVisits - 1>& windows);

/// All 4^8 item vectors grouped by total, each group reduced to a seeded
/// sample of at most `per_total` vectors.
using Buckets = std::array<std::vector<ItemVector>, 25>;
Buckets build_buckets(std::uint64_t seed, std::size_t per_total);

/// Total 0 -> all zeros, 24 -> all threes; otherwise the bucket entry at
/// hash64(seed, hash_string(participant), visit, total) mod bucket size.
ItemVector decompose_total(int total, const Buckets& buckets, std::uint64_t seed, const std::string& participant,
                           std::size_t visit);

struct LatentTrajectory {
  std::string run_id;
  Anchors anchors{};
  std::array<ItemVector, kVisits> items{};
  Trend trend = Trend::stable;
};

/// Fixed per-corpus quantities: the symptom-to-embedding basis and the
/// feature-score coefficients.
struct CorpusBasis {
  std::vector<std::array<double, kSymptoms>> embed_basis;     ///< d_e rows
  std::array<std::array<double, kSymptoms>, kFeatureCount> feature_weights{};
  std::array<double, kFeatureCount> feature_scale{};
  std::array<double, kFeatureCount> feature_offset{};
  std::array<bool, kSymptoms> history_mask{};
};
CorpusBasis make_basis(const GeneratorConfig& cfg);

/// Symptom levels a session expresses: y_t for observable symptoms; for
/// history-dependent ones the next visit's level (0 at the last visit).
std::array<double, kSymptoms> expressed_vector(const ItemVector& current, const std::optional<ItemVector>& next,
                                               const std::array<bool, kSymptoms>& history_mask);

/// Alternating counselor/client turns. Client turns embed B s + noise,
/// counselor turns are noise; features are clip(a_i (s . w_i) + b_i + noise, 0, 10).
/// Labels are left empty; latent_items holds `current`.
data::SessionRecord synthesize_session(const ItemVector& current, const std::optional<ItemVector>& next,
                                       std::size_t visit, const std::string& client_id, const CorpusBasis& basis,
                                       const GeneratorConfig& cfg, Rng rng);

/// Symptomwise mean over self-report passes; total is the sum of the means.
data::Labels average_passes(const std::vector<ItemVector>& passes);

/// Each of `passes` passes moves each item by +-1 with probability p_flip
/// (clipped to [0, 3]); labels are the per-item means, total their sum.
data::Labels simulate_self_report(const ItemVector& latent, std::size_t passes, double p_flip, Rng rng);

struct GeneratedCorpus {
  data::Corpus corpus;
  data::SplitManifest manifest;
  std::vector<LatentTrajectory> latents;
};

/// n_clients five-visit trajectories with trend classes balanced by client index.
GeneratedCorpus generate_corpus(const GeneratorConfig& cfg);

/// Writes corpus.jsonl and split_manifest.json into `dir`.
void write_corpus(const GeneratedCorpus& g, const std::filesystem::path& dir);

}  // namespace emotrack::synth
