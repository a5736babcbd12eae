#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "emotrack/config.hpp"
#include "emotrack/data.hpp"
#include "emotrack/params.hpp"
#include "emotrack/training.hpp"

namespace emotrack::eval {

using num::ParamStore;

/// Mean absolute difference. Throws std::invalid_argument on empty or mismatched input.
double mae(const std::vector<double>& predictions, const std::vector<double>& targets);

struct TaggedResult {
  int session_index = 1;
  double prediction = 0.0;
  double target = 0.0;
};

/// MAE per session index; indices without results are absent.
std::map<int, double> per_session_mae(const std::vector<TaggedResult>& results);

struct SeedSummary {
  double mean = 0.0;
  double std = 0.0;  ///< sample standard deviation (n - 1)
};
/// Throws std::invalid_argument for fewer than two values.
SeedSummary aggregate_seeds(const std::vector<double>& values);

struct PredictionRecord {
  std::string run_id;
  int session_index = 1;
  data::Items items{};
  double total = 0.0;
  data::Items target_items{};
  double target_total = 0.0;
};

/// One model on one split.
struct EvalReport {
  std::string split;
  std::uint64_t seed = 0;
  double overall_mae = 0.0;
  std::map<int, double> per_session_mae;
  std::optional<data::Items> symptom_mae;
  std::vector<PredictionRecord> predictions;
  std::string config_fingerprint;
};

/// Predicts every example in eval mode and scores totals against target_items.
/// Throws DataError when the set is empty or an example has no target.
EvalReport evaluate(const ParamStore& params, const ModelConfig& cfg, const std::vector<data::Example>& examples);

nlohmann::json to_json(const EvalReport& r);

/// Several seeds of the same configuration.
struct MultiSeedReport {
  std::vector<std::uint64_t> seeds;
  std::vector<double> per_seed_mae;
  double mean_mae = 0.0;
  std::optional<double> std_mae;  ///< absent with a single seed
  std::map<int, double> per_session_mean_mae;
  std::string config_fingerprint;
  std::vector<EvalReport> reports;
};
MultiSeedReport combine(std::vector<EvalReport> reports);
nlohmann::json to_json(const MultiSeedReport& r);

// ---- experiments -------------------------------------------------------------------

/// Model-ready splits for one configuration. Feature statistics come from the
/// training split only.
struct PreparedData {
  data::FeatureStats stats;
  std::vector<data::Example> train;
  std::vector<data::Example> val;
  std::vector<data::Example> test;
};
PreparedData prepare(const data::Corpus& corpus, const data::SplitManifest& manifest, const ModelConfig& cfg);

/// Copies the corpus dimensions (embed_dim, num_features) into the model config.
TrainConfig bind_corpus(TrainConfig cfg, const data::Corpus& corpus);

struct RunOutcome {
  training::TrainResult training;
  EvalReport report;
};
/// Trains with cfg (seed taken from cfg.seed) and evaluates the best parameters on the test split.
RunOutcome run_experiment(const PreparedData& data, const TrainConfig& cfg);

/// Trains and evaluates one model per seed; `jobs` > 1 runs seeds concurrently.
MultiSeedReport run_seeds(const data::Corpus& corpus, const data::SplitManifest& manifest, const TrainConfig& base,
                          const std::vector<std::uint64_t>& seeds, std::size_t jobs = 1);

// ---- ablations ---------------------------------------------------------------------

/// Known axes: input-source, speaker-view, enc-dec-layers, history-dropout,
/// N_max, memory-mechanism, memory-slots, lambda-sym, readout.
const std::vector<std::string>& ablation_axes();
/// Default grid for an axis. Throws ConfigError for an unknown axis.
std::vector<std::string> default_grid(const std::string& axis);
/// Base config with one grid value applied. enc-dec-layers values are "ENC:DEC".
/// Throws ConfigError for an unknown axis or a malformed value.
TrainConfig apply_axis(TrainConfig base, const std::string& axis, const std::string& value);

struct AblationRow {
  std::string value;
  MultiSeedReport result;
};
struct AblationTable {
  std::string axis;
  std::vector<AblationRow> rows;  ///< in grid order
};

/// One model per (grid point, seed), evaluated on the test split. Work units
/// may run on `jobs` threads; results land in grid-then-seed order regardless.
AblationTable run_ablation(const std::string& axis, const std::vector<std::string>& grid, const TrainConfig& base,
                           const data::Corpus& corpus, const data::SplitManifest& manifest,
                           const std::vector<std::uint64_t>& seeds, std::size_t jobs = 1);

nlohmann::json to_json(const AblationTable& t);
/// Header: axis_value,n_seeds,mae_mean,mae_std,mae_seed_<s>...,mae_session_<k>...
/// mae_std is empty for a single seed.
std::string to_csv(const AblationTable& t);

}  // namespace emotrack::eval
