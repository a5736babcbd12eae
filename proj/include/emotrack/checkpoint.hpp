#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "emotrack/config.hpp"
#include "emotrack/data.hpp"
#include "emotrack/params.hpp"

namespace emotrack {

/// Model checkpoint file, little-endian:
///   "EMCK" | version u32 (=1) | header length u64 | UTF-8 JSON header | tensor data
/// The header holds {"model": ModelConfig, "seed": u64, "feature_stats": {mean, std} or null,
/// "extra": object, "tensors": [{"name", "shape", "offset", "count"}]} where offset and count
/// are in float64 elements from the start of the data section. Data is raw IEEE-754 binary64.
struct Checkpoint {
  ModelConfig model;
  std::uint64_t seed = 0;
  std::optional<data::FeatureStats> feature_stats;
  num::ParamStore params;
  nlohmann::json extra = nlohmann::json::object();
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws DataError on a malformed or truncated file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace emotrack
