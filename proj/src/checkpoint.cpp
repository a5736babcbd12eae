#include "emotrack/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "emotrack/errors.hpp"

namespace emotrack {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'E', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("checkpoint " + path + " is truncated");
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.params) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.size()}});
    offset += t.size();
  }
  nlohmann::json header{{"model", to_json(ckpt.model)}, {"seed", ckpt.seed}, {"extra", ckpt.extra}, {"tensors", tensors}};
  header["feature_stats"] = ckpt.feature_stats
                                ? nlohmann::json{{"mean", ckpt.feature_stats->mean}, {"std", ckpt.feature_stats->std}}
                                : nlohmann::json(nullptr);
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : ckpt.params) {
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw DataError("write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + p);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw DataError(p + " is not a model checkpoint");
  const auto version = get<std::uint32_t>(in, p);
  if (version != kVersion) throw DataError("checkpoint " + p + " has unsupported version " + std::to_string(version));
  const auto header_len = get<std::uint64_t>(in, p);
  if (header_len > (1ULL << 30)) throw DataError("checkpoint " + p + " header is implausibly large");
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) throw DataError("checkpoint " + p + " is truncated");

  Checkpoint ckpt;
  std::vector<double> data;
  try {
    const auto header = nlohmann::json::parse(text);
    ckpt.model = model_config_from_json(header.at("model"));
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    if (header.contains("extra")) ckpt.extra = header["extra"];
    if (!header.at("feature_stats").is_null()) {
      data::FeatureStats st;
      st.mean = header["feature_stats"].at("mean").get<std::vector<double>>();
      st.std = header["feature_stats"].at("std").get<std::vector<double>>();
      ckpt.feature_stats = st;
    }
    std::size_t total = 0;
    for (const auto& t : header.at("tensors")) total += t.at("count").get<std::size_t>();
    data.resize(total);
    if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(total * sizeof(double)))) {
      throw DataError("checkpoint " + p + " is truncated");
    }
    for (const auto& t : header.at("tensors")) {
      auto shape = t.at("shape").get<num::Tensor::Shape>();
      const auto offset = t.at("offset").get<std::size_t>();
      const auto count = t.at("count").get<std::size_t>();
      if (num::shape_numel(shape) != count || offset + count > total) {
        throw DataError("checkpoint " + p + ": inconsistent entry for tensor " + t.at("name").get<std::string>());
      }
      ckpt.params.add(t.at("name").get<std::string>(),
                      num::Tensor(std::move(shape), std::vector<double>(data.begin() + static_cast<std::ptrdiff_t>(offset),
                                                                        data.begin() + static_cast<std::ptrdiff_t>(offset + count))));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + p + " has a malformed header: " + e.what());
  }
  return ckpt;
}

}  // namespace emotrack
