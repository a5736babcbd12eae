#include "emotrack/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <unordered_map>

#include "emotrack/errors.hpp"
#include "emotrack/rng.hpp"

namespace emotrack::data {

using nlohmann::json;

std::size_t Corpus::session_count() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.sessions.size();
  return n;
}

double total_score(const Items& items) {
  double total = 0.0;
  for (std::size_t j = 0; j < items.size(); ++j) {
    if (!(items[j] >= 0.0 && items[j] <= 3.0)) {
      throw DataError("PHQ-8 item " + std::to_string(j + 1) + " out of range [0, 3]: " + std::to_string(items[j]));
    }
    total += items[j];
  }
  return total;
}

// ---- sidecar ----------------------------------------------------------------------

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError("embedding sidecar truncated while reading " + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

EmbeddingMatrix read_embedding_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open embedding sidecar " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "EMOT", 4) != 0) {
    throw DataError("embedding sidecar " + path.string() + ": bad magic (expected EMOT)");
  }
  const std::uint32_t version = get_u32(in, "version");
  if (version != 1) throw DataError("embedding sidecar " + path.string() + ": unsupported version " + std::to_string(version));
  EmbeddingMatrix m;
  m.rows = get_u32(in, "rows");
  m.cols = get_u32(in, "cols");
  m.values.resize(static_cast<std::size_t>(m.rows) * m.cols);
  for (auto& v : m.values) {
    std::uint32_t bits = get_u32(in, "values");
    std::memcpy(&v, &bits, sizeof v);
  }
  return m;
}

void write_embedding_sidecar(const EmbeddingMatrix& m, const std::filesystem::path& path) {
  if (m.values.size() != static_cast<std::size_t>(m.rows) * m.cols) {
    throw DataError("embedding sidecar: value count does not match rows x cols");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write embedding sidecar " + path.string());
  out.write("EMOT", 4);
  put_u32(out, 1);
  put_u32(out, m.rows);
  put_u32(out, m.cols);
  for (float v : m.values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_u32(out, bits);
  }
}

// ---- JSONL --------------------------------------------------------------------------

namespace {

struct LineContext {
  std::string file;
  std::size_t line;
  std::string where() const { return file + ":" + std::to_string(line); }
};

[[noreturn]] void fail(const LineContext& ctx, const std::string& msg) { throw DataError(ctx.where() + ": " + msg); }

double finite_number(const json& v, const LineContext& ctx, const std::string& field) {
  if (!v.is_number()) fail(ctx, "field '" + field + "' must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) fail(ctx, "field '" + field + "' is not finite");
  return x;
}

Items parse_items(const json& v, const LineContext& ctx, const std::string& field) {
  if (!v.is_array()) fail(ctx, "field '" + field + "' must be an array of 8 numbers");
  if (v.size() != kSymptoms) {
    fail(ctx, "field '" + field + "' must have 8 entries, got " + std::to_string(v.size()));
  }
  Items items{};
  for (std::size_t j = 0; j < kSymptoms; ++j) {
    items[j] = finite_number(v[j], ctx, field);
    if (items[j] < 0.0 || items[j] > 3.0) fail(ctx, "field '" + field + "' entry " + std::to_string(j) + " outside [0, 3]");
  }
  return items;
}

SessionRecord parse_session(const json& j, const LineContext& ctx, std::size_t embed_dim, std::size_t num_features,
                            const EmbeddingMatrix* sidecar) {
  if (!j.is_object()) fail(ctx, "session line must be a JSON object");
  SessionRecord s;
  if (!j.contains("client_id") || !j["client_id"].is_string()) fail(ctx, "field 'client_id' must be a string");
  s.client_id = j["client_id"].get<std::string>();
  if (!j.contains("session_index") || !j["session_index"].is_number_integer()) {
    fail(ctx, "field 'session_index' must be an integer");
  }
  s.session_index = j["session_index"].get<int>();
  if (s.session_index < 1) fail(ctx, "field 'session_index' must be >= 1");
  const std::string who = "session " + std::to_string(s.session_index) + " of client '" + s.client_id + "'";

  if (!j.contains("turns") || !j["turns"].is_array()) fail(ctx, "field 'turns' must be an array");
  std::size_t turn_no = 0;
  for (const auto& tj : j["turns"]) {
    const std::string tf = "turns[" + std::to_string(turn_no++) + "]";
    if (!tj.is_object()) fail(ctx, tf + " must be an object");
    Turn t;
    const auto speaker = tj.value("speaker", std::string());
    if (speaker == "client") t.speaker = Speaker::client;
    else if (speaker == "counselor") t.speaker = Speaker::counselor;
    else fail(ctx, tf + ".speaker must be \"client\" or \"counselor\"");
    if (tj.contains("embedding")) {
      const auto& ej = tj["embedding"];
      if (!ej.is_array()) fail(ctx, tf + ".embedding must be an array");
      if (ej.size() != embed_dim) {
        fail(ctx, "embedding length " + std::to_string(ej.size()) + " != d_e " + std::to_string(embed_dim) + " in " + tf +
                      " of " + who);
      }
      t.embedding.reserve(embed_dim);
      for (const auto& x : ej) t.embedding.push_back(finite_number(x, ctx, tf + ".embedding"));
    } else if (tj.contains("embedding_ref")) {
      if (sidecar == nullptr) fail(ctx, tf + ".embedding_ref used but the header names no embedding_sidecar");
      if (!tj["embedding_ref"].is_number_unsigned()) fail(ctx, tf + ".embedding_ref must be a non-negative integer");
      const auto row = tj["embedding_ref"].get<std::size_t>();
      if (row >= sidecar->rows) fail(ctx, tf + ".embedding_ref " + std::to_string(row) + " beyond sidecar rows");
      t.embedding.resize(embed_dim);
      for (std::size_t c = 0; c < embed_dim; ++c) t.embedding[c] = sidecar->values[row * embed_dim + c];
      for (double v : t.embedding) {
        if (!std::isfinite(v)) fail(ctx, tf + " sidecar row is not finite");
      }
    } else {
      fail(ctx, tf + " needs 'embedding' or 'embedding_ref'");
    }
    if (tj.contains("text") && !tj["text"].is_null()) {
      if (!tj["text"].is_string()) fail(ctx, tf + ".text must be a string");
      t.text = tj["text"].get<std::string>();
    }
    s.turns.push_back(std::move(t));
  }

  if (!j.contains("features") || !j["features"].is_array()) fail(ctx, "field 'features' must be an array");
  if (j["features"].size() != num_features) {
    fail(ctx, "field 'features' has " + std::to_string(j["features"].size()) + " entries, header declares F=" +
                  std::to_string(num_features));
  }
  for (const auto& x : j["features"]) {
    const double v = finite_number(x, ctx, "features");
    if (v < 0.0 || v > 10.0) fail(ctx, "field 'features' value outside [0, 10]");
    s.features.push_back(v);
  }

  if (j.contains("labels") && !j["labels"].is_null()) {
    const auto& lj = j["labels"];
    if (!lj.is_object() || !lj.contains("items") || !lj.contains("total")) {
      fail(ctx, "field 'labels' must be {items, total} or null");
    }
    Labels l;
    l.items = parse_items(lj["items"], ctx, "labels.items");
    l.total = finite_number(lj["total"], ctx, "labels.total");
    double sum = 0.0;
    for (double v : l.items) sum += v;
    if (std::abs(sum - l.total) > 1e-9) fail(ctx, "field 'labels.total' differs from the sum of labels.items");
    s.labels = l;
  }
  if (j.contains("latent_items") && !j["latent_items"].is_null()) {
    s.latent_items = parse_items(j["latent_items"], ctx, "latent_items");
  }
  return s;
}

}  // namespace

Corpus load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path.string());
  Corpus corpus;
  std::unordered_map<std::string, std::size_t> by_client;
  std::optional<EmbeddingMatrix> sidecar;
  std::string line;
  LineContext ctx{path.string(), 0};
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++ctx.line;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(ctx, std::string("malformed JSON: ") + e.what());
    }
    if (!header_seen) {
      header_seen = true;
      if (!j.is_object() || !j.contains("d_e") || !j.contains("F") || !j["d_e"].is_number_unsigned() ||
          !j["F"].is_number_unsigned()) {
        fail(ctx, "first line must be the corpus header {\"d_e\": int, \"F\": int}");
      }
      corpus.embed_dim = j["d_e"].get<std::size_t>();
      corpus.num_features = j["F"].get<std::size_t>();
      if (j.contains("embedding_sidecar")) {
        auto sc_path = path.parent_path() / j["embedding_sidecar"].get<std::string>();
        sidecar = read_embedding_sidecar(sc_path);
        if (sidecar->cols != corpus.embed_dim) {
          fail(ctx, "embedding sidecar has " + std::to_string(sidecar->cols) + " columns, header declares d_e=" +
                        std::to_string(corpus.embed_dim));
        }
      }
      continue;
    }
    SessionRecord s = parse_session(j, ctx, corpus.embed_dim, corpus.num_features, sidecar ? &*sidecar : nullptr);
    auto [it, inserted] = by_client.emplace(s.client_id, corpus.trajectories.size());
    if (inserted) corpus.trajectories.push_back(TrajectoryRecord{s.client_id, {}});
    corpus.trajectories[it->second].sessions.push_back(std::move(s));
  }
  for (auto& traj : corpus.trajectories) {
    std::stable_sort(traj.sessions.begin(), traj.sessions.end(),
                     [](const auto& a, const auto& b) { return a.session_index < b.session_index; });
    for (std::size_t i = 0; i < traj.sessions.size(); ++i) {
      if (traj.sessions[i].session_index != static_cast<int>(i + 1)) {
        throw DataError(path.string() + ": client '" + traj.run_id + "' has non-contiguous session indices (expected " +
                        std::to_string(i + 1) + ", found " + std::to_string(traj.sessions[i].session_index) + ")");
      }
    }
  }
  return corpus;
}

json session_to_json(const SessionRecord& s) {
  json turns = json::array();
  for (const auto& t : s.turns) {
    json tj{{"speaker", t.speaker == Speaker::client ? "client" : "counselor"}, {"embedding", t.embedding}};
    if (t.text) tj["text"] = *t.text;
    turns.push_back(std::move(tj));
  }
  json j{{"client_id", s.client_id}, {"session_index", s.session_index}, {"turns", std::move(turns)},
         {"features", s.features}};
  j["labels"] = s.labels ? json{{"items", s.labels->items}, {"total", s.labels->total}} : json(nullptr);
  j["latent_items"] = s.latent_items ? json(*s.latent_items) : json(nullptr);
  return j;
}

void save_dataset(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset " + path.string());
  out << json{{"d_e", corpus.embed_dim}, {"F", corpus.num_features}}.dump() << '\n';
  for (const auto& traj : corpus.trajectories) {
    for (const auto& s : traj.sessions) out << session_to_json(s).dump() << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

// ---- turns -------------------------------------------------------------------------

std::vector<Turn> filter_turns(const SessionRecord& session, SpeakerView view) {
  std::vector<Turn> out;
  for (const auto& t : session.turns) {
    const bool speaker_ok = view == SpeakerView::both || (view == SpeakerView::client && t.speaker == Speaker::client) ||
                            (view == SpeakerView::counselor && t.speaker == Speaker::counselor);
    if (!speaker_ok) continue;
    if (t.text && t.text->find_first_not_of(" \t\r\n") == std::string::npos) continue;
    out.push_back(t);
  }
  if (out.empty()) {
    throw DataError("session " + std::to_string(session.session_index) + " of client '" + session.client_id +
                    "' is unusable: no " + to_string(view) + " turns remain after filtering");
  }
  return out;
}

std::vector<Turn> truncate_turns(std::vector<Turn> turns, std::size_t max_turns) {
  if (turns.size() > max_turns) turns.resize(max_turns);
  return turns;
}

// ---- features ------------------------------------------------------------------------

FeatureStats fit_feature_stats(const std::vector<const SessionRecord*>& sessions) {
  if (sessions.empty()) throw DataError("feature statistics need at least one training session");
  const std::size_t f = sessions.front()->features.size();
  FeatureStats st;
  st.mean.assign(f, 0.0);
  st.std.assign(f, 0.0);
  for (const auto* s : sessions) {
    if (s->features.size() != f) throw DataError("inconsistent feature counts across training sessions");
    for (std::size_t i = 0; i < f; ++i) st.mean[i] += s->features[i];
  }
  const double n = static_cast<double>(sessions.size());
  for (auto& m : st.mean) m /= n;
  for (const auto* s : sessions) {
    for (std::size_t i = 0; i < f; ++i) {
      const double c = s->features[i] - st.mean[i];
      st.std[i] += c * c;
    }
  }
  for (auto& sd : st.std) sd = std::max(std::sqrt(sd / n), FeatureStats::kStdFloor);
  return st;
}

std::vector<double> z_normalize(const std::vector<double>& features, const FeatureStats& stats) {
  if (features.size() != stats.mean.size()) {
    throw DataError("feature vector has " + std::to_string(features.size()) + " entries, statistics cover " +
                    std::to_string(stats.mean.size()));
  }
  std::vector<double> z(features.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = (features[i] - stats.mean[i]) / std::max(stats.std[i], FeatureStats::kStdFloor);
  return z;
}

// ---- manifest --------------------------------------------------------------------------

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw DataError("unknown split '" + s + "' (expected train|val|test)");
}

std::vector<std::string> SplitManifest::ids(Split s) const {
  std::vector<std::string> out;
  for (const auto& [id, split] : assignments)
    if (split == s) out.push_back(id);
  return out;
}

std::size_t SplitManifest::count(Split s) const {
  return static_cast<std::size_t>(
      std::count_if(assignments.begin(), assignments.end(), [s](const auto& kv) { return kv.second == s; }));
}

SplitManifest build_split_manifest(std::vector<std::string> run_ids, std::uint64_t seed, std::array<double, 3> ratios) {
  for (double r : ratios) {
    if (r < 0.0) throw ConfigError("config key 'split_ratios': ratios must be non-negative");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
    throw ConfigError("config key 'split_ratios': ratios must sum to 1");
  }
  std::sort(run_ids.begin(), run_ids.end());
  if (auto dup = std::adjacent_find(run_ids.begin(), run_ids.end()); dup != run_ids.end()) {
    throw DataError("duplicate run id in split manifest input: " + *dup);
  }
  Rng rng = Rng(seed).split("split-manifest");
  rng.shuffle(run_ids);
  const double n = static_cast<double>(run_ids.size());
  // The epsilon absorbs representation error in cumulative ratios such as 0.7 + 0.1.
  const auto n_train = static_cast<std::size_t>(std::floor(ratios[0] * n + 1e-9));
  const auto n_train_val = static_cast<std::size_t>(std::floor((ratios[0] + ratios[1]) * n + 1e-9));
  SplitManifest m;
  m.seed = seed;
  m.ratios = ratios;
  for (std::size_t i = 0; i < run_ids.size(); ++i) {
    m.assignments[run_ids[i]] = i < n_train ? Split::train : (i < n_train_val ? Split::val : Split::test);
  }
  return m;
}

json to_json(const SplitManifest& m) {
  json assignments = json::object();
  for (const auto& [id, s] : m.assignments) assignments[id] = to_string(s);
  return json{{"seed", m.seed}, {"ratios", m.ratios}, {"assignments", std::move(assignments)}};
}

SplitManifest manifest_from_json(const json& j) {
  try {
    SplitManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    auto r = j.at("ratios").get<std::vector<double>>();
    if (r.size() != 3) throw DataError("split manifest: 'ratios' must have 3 entries");
    m.ratios = {r[0], r[1], r[2]};
    for (const auto& [id, s] : j.at("assignments").items()) m.assignments[id] = parse_split(s.get<std::string>());
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("split manifest: ") + e.what());
  }
}

SplitManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split manifest " + path.string());
  try {
    return manifest_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": malformed JSON: " + e.what());
  }
}

void save_manifest(const SplitManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write split manifest " + path.string());
  out << to_json(m).dump(2) << '\n';
}

// ---- examples ------------------------------------------------------------------------------

namespace {

num::Tensor stack_embeddings(const std::vector<Turn>& turns, std::size_t embed_dim) {
  num::Tensor t({turns.size(), embed_dim});
  for (std::size_t r = 0; r < turns.size(); ++r) std::copy(turns[r].embedding.begin(), turns[r].embedding.end(), t.row(r).begin());
  return t;
}

bool assigned_to(const SplitManifest& manifest, const std::string& run_id, Split split) {
  auto it = manifest.assignments.find(run_id);
  if (it == manifest.assignments.end()) throw DataError("run id '" + run_id + "' is missing from the split manifest");
  return it->second == split;
}

}  // namespace

std::vector<const SessionRecord*> sessions_in(const Corpus& corpus, const SplitManifest& manifest, Split split) {
  std::vector<const SessionRecord*> out;
  for (const auto& traj : corpus.trajectories) {
    if (!assigned_to(manifest, traj.run_id, split)) continue;
    for (const auto& s : traj.sessions) out.push_back(&s);
  }
  return out;
}

std::vector<Example> build_examples(const Corpus& corpus, const SplitManifest& manifest, Split split,
                                    const FeatureStats& stats, const ExampleOptions& options) {
  std::vector<Example> out;
  for (const auto& traj : corpus.trajectories) {
    if (!assigned_to(manifest, traj.run_id, split)) continue;
    std::optional<num::Tensor> previous;
    for (const auto& s : traj.sessions) {
      Example ex;
      ex.run_id = traj.run_id;
      ex.session_index = s.session_index;
      ex.features_z = z_normalize(s.features, stats);
      auto turns = truncate_turns(filter_turns(s, options.view), options.max_turns);
      ex.turns = stack_embeddings(turns, corpus.embed_dim);
      ex.turn_count = turns.size();
      ex.history = previous;
      if (s.labels) ex.label_items = s.labels->items;
      if (s.latent_items) ex.target_items = s.latent_items;
      else if (s.labels) ex.target_items = s.labels->items;
      if (options.require_labels && !ex.label_items) {
        throw DataError("session " + std::to_string(s.session_index) + " of client '" + s.client_id + "' in the " +
                        to_string(split) + " split has no labels");
      }
      previous = ex.turns;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

}  // namespace emotrack::data
