#include "emotrack/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "emotrack/errors.hpp"

namespace emotrack::synth {

std::string to_string(Trend t) {
  switch (t) {
    case Trend::stable: return "stable";
    case Trend::improving: return "improving";
    case Trend::worsening: return "worsening";
    case Trend::fluctuating: return "fluctuating";
  }
  return "stable";
}

Trend classify_trend(const Anchors& a) {
  const int delta = a.back() - a.front();
  if (delta <= -3) return Trend::improving;
  if (delta >= 3) return Trend::worsening;
  const auto [lo, hi] = std::minmax_element(a.begin(), a.end());
  const bool nondecreasing = std::is_sorted(a.begin(), a.end());
  const bool nonincreasing = std::is_sorted(a.begin(), a.end(), std::greater<>());
  if (*hi - *lo >= 5 && !nondecreasing && !nonincreasing) return Trend::fluctuating;
  return Trend::stable;
}

// ---- config -------------------------------------------------------------------

void GeneratorConfig::validate() const {
  if (n_clients == 0) throw ConfigError("config key 'n_clients': must be positive");
  if (client_turns == 0) throw ConfigError("config key 'client_turns': must be positive");
  if (embed_dim == 0) throw ConfigError("config key 'embed_dim': must be positive");
  if (history_fraction < 0.0 || history_fraction > 1.0) {
    throw ConfigError("config key 'history_fraction': must lie in [0, 1]");
  }
  if (history_symptoms) {
    std::set<std::size_t> seen;
    for (auto j : *history_symptoms) {
      if (j >= kSymptoms || !seen.insert(j).second) {
        throw ConfigError("config key 'history_symptoms': indices must be distinct and in 0..7");
      }
    }
  }
  if (embed_noise < 0.0) throw ConfigError("config key 'embed_noise': must be non-negative");
  if (counselor_noise < 0.0) throw ConfigError("config key 'counselor_noise': must be non-negative");
  if (feature_noise < 0.0) throw ConfigError("config key 'feature_noise': must be non-negative");
  if (p_flip < 0.0 || p_flip > 1.0) throw ConfigError("config key 'p_flip': must lie in [0, 1]");
  if (self_report_passes == 0) throw ConfigError("config key 'self_report_passes': must be at least 1");
  if (bucket_size == 0) throw ConfigError("config key 'bucket_size': must be positive");
  for (double r : split_ratios) {
    if (r < 0.0) throw ConfigError("config key 'split_ratios': ratios must be non-negative");
  }
  if (std::abs(split_ratios[0] + split_ratios[1] + split_ratios[2] - 1.0) > 1e-9) {
    throw ConfigError("config key 'split_ratios': ratios must sum to 1");
  }
}

std::array<bool, kSymptoms> GeneratorConfig::history_mask() const {
  std::array<bool, kSymptoms> mask{};
  if (history_symptoms) {
    for (auto j : *history_symptoms) mask[j] = true;
    return mask;
  }
  const auto n = static_cast<std::size_t>(std::lround(history_fraction * static_cast<double>(kSymptoms)));
  std::vector<std::size_t> order(kSymptoms);
  std::iota(order.begin(), order.end(), 0);
  Rng(seed).split("history-symptoms").shuffle(order);
  for (std::size_t i = 0; i < n; ++i) mask[order[i]] = true;
  return mask;
}

GeneratorConfig generator_config_from(const KeyValueConfig& kv, GeneratorConfig c) {
  if (auto v = kv.get_uint("n_clients")) c.n_clients = *v;
  if (auto v = kv.get_uint("client_turns")) c.client_turns = *v;
  if (auto v = kv.get_uint("counselor_turns")) c.counselor_turns = *v;
  if (auto v = kv.get_uint("embed_dim")) c.embed_dim = *v;
  if (auto v = kv.get_double("history_fraction")) c.history_fraction = *v;
  if (auto v = kv.get_double_list("history_symptoms")) {
    std::vector<std::size_t> idx;
    for (double x : *v) {
      if (x < 0.0 || x != std::floor(x)) throw ConfigError("config key 'history_symptoms': expected integer indices");
      idx.push_back(static_cast<std::size_t>(x));
    }
    c.history_symptoms = idx;
  }
  if (auto v = kv.get_double("embed_noise")) c.embed_noise = *v;
  if (auto v = kv.get_double("counselor_noise")) c.counselor_noise = *v;
  if (auto v = kv.get_double("feature_noise")) c.feature_noise = *v;
  if (auto v = kv.get_double("p_flip")) c.p_flip = *v;
  if (auto v = kv.get_uint("self_report_passes")) c.self_report_passes = *v;
  if (auto v = kv.get_uint("bucket_size")) c.bucket_size = *v;
  if (auto v = kv.get_uint("seed")) c.seed = *v;
  if (auto v = kv.get_double_list("split_ratios")) {
    if (v->size() != 3) throw ConfigError("config key 'split_ratios': expected three comma-separated values");
    c.split_ratios = {(*v)[0], (*v)[1], (*v)[2]};
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const GeneratorConfig& c) {
  nlohmann::json j{{"n_clients", c.n_clients},
                   {"client_turns", c.client_turns},
                   {"counselor_turns", c.counselor_turns},
                   {"embed_dim", c.embed_dim},
                   {"history_fraction", c.history_fraction},
                   {"embed_noise", c.embed_noise},
                   {"counselor_noise", c.counselor_noise},
                   {"feature_noise", c.feature_noise},
                   {"p_flip", c.p_flip},
                   {"self_report_passes", c.self_report_passes},
                   {"bucket_size", c.bucket_size},
                   {"seed", c.seed},
                   {"split_ratios", c.split_ratios}};
  j["history_symptoms"] = c.history_symptoms ? nlohmann::json(*c.history_symptoms) : nlohmann::json(nullptr);
  return j;
}

// ---- anchors and decomposition -----------------------------------------------------

Anchors reconstruct_anchor_chain(const std::array<Window, kVisits - 1>& windows) {
  for (const auto& [start, end] : windows) {
    if (start < 0 || start > 24 || end < 0 || end > 24) {
      throw DataError("quarterly scores must lie in [0, 24], got (" + std::to_string(start) + ", " +
                      std::to_string(end) + ")");
    }
  }
  Anchors a{};
  a[0] = windows[0].first;
  for (std::size_t k = 0; k < windows.size(); ++k) {
    const int end = windows[k].second;
    if (k + 1 < windows.size() && windows[k + 1].first != end) {
      a[k + 1] = (end + windows[k + 1].first + 1) / 2;  // round half up; both values are non-negative
    } else {
      a[k + 1] = end;
    }
  }
  return a;
}

Buckets build_buckets(std::uint64_t seed, std::size_t per_total) {
  Buckets b;
  for (std::uint32_t code = 0; code < (1u << (2 * kSymptoms)); ++code) {
    ItemVector v{};
    int total = 0;
    for (std::size_t j = 0; j < kSymptoms; ++j) {
      v[j] = static_cast<int>((code >> (2 * j)) & 3u);
      total += v[j];
    }
    b[static_cast<std::size_t>(total)].push_back(v);
  }
  const Rng root = Rng(seed).split("bucket");
  for (std::size_t t = 0; t < b.size(); ++t) {
    Rng r = root.split(t);
    r.shuffle(b[t]);
    if (b[t].size() > per_total) b[t].resize(per_total);
  }
  return b;
}

ItemVector decompose_total(int total, const Buckets& buckets, std::uint64_t seed, const std::string& participant,
                           std::size_t visit) {
  if (total < 0 || total > 24) throw DataError("PHQ-8 total out of range: " + std::to_string(total));
  if (total == 0) return ItemVector{};
  if (total == 24) {
    ItemVector v;
    v.fill(3);
    return v;
  }
  const auto& bucket = buckets[static_cast<std::size_t>(total)];
  if (bucket.empty()) throw DataError("no candidate item vectors for total " + std::to_string(total));
  const std::uint64_t h = hash64({seed, hash_string(participant), visit, static_cast<std::uint64_t>(total)});
  return bucket[h % bucket.size()];
}

// ---- sessions ----------------------------------------------------------------------

CorpusBasis make_basis(const GeneratorConfig& cfg) {
  CorpusBasis b;
  const Rng root = Rng(cfg.seed).split("synth").split("basis");
  Rng er = root.split("embedding");
  b.embed_basis.resize(cfg.embed_dim);
  for (auto& row : b.embed_basis)
    for (auto& v : row) v = er.normal();

  Rng fr = root.split("features");
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    auto& w = b.feature_weights[i];
    if (i < kSymptoms) {
      // Symptom indicators: mostly their own symptom with a little spill-over.
      for (std::size_t j = 0; j < kSymptoms; ++j) w[j] = (j == i ? 1.0 : 0.0) + 0.1 * std::abs(fr.normal());
      b.feature_scale[i] = 2.2 + 0.6 * fr.uniform();
      b.feature_offset[i] = fr.uniform();
    } else {
      double sum = 0.0;
      for (auto& v : w) sum += (v = std::abs(fr.normal()));
      for (auto& v : w) v /= sum;
      b.feature_scale[i] = 1.5 + 1.5 * fr.uniform();
      b.feature_offset[i] = 2.0 * fr.uniform();
    }
  }
  b.history_mask = cfg.history_mask();
  return b;
}

std::array<double, kSymptoms> expressed_vector(const ItemVector& current, const std::optional<ItemVector>& next,
                                               const std::array<bool, kSymptoms>& history_mask) {
  std::array<double, kSymptoms> s{};
  for (std::size_t j = 0; j < kSymptoms; ++j) {
    if (!history_mask[j]) s[j] = current[j];
    else s[j] = next ? (*next)[j] : 0.0;
  }
  return s;
}

data::SessionRecord synthesize_session(const ItemVector& current, const std::optional<ItemVector>& next,
                                       std::size_t visit, const std::string& client_id, const CorpusBasis& basis,
                                       const GeneratorConfig& cfg, Rng rng) {
  const auto s = expressed_vector(current, next, basis.history_mask);
  data::SessionRecord rec;
  rec.client_id = client_id;
  rec.session_index = static_cast<int>(visit);

  Rng turn_rng = rng.split("turns");
  const std::size_t rounds = std::max(cfg.client_turns, cfg.counselor_turns);
  for (std::size_t r = 0; r < rounds; ++r) {
    if (r < cfg.counselor_turns) {
      data::Turn t{data::Speaker::counselor, std::vector<double>(cfg.embed_dim), std::nullopt};
      for (auto& v : t.embedding) v = cfg.counselor_noise * turn_rng.normal();
      rec.turns.push_back(std::move(t));
    }
    if (r < cfg.client_turns) {
      data::Turn t{data::Speaker::client, std::vector<double>(cfg.embed_dim), std::nullopt};
      for (std::size_t k = 0; k < cfg.embed_dim; ++k) {
        double v = 0.0;
        for (std::size_t j = 0; j < kSymptoms; ++j) v += basis.embed_basis[k][j] * s[j];
        t.embedding[k] = v + cfg.embed_noise * turn_rng.normal();
      }
      rec.turns.push_back(std::move(t));
    }
  }

  Rng feat_rng = rng.split("features");
  rec.features.resize(kFeatureCount);
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < kSymptoms; ++j) dot += basis.feature_weights[i][j] * s[j];
    const double raw = basis.feature_scale[i] * dot + basis.feature_offset[i] + cfg.feature_noise * feat_rng.normal();
    rec.features[i] = std::clamp(raw, 0.0, 10.0);
  }

  data::Items latent{};
  for (std::size_t j = 0; j < kSymptoms; ++j) latent[j] = current[j];
  rec.latent_items = latent;
  return rec;
}

data::Labels average_passes(const std::vector<ItemVector>& passes) {
  if (passes.empty()) throw std::invalid_argument("self-report needs at least one pass");
  data::Labels l;
  for (const auto& p : passes)
    for (std::size_t j = 0; j < kSymptoms; ++j) l.items[j] += p[j];
  l.total = 0.0;
  for (auto& v : l.items) {
    v /= static_cast<double>(passes.size());
    l.total += v;
  }
  return l;
}

data::Labels simulate_self_report(const ItemVector& latent, std::size_t passes, double p_flip, Rng rng) {
  if (passes == 0) throw std::invalid_argument("self-report needs at least one pass");
  std::vector<ItemVector> runs(passes, latent);
  for (auto& run : runs) {
    for (auto& v : run) {
      if (rng.uniform() < p_flip) v += rng.uniform() < 0.5 ? -1 : 1;
      v = std::clamp(v, 0, 3);
    }
  }
  return average_passes(runs);
}

// ---- corpus ---------------------------------------------------------------------------

namespace {

Anchors propose_anchors(Trend target, Rng& r) {
  Anchors a{};
  auto clamp24 = [](int v) { return std::clamp(v, 0, 24); };
  auto jitter = [&r]() { return static_cast<int>(r.below(3)) - 1; };
  switch (target) {
    case Trend::stable: {
      const int base = static_cast<int>(r.below(25));
      for (auto& v : a) v = clamp24(base + static_cast<int>(r.below(5)) - 2);
      break;
    }
    case Trend::improving:
    case Trend::worsening: {
      const bool down = target == Trend::improving;
      const int start = down ? 6 + static_cast<int>(r.below(19)) : static_cast<int>(r.below(19));
      const int room = down ? start : 24 - start;
      const int change = 3 + static_cast<int>(r.below(static_cast<std::uint64_t>(std::min(room, 14) - 2)));
      for (std::size_t k = 0; k < kVisits; ++k) {
        const double frac = static_cast<double>(k) / static_cast<double>(kVisits - 1);
        const int step = static_cast<int>(std::lround(frac * change));
        a[k] = clamp24((down ? start - step : start + step) + (k == 0 || k + 1 == kVisits ? 0 : jitter()));
      }
      break;
    }
    case Trend::fluctuating: {
      const int base = 4 + static_cast<int>(r.below(17));
      const int amp = 3 + static_cast<int>(r.below(3));
      const int sign = r.uniform() < 0.5 ? -1 : 1;
      for (std::size_t k = 0; k < kVisits; ++k) a[k] = clamp24(base + (k % 2 == 0 ? sign : -sign) * amp + jitter());
      break;
    }
  }
  return a;
}

/// Quarterly windows around a proposed chain; about a third of the shared
/// boundaries disagree by one point, as separately measured questionnaires do.
std::array<Window, kVisits - 1> windows_from(const Anchors& a, Rng& r) {
  std::array<Window, kVisits - 1> w{};
  for (std::size_t k = 0; k < w.size(); ++k) {
    int start = a[k];
    if (k > 0 && r.uniform() < 0.3) start = std::clamp(start + (r.uniform() < 0.5 ? -1 : 1), 0, 24);
    w[k] = {start, a[k + 1]};
  }
  return w;
}

}  // namespace

GeneratedCorpus generate_corpus(const GeneratorConfig& cfg) {
  cfg.validate();
  const CorpusBasis basis = make_basis(cfg);
  const Buckets buckets = build_buckets(cfg.seed, cfg.bucket_size);
  const Rng clients = Rng(cfg.seed).split("synth").split("client");
  const std::size_t width = std::max<std::size_t>(4, std::to_string(cfg.n_clients - 1).size());

  GeneratedCorpus g;
  g.corpus.embed_dim = cfg.embed_dim;
  g.corpus.num_features = kFeatureCount;
  std::vector<std::string> ids;
  for (std::size_t c = 0; c < cfg.n_clients; ++c) {
    std::string num = std::to_string(c);
    const std::string id = "client_" + std::string(width - num.size(), '0') + num;
    const Rng crng = clients.split(c);

    LatentTrajectory lt;
    lt.run_id = id;
    const auto target = static_cast<Trend>(c % 4);
    Rng anchor_rng = crng.split("anchors");
    for (int attempt = 0;; ++attempt) {
      if (attempt > 10000) throw std::logic_error("trend rejection sampling did not converge");
      const auto proposal = propose_anchors(target, anchor_rng);
      lt.anchors = reconstruct_anchor_chain(windows_from(proposal, anchor_rng));
      if (classify_trend(lt.anchors) == target) break;
    }
    lt.trend = target;
    for (std::size_t t = 0; t < kVisits; ++t) lt.items[t] = decompose_total(lt.anchors[t], buckets, cfg.seed, id, t + 1);

    data::TrajectoryRecord traj{id, {}};
    for (std::size_t t = 0; t < kVisits; ++t) {
      std::optional<ItemVector> next;
      if (t + 1 < kVisits) next = lt.items[t + 1];
      auto rec = synthesize_session(lt.items[t], next, t + 1, id, basis, cfg, crng.split("session").split(t));
      rec.labels = simulate_self_report(lt.items[t], cfg.self_report_passes, cfg.p_flip,
                                        crng.split("self-report").split(t));
      traj.sessions.push_back(std::move(rec));
    }
    g.corpus.trajectories.push_back(std::move(traj));
    g.latents.push_back(lt);
    ids.push_back(id);
  }
  g.manifest = data::build_split_manifest(ids, cfg.seed, cfg.split_ratios);
  return g;
}

void write_corpus(const GeneratedCorpus& g, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  data::save_dataset(g.corpus, dir / "corpus.jsonl");
  data::save_manifest(g.manifest, dir / "split_manifest.json");
}

}  // namespace emotrack::synth
