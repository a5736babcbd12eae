#include "emotrack/eval.hpp"

#include <atomic>
#include <cmath>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "emotrack/errors.hpp"
#include "emotrack/model.hpp"

namespace emotrack::eval {

double mae(const std::vector<double>& predictions, const std::vector<double>& targets) {
  if (predictions.size() != targets.size()) {
    throw std::invalid_argument("mae: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(targets.size()) + " targets");
  }
  if (predictions.empty()) throw std::invalid_argument("mae: no values");
  double s = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) s += std::abs(predictions[i] - targets[i]);
  return s / static_cast<double>(predictions.size());
}

std::map<int, double> per_session_mae(const std::vector<TaggedResult>& results) {
  std::map<int, std::pair<double, std::size_t>> acc;
  for (const auto& r : results) {
    auto& [sum, n] = acc[r.session_index];
    sum += std::abs(r.prediction - r.target);
    ++n;
  }
  std::map<int, double> out;
  for (const auto& [k, v] : acc) out[k] = v.first / static_cast<double>(v.second);
  return out;
}

SeedSummary aggregate_seeds(const std::vector<double>& values) {
  if (values.size() < 2) throw std::invalid_argument("aggregate_seeds: need at least two values");
  const double n = static_cast<double>(values.size());
  // shifted by the first value so identical inputs give exactly zero spread
  double shift = 0.0;
  for (double v : values) shift += v - values.front();
  const double mean = values.front() + shift / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

EvalReport evaluate(const ParamStore& params, const ModelConfig& cfg, const std::vector<data::Example>& examples) {
  if (examples.empty()) throw DataError("evaluation split is empty");
  EvalReport r;
  r.config_fingerprint = fingerprint(to_json(cfg));
  std::vector<double> pred, target;
  std::vector<TaggedResult> tagged;
  data::Items symptom{};
  for (const auto& ex : examples) {
    if (!ex.target_items) {
      throw DataError("session " + std::to_string(ex.session_index) + " of '" + ex.run_id + "' has no target items");
    }
    const auto p = model::predict(params, cfg, model::input_from(ex));
    PredictionRecord rec;
    rec.run_id = ex.run_id;
    rec.session_index = ex.session_index;
    std::copy(p.items.begin(), p.items.end(), rec.items.begin());
    rec.total = p.total;
    rec.target_items = *ex.target_items;
    rec.target_total = data::total_score(rec.target_items);
    for (std::size_t j = 0; j < kSymptoms; ++j) symptom[j] += std::abs(rec.items[j] - rec.target_items[j]);
    pred.push_back(rec.total);
    target.push_back(rec.target_total);
    tagged.push_back({rec.session_index, rec.total, rec.target_total});
    r.predictions.push_back(std::move(rec));
  }
  for (auto& v : symptom) v /= static_cast<double>(examples.size());
  r.overall_mae = mae(pred, target);
  r.per_session_mae = per_session_mae(tagged);
  r.symptom_mae = symptom;
  return r;
}

namespace {

nlohmann::json per_session_json(const std::map<int, double>& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : m) j[std::to_string(k)] = v;
  return j;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json preds = nlohmann::json::array();
  for (const auto& p : r.predictions) {
    preds.push_back({{"run_id", p.run_id},
                     {"session_index", p.session_index},
                     {"items", p.items},
                     {"total", p.total},
                     {"target_items", p.target_items},
                     {"target_total", p.target_total}});
  }
  nlohmann::json j{{"split", r.split},
                   {"seed", r.seed},
                   {"overall_mae", r.overall_mae},
                   {"per_session_mae", per_session_json(r.per_session_mae)},
                   {"n_sessions", r.predictions.size()},
                   {"config_fingerprint", r.config_fingerprint},
                   {"predictions", preds}};
  j["symptom_mae"] = r.symptom_mae ? nlohmann::json(*r.symptom_mae) : nlohmann::json(nullptr);
  return j;
}

MultiSeedReport combine(std::vector<EvalReport> reports) {
  if (reports.empty()) throw std::invalid_argument("combine: no reports");
  MultiSeedReport m;
  m.config_fingerprint = reports.front().config_fingerprint;
  std::map<int, std::pair<double, std::size_t>> per_index;
  for (const auto& r : reports) {
    m.seeds.push_back(r.seed);
    m.per_seed_mae.push_back(r.overall_mae);
    for (const auto& [k, v] : r.per_session_mae) {
      per_index[k].first += v;
      ++per_index[k].second;
    }
  }
  if (m.per_seed_mae.size() >= 2) {
    const auto s = aggregate_seeds(m.per_seed_mae);
    m.mean_mae = s.mean;
    m.std_mae = s.std;
  } else {
    m.mean_mae = m.per_seed_mae.front();
  }
  for (const auto& [k, v] : per_index) m.per_session_mean_mae[k] = v.first / static_cast<double>(v.second);
  m.reports = std::move(reports);
  return m;
}

nlohmann::json to_json(const MultiSeedReport& r) {
  nlohmann::json reports = nlohmann::json::array();
  for (const auto& x : r.reports) reports.push_back(to_json(x));
  nlohmann::json j{{"seeds", r.seeds},
                   {"per_seed_mae", r.per_seed_mae},
                   {"mae_mean", r.mean_mae},
                   {"per_session_mae_mean", per_session_json(r.per_session_mean_mae)},
                   {"config_fingerprint", r.config_fingerprint},
                   {"reports", reports}};
  j["mae_std"] = r.std_mae ? nlohmann::json(*r.std_mae) : nlohmann::json(nullptr);
  return j;
}

// ---- experiments ---------------------------------------------------------------------

PreparedData prepare(const data::Corpus& corpus, const data::SplitManifest& manifest, const ModelConfig& cfg) {
  PreparedData d;
  d.stats = data::fit_feature_stats(data::sessions_in(corpus, manifest, data::Split::train));
  data::ExampleOptions opt;
  opt.view = cfg.speaker_view;
  opt.max_turns = cfg.max_turns;
  opt.require_labels = true;
  d.train = data::build_examples(corpus, manifest, data::Split::train, d.stats, opt);
  d.val = data::build_examples(corpus, manifest, data::Split::val, d.stats, opt);
  opt.require_labels = false;
  d.test = data::build_examples(corpus, manifest, data::Split::test, d.stats, opt);
  return d;
}

TrainConfig bind_corpus(TrainConfig cfg, const data::Corpus& corpus) {
  cfg.model.embed_dim = corpus.embed_dim;
  cfg.model.num_features = corpus.num_features;
  return cfg;
}

namespace {

std::string run_fingerprint(TrainConfig cfg) {
  cfg.seed = 0;
  return fingerprint(to_json(cfg));
}

/// Runs tasks[i] for every i on up to `jobs` threads.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& task) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          task(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

RunOutcome run_experiment(const PreparedData& data, const TrainConfig& cfg) {
  RunOutcome out;
  out.training = training::train(data.train, data.val, cfg);
  out.report = evaluate(out.training.best_params, cfg.model, data.test);
  out.report.split = "test";
  out.report.seed = cfg.seed;
  out.report.config_fingerprint = run_fingerprint(cfg);
  return out;
}

MultiSeedReport run_seeds(const data::Corpus& corpus, const data::SplitManifest& manifest, const TrainConfig& base,
                          const std::vector<std::uint64_t>& seeds, std::size_t jobs) {
  if (seeds.empty()) throw ConfigError("config key 'seeds': at least one seed is required");
  const TrainConfig cfg = bind_corpus(base, corpus);
  cfg.validate();
  const PreparedData data = prepare(corpus, manifest, cfg.model);
  std::vector<EvalReport> reports(seeds.size());
  parallel_for(seeds.size(), jobs, [&](std::size_t i) {
    TrainConfig c = cfg;
    c.seed = seeds[i];
    reports[i] = run_experiment(data, c).report;
  });
  return combine(std::move(reports));
}

// ---- ablations -----------------------------------------------------------------------

const std::vector<std::string>& ablation_axes() {
  static const std::vector<std::string> axes{"input-source",     "speaker-view",  "enc-dec-layers",
                                             "history-dropout",  "N_max",         "memory-mechanism",
                                             "memory-slots",     "lambda-sym",    "readout"};
  return axes;
}

namespace {

std::string canonical_axis(const std::string& axis) {
  if (axis == "λ_sym" || axis == "lambda_sym") return "lambda-sym";
  if (axis == "n-max" || axis == "n_max" || axis == "N-max") return "N_max";
  for (const auto& a : ablation_axes())
    if (a == axis) return a;
  std::string known;
  for (const auto& a : ablation_axes()) known += (known.empty() ? "" : ", ") + a;
  throw ConfigError("unknown ablation axis '" + axis + "' (known: " + known + ")");
}

double parse_number(const std::string& axis, const std::string& value) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) {
    throw ConfigError("ablation axis '" + axis + "': '" + value + "' is not a number");
  }
  return v;
}

std::size_t parse_count(const std::string& axis, const std::string& value) {
  const double v = parse_number(axis, value);
  if (v < 0.0 || v != std::floor(v)) {
    throw ConfigError("ablation axis '" + axis + "': '" + value + "' is not a non-negative integer");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

std::vector<std::string> default_grid(const std::string& axis) {
  const std::string a = canonical_axis(axis);
  if (a == "input-source") return {"both", "features", "dialogue"};
  if (a == "speaker-view") return {"client", "counselor", "both"};
  if (a == "enc-dec-layers") return {"1:2", "2:4", "3:6"};
  if (a == "history-dropout") return {"0", "0.1", "0.3"};
  if (a == "N_max") return {"40", "80", "120"};
  if (a == "memory-mechanism") return {"none", "summary", "summary+retrieval"};
  if (a == "memory-slots") return {"8", "16", "32"};
  if (a == "lambda-sym") return {"0", "0.5", "1"};
  return {"symptom-query", "mean-pooled"};
}

TrainConfig apply_axis(TrainConfig c, const std::string& axis, const std::string& value) {
  const std::string a = canonical_axis(axis);
  if (a == "input-source") {
    c.model.input_source = parse_input_source(value);
  } else if (a == "speaker-view") {
    c.model.speaker_view = parse_speaker_view(value);
  } else if (a == "enc-dec-layers") {
    const auto colon = value.find(':');
    if (colon == std::string::npos) throw ConfigError("ablation axis 'enc-dec-layers': expected ENC:DEC, got '" + value + "'");
    c.model.enc_layers = parse_count(a, value.substr(0, colon));
    c.model.dec_layers = parse_count(a, value.substr(colon + 1));
  } else if (a == "history-dropout") {
    c.p_hist = parse_number(a, value);
  } else if (a == "N_max") {
    c.model.max_turns = parse_count(a, value);
  } else if (a == "memory-mechanism") {
    c.model.memory = parse_memory_mode(value);
  } else if (a == "memory-slots") {
    c.model.memory_slots = parse_count(a, value);
  } else if (a == "lambda-sym") {
    c.lambda_sym = parse_number(a, value);
  } else {
    c.model.readout = parse_readout(value);
  }
  return c;
}

AblationTable run_ablation(const std::string& axis, const std::vector<std::string>& grid, const TrainConfig& base,
                           const data::Corpus& corpus, const data::SplitManifest& manifest,
                           const std::vector<std::uint64_t>& seeds, std::size_t jobs) {
  AblationTable table;
  table.axis = canonical_axis(axis);
  if (grid.empty()) throw ConfigError("config key 'grid': at least one value is required");
  if (seeds.empty()) throw ConfigError("config key 'seeds': at least one seed is required");

  std::vector<TrainConfig> configs;
  for (const auto& v : grid) {
    TrainConfig c = bind_corpus(apply_axis(base, table.axis, v), corpus);
    c.validate();
    configs.push_back(std::move(c));
  }
  // Examples depend only on the data view, so points sharing one reuse it.
  std::vector<PreparedData> prepared;
  std::vector<std::size_t> data_of(configs.size());
  std::vector<std::pair<SpeakerView, std::size_t>> views;
  for (std::size_t g = 0; g < configs.size(); ++g) {
    const std::pair view{configs[g].model.speaker_view, configs[g].model.max_turns};
    auto it = std::find(views.begin(), views.end(), view);
    if (it == views.end()) {
      views.push_back(view);
      prepared.push_back(prepare(corpus, manifest, configs[g].model));
      it = views.end() - 1;
    }
    data_of[g] = static_cast<std::size_t>(it - views.begin());
  }

  const std::size_t n_seeds = seeds.size();
  std::vector<EvalReport> reports(configs.size() * n_seeds);
  parallel_for(reports.size(), jobs, [&](std::size_t i) {
    TrainConfig c = configs[i / n_seeds];
    c.seed = seeds[i % n_seeds];
    reports[i] = run_experiment(prepared[data_of[i / n_seeds]], c).report;
  });
  for (std::size_t g = 0; g < configs.size(); ++g) {
    std::vector<EvalReport> cell(reports.begin() + static_cast<std::ptrdiff_t>(g * n_seeds),
                                 reports.begin() + static_cast<std::ptrdiff_t>((g + 1) * n_seeds));
    table.rows.push_back({grid[g], combine(std::move(cell))});
  }
  return table;
}

nlohmann::json to_json(const AblationTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows) {
    nlohmann::json j = to_json(r.result);
    j["axis_value"] = r.value;
    rows.push_back(std::move(j));
  }
  return {{"axis", t.axis}, {"rows", rows}};
}

std::string to_csv(const AblationTable& t) {
  std::set<int> indices;
  for (const auto& r : t.rows)
    for (const auto& [k, v] : r.result.per_session_mean_mae) indices.insert(k);
  const auto& seeds = t.rows.empty() ? std::vector<std::uint64_t>{} : t.rows.front().result.seeds;

  std::ostringstream os;
  os << "axis_value,n_seeds,mae_mean,mae_std";
  for (auto s : seeds) os << ",mae_seed_" << s;
  for (int k : indices) os << ",mae_session_" << k;
  os << "\n";
  for (const auto& r : t.rows) {
    os << r.value << "," << r.result.seeds.size() << "," << format_double(r.result.mean_mae) << ",";
    if (r.result.std_mae) os << format_double(*r.result.std_mae);
    for (double v : r.result.per_seed_mae) os << "," << format_double(v);
    for (int k : indices) {
      os << ",";
      auto it = r.result.per_session_mean_mae.find(k);
      if (it != r.result.per_session_mean_mae.end()) os << format_double(it->second);
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace emotrack::eval
