#include "emotrack/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "emotrack/checkpoint.hpp"
#include "emotrack/errors.hpp"
#include "emotrack/eval.hpp"
#include "emotrack/gradcheck.hpp"
#include "emotrack/synthgen.hpp"

#ifndef EMOTRACK_VERSION
#define EMOTRACK_VERSION "0.0.0"
#endif

namespace emotrack::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  auto number = [&](const std::string& s) -> std::uint64_t {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("config key 'seeds': '" + text + "' is not a seed list (use 3, 0,2,5 or 0..4)");
    }
    return std::stoull(s);
  };
  std::vector<std::uint64_t> seeds;
  if (const auto dots = text.find(".."); dots != std::string::npos) {
    const auto lo = number(text.substr(0, dots));
    const auto hi = number(text.substr(dots + 2));
    if (hi < lo) throw ConfigError("config key 'seeds': empty range '" + text + "'");
    for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
    return seeds;
  }
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto end = comma == std::string::npos ? text.size() : comma;
    seeds.push_back(number(text.substr(start, end - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return seeds;
}

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;  // key=value
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string seeds;
  std::size_t jobs = 0;
};

KeyValueConfig load_config(const Common& c) {
  KeyValueConfig kv = c.config.empty() ? KeyValueConfig::parse("", "<defaults>") : KeyValueConfig::load(c.config);
  for (const auto& o : c.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not key=value");
    kv.set(o.substr(0, eq), o.substr(eq + 1));
  }
  return kv;
}

fs::path out_dir(const Common& c) {
  std::string dir = c.out;
  if (dir.empty()) {
    if (const char* env = std::getenv("EMOTRACK_OUT_DIR")) dir = env;
  }
  if (dir.empty()) throw ConfigError("an output directory is required (--out or EMOTRACK_OUT_DIR)");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory " + dir);
  return dir;
}

std::size_t job_count(const Common& c) {
  if (c.jobs > 0) return c.jobs;
  if (const char* env = std::getenv("EMOTRACK_JOBS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

std::vector<std::uint64_t> seeds_of(const Common& c, std::uint64_t fallback) {
  if (!c.seeds.empty()) return parse_seeds(c.seeds);
  return {c.seed.value_or(fallback)};
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot write " + p.string());
  f << text;
  if (!f) throw DataError("write failed for " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

/// Written before any other output of a command.
void write_run_manifest(const fs::path& dir, const std::string& command, const std::vector<std::string>& args,
                        const Common& c, const json& resolved, const std::vector<std::uint64_t>& seeds,
                        const json& inputs) {
  json m{{"command", command},
         {"argv", args},
         {"config_path", c.config.empty() ? json(nullptr) : json(c.config)},
         {"overrides", c.overrides},
         {"resolved_config", resolved},
         {"seeds", seeds},
         {"inputs", inputs},
         {"output_dir", dir.string()},
         {"tool_version", EMOTRACK_VERSION}};
  write_json(dir / "run_manifest.json", m);
}

void add_common(CLI::App* sub, Common& c, bool config, bool seeds) {
  if (config) {
    sub->add_option("--config", c.config, "key = value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--set", c.overrides, "override one config entry, key=value (repeatable)");
  }
  sub->add_option("--out", c.out, "output directory (default: $EMOTRACK_OUT_DIR)");
  sub->add_option("--seed", c.seed, "random seed");
  if (seeds) {
    sub->add_option("--seeds", c.seeds, "seed list: 3, 0,2,5 or 0..4");
    sub->add_option("--jobs", c.jobs, "worker threads across seeds/grid points (default: $EMOTRACK_JOBS or 1)");
  }
}

// ---- commands ----------------------------------------------------------------------

int cmd_gen_fixtures(const std::vector<std::string>& args, const Common& c, std::ostream& out) {
  const KeyValueConfig kv = load_config(c);
  synth::GeneratorConfig gc = synth::generator_config_from(kv);
  kv.require_all_consumed("gen-fixtures");
  if (c.seed) gc.seed = *c.seed;
  gc.validate();
  const fs::path dir = out_dir(c);
  write_run_manifest(dir, "gen-fixtures", args, c, synth::to_json(gc), {gc.seed}, json::object());
  const auto g = synth::generate_corpus(gc);
  synth::write_corpus(g, dir);
  out << "wrote " << g.corpus.session_count() << " sessions for " << g.corpus.trajectories.size() << " clients to "
      << dir.string() << "\n";
  return kOk;
}

struct Inputs {
  std::string data;
  std::string manifest;
};

void require_inputs(const Inputs& in) {
  if (in.data.empty()) throw ConfigError("--data is required");
  if (in.manifest.empty()) throw ConfigError("--manifest is required");
}

TrainConfig training_config(const Common& c, const data::Corpus& corpus) {
  const KeyValueConfig kv = load_config(c);
  TrainConfig cfg = train_config_from(kv);
  kv.require_all_consumed("training");
  cfg = eval::bind_corpus(cfg, corpus);
  cfg.validate();
  return cfg;
}

int cmd_train(const std::vector<std::string>& args, const Common& c, const Inputs& in, std::ostream& out) {
  require_inputs(in);
  const auto corpus = data::load_dataset(in.data);
  const auto manifest = data::load_manifest(in.manifest);
  TrainConfig cfg = training_config(c, corpus);
  const auto seeds = seeds_of(c, cfg.seed);
  const fs::path dir = out_dir(c);
  cfg.seed = seeds.front();
  write_run_manifest(dir, "train", args, c, to_json(cfg), seeds, {{"data", in.data}, {"manifest", in.manifest}});

  const auto prepared = eval::prepare(corpus, manifest, cfg.model);
  for (auto seed : seeds) {
    cfg.seed = seed;
    const fs::path run_dir = seeds.size() > 1 ? dir / ("seed_" + std::to_string(seed)) : dir;
    fs::create_directories(run_dir);
    std::ofstream log(run_dir / "train_log.jsonl", std::ios::binary);
    if (!log) throw DataError("cannot write " + (run_dir / "train_log.jsonl").string());
    training::TrainHooks hooks;
    hooks.on_epoch = [&](const training::EpochLog& e) {
      log << to_json(e).dump() << "\n";
      log.flush();
    };
    const auto result = training::train(prepared.train, prepared.val, cfg, hooks);
    Checkpoint ck;
    ck.model = cfg.model;
    ck.seed = seed;
    ck.feature_stats = prepared.stats;
    ck.params = result.best_params;
    ck.extra = {{"train_config", to_json(cfg)},
                {"best_epoch", result.best_epoch},
                {"best_val_loss", result.best_val_loss},
                {"epochs_run", result.epochs_run},
                {"stopped_early", result.stopped_early}};
    save_checkpoint(ck, run_dir / "model.ckpt");
    out << "seed " << seed << ": best epoch " << result.best_epoch << " of " << result.epochs_run
        << ", val loss " << result.best_val_loss << "\n";
  }
  return kOk;
}

int cmd_eval(const std::vector<std::string>& args, const Common& c, const Inputs& in,
             std::vector<std::string> checkpoints, const std::string& runs, const std::string& split_name,
             std::ostream& out) {
  require_inputs(in);
  std::vector<std::uint64_t> seeds;
  if (!runs.empty()) {
    if (c.seeds.empty()) throw ConfigError("--runs needs --seeds");
    seeds = parse_seeds(c.seeds);
    for (auto s : seeds) checkpoints.push_back((fs::path(runs) / ("seed_" + std::to_string(s)) / "model.ckpt").string());
  }
  if (checkpoints.empty()) throw ConfigError("--checkpoint or --runs is required");
  const data::Split split = data::parse_split(split_name);
  const auto corpus = data::load_dataset(in.data);
  const auto manifest = data::load_manifest(in.manifest);
  const fs::path dir = out_dir(c);
  write_run_manifest(dir, "eval", args, c, {{"split", split_name}}, seeds,
                     {{"data", in.data}, {"manifest", in.manifest}, {"checkpoints", checkpoints}});

  std::vector<eval::EvalReport> reports;
  for (const auto& path : checkpoints) {
    const Checkpoint ck = load_checkpoint(path);
    if (ck.model.embed_dim != corpus.embed_dim || ck.model.num_features != corpus.num_features) {
      throw DataError("checkpoint " + path + " expects d_e=" + std::to_string(ck.model.embed_dim) +
                      ", F=" + std::to_string(ck.model.num_features) + " but corpus " + in.data + " has d_e=" +
                      std::to_string(corpus.embed_dim) + ", F=" + std::to_string(corpus.num_features));
    }
    data::FeatureStats stats = ck.feature_stats
                                   ? *ck.feature_stats
                                   : data::fit_feature_stats(data::sessions_in(corpus, manifest, data::Split::train));
    data::ExampleOptions opt;
    opt.view = ck.model.speaker_view;
    opt.max_turns = ck.model.max_turns;
    const auto examples = data::build_examples(corpus, manifest, split, stats, opt);
    auto report = eval::evaluate(ck.params, ck.model, examples);
    report.split = split_name;
    report.seed = ck.seed;
    if (ck.extra.contains("train_config")) {
      json tc = ck.extra["train_config"];
      tc["seed"] = 0;
      report.config_fingerprint = fingerprint(tc);
    }
    out << path << ": " << split_name << " MAE " << report.overall_mae << "\n";
    reports.push_back(std::move(report));
  }
  if (reports.size() == 1) {
    write_json(dir / "report.json", eval::to_json(reports.front()));
  } else {
    const auto m = eval::combine(std::move(reports));
    out << "MAE " << m.mean_mae << " +- " << m.std_mae.value_or(0.0) << " over " << m.seeds.size() << " seeds\n";
    write_json(dir / "report.json", eval::to_json(m));
  }
  return kOk;
}

int cmd_gradcheck(const std::vector<std::string>& args, const Common& c, const std::string& corrupt_op,
                  std::ostream& out, std::ostream& err) {
  gradcheck::Options opt;
  opt.seed = c.seed.value_or(0);
  opt.corrupt_op = corrupt_op;
  const ModelConfig cfg = gradcheck::tiny_model_config();
  const fs::path dir = out_dir(c);
  write_run_manifest(dir, "gradcheck", args, c,
                     {{"model", to_json(cfg)}, {"step", opt.step}, {"tolerance", opt.tolerance},
                      {"corrupt_op", corrupt_op}},
                     {opt.seed}, json::object());

  std::vector<gradcheck::Report> reports = gradcheck::check_ops(opt);
  reports.push_back(gradcheck::check_model(cfg, opt));
  json all = json::array();
  bool passed = true;
  for (const auto& r : reports) {
    all.push_back(gradcheck::to_json(r));
    const auto* w = r.worst();
    if (!r.passed) {
      passed = false;
      err << "FAIL " << r.subject << ": worst parameter " << w->name << "[" << w->worst_index << "] relative error "
          << w->worst_error << " (analytic " << w->analytic << ", numeric " << w->numeric << ")\n";
    }
  }
  write_json(dir / "gradcheck.json", {{"passed", passed}, {"reports", all}});
  const auto* w = reports.back().worst();
  out << (passed ? "PASS" : "FAIL") << " gradient check; model worst " << w->name << " " << w->worst_error << "\n";
  return passed ? kOk : kNumericError;
}

int cmd_ablate(const std::vector<std::string>& args, const Common& c, const Inputs& in, const std::string& axis,
               const std::string& grid_text, std::ostream& out) {
  require_inputs(in);
  if (axis.empty()) throw ConfigError("--axis is required");
  std::vector<std::string> grid;
  if (grid_text.empty()) {
    grid = eval::default_grid(axis);
  } else {
    std::size_t start = 0;
    while (true) {
      const auto comma = grid_text.find(',', start);
      grid.push_back(grid_text.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  for (const auto& v : grid) eval::apply_axis(TrainConfig{}, axis, v);  // reject bad axes before any output

  const auto corpus = data::load_dataset(in.data);
  const auto manifest = data::load_manifest(in.manifest);
  const TrainConfig base = training_config(c, corpus);
  const auto seeds = seeds_of(c, base.seed);
  const fs::path dir = out_dir(c);
  write_run_manifest(dir, "ablate", args, c, {{"base", to_json(base)}, {"axis", axis}, {"grid", grid}}, seeds,
                     {{"data", in.data}, {"manifest", in.manifest}});
  const auto table = eval::run_ablation(axis, grid, base, corpus, manifest, seeds, job_count(c));
  write_file(dir / "ablation.csv", eval::to_csv(table));
  write_json(dir / "ablation.json", eval::to_json(table));
  for (const auto& r : table.rows) {
    out << table.axis << "=" << r.value << ": MAE " << r.result.mean_mae;
    if (r.result.std_mae) out << " +- " << *r.result.std_mae;
    out << "\n";
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Session-level depression severity regression with cross-session memory", "emotrack"};
  app.require_subcommand(1);
  app.set_version_flag("--version", EMOTRACK_VERSION);

  Common common;
  Inputs inputs;
  std::vector<std::string> checkpoints;
  std::string runs, split = "test", corrupt_op, axis, grid;

  auto* gen = app.add_subcommand("gen-fixtures", "generate a synthetic corpus and split manifest");
  add_common(gen, common, true, false);

  auto* train = app.add_subcommand("train", "train one model per seed");
  add_common(train, common, true, true);
  train->add_option("--data", inputs.data, "session JSONL corpus");
  train->add_option("--manifest", inputs.manifest, "split manifest JSON");

  auto* ev = app.add_subcommand("eval", "evaluate checkpoints on a split");
  add_common(ev, common, false, true);
  ev->add_option("--data", inputs.data, "session JSONL corpus");
  ev->add_option("--manifest", inputs.manifest, "split manifest JSON");
  ev->add_option("--checkpoint", checkpoints, "checkpoint file (repeatable)");
  ev->add_option("--runs", runs, "directory holding seed_<s>/model.ckpt from a multi-seed train");
  ev->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
  add_common(gc, common, false, false);
  gc->add_option("--corrupt-op", corrupt_op, "negative control: scale the gradient through this op");

  auto* ab = app.add_subcommand("ablate", "train and evaluate over one ablation axis");
  add_common(ab, common, true, true);
  ab->add_option("--data", inputs.data, "session JSONL corpus");
  ab->add_option("--manifest", inputs.manifest, "split manifest JSON");
  ab->add_option("--axis", axis, "ablation axis");
  ab->add_option("--grid", grid, "comma-separated grid values (default: the axis' standard grid)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  std::vector<std::string> argv{"emotrack"};
  argv.insert(argv.end(), args.begin(), args.end());
  try {
    if (gen->parsed()) return cmd_gen_fixtures(argv, common, out);
    if (train->parsed()) return cmd_train(argv, common, inputs, out);
    if (ev->parsed()) return cmd_eval(argv, common, inputs, checkpoints, runs, split, out);
    if (gc->parsed()) return cmd_gradcheck(argv, common, corrupt_op, out, err);
    if (ab->parsed()) return cmd_ablate(argv, common, inputs, axis, grid, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const nlohmann::json::exception& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsage;
}

}  // namespace emotrack::cli
