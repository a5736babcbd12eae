#include "emotrack/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "emotrack/errors.hpp"
#include "emotrack/rng.hpp"

namespace emotrack {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, std::string_view expected) {
  throw ConfigError("config key '" + key + "': expected " + std::string(expected) + ", got '" + value + "'");
}

}  // namespace

std::string to_string(SpeakerView v) {
  switch (v) {
    case SpeakerView::client: return "client";
    case SpeakerView::counselor: return "counselor";
    case SpeakerView::both: return "both";
  }
  return "client";
}

std::string to_string(MemoryMode m) {
  switch (m) {
    case MemoryMode::none: return "none";
    case MemoryMode::summary: return "summary";
    case MemoryMode::summary_retrieval: return "summary+retrieval";
  }
  return "none";
}

std::string to_string(Readout r) { return r == Readout::symptom_query ? "symptom-query" : "mean-pooled"; }

std::string to_string(InputSource s) {
  switch (s) {
    case InputSource::both: return "both";
    case InputSource::features: return "features";
    case InputSource::dialogue: return "dialogue";
  }
  return "both";
}

SpeakerView parse_speaker_view(std::string_view s) {
  if (s == "client") return SpeakerView::client;
  if (s == "counselor") return SpeakerView::counselor;
  if (s == "both") return SpeakerView::both;
  throw ConfigError("config key 'speaker_view': expected client|counselor|both, got '" + std::string(s) + "'");
}

MemoryMode parse_memory_mode(std::string_view s) {
  if (s == "none") return MemoryMode::none;
  if (s == "summary") return MemoryMode::summary;
  if (s == "summary+retrieval" || s == "summary_retrieval") return MemoryMode::summary_retrieval;
  throw ConfigError("config key 'memory_mode': expected none|summary|summary+retrieval, got '" + std::string(s) + "'");
}

Readout parse_readout(std::string_view s) {
  if (s == "symptom-query" || s == "symptom_query") return Readout::symptom_query;
  if (s == "mean-pooled" || s == "mean_pooled") return Readout::mean_pooled;
  throw ConfigError("config key 'readout': expected symptom-query|mean-pooled, got '" + std::string(s) + "'");
}

InputSource parse_input_source(std::string_view s) {
  if (s == "both") return InputSource::both;
  if (s == "features") return InputSource::features;
  if (s == "dialogue") return InputSource::dialogue;
  throw ConfigError("config key 'input_source': expected both|features|dialogue, got '" + std::string(s) + "'");
}

// ---- ModelConfig / TrainConfig ------------------------------------------------

std::vector<int> ModelConfig::resolved_group_map() const {
  if (!group_map.empty()) return group_map;
  std::vector<int> g;
  g.insert(g.end(), 8, 1);
  g.insert(g.end(), 5, 2);
  g.insert(g.end(), 10, 3);
  return g;
}

void ModelConfig::validate() const {
  if (d == 0) throw ConfigError("config key 'd': must be positive");
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("config key 'heads': d=" + std::to_string(d) + " is not divisible by " + std::to_string(heads));
  }
  if (d_ff == 0) throw ConfigError("config key 'd_ff': must be positive");
  if (num_features == 0) throw ConfigError("config key 'num_features': must be positive");
  if (num_symptoms == 0) throw ConfigError("config key 'num_symptoms': must be positive");
  if (memory_slots == 0) throw ConfigError("config key 'memory_slots': must be positive");
  if (max_turns == 0) throw ConfigError("config key 'max_turns': must be at least 1");
  if (embed_dim == 0) throw ConfigError("config key 'embed_dim': must be positive");
  if (score_hidden == 0) throw ConfigError("config key 'score_hidden': must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("config key 'dropout': must lie in [0, 1)");
  if (!(ln_eps > 0.0)) throw ConfigError("config key 'ln_eps': must be positive");
  if (group_map.empty() && num_features != 23) {
    throw ConfigError("config key 'group_map': required when num_features (" + std::to_string(num_features) +
                      ") is not 23");
  }
  const auto g = resolved_group_map();
  if (g.size() != num_features) {
    throw ConfigError("config key 'group_map': has " + std::to_string(g.size()) + " entries for " +
                      std::to_string(num_features) + " features");
  }
  for (int v : g) {
    if (v < 1 || v > 3) throw ConfigError("config key 'group_map': groups must be 1, 2 or 3");
  }
  if (group_map.empty() || num_features == 23) {
    const auto count = [&](int k) { return std::count(g.begin(), g.end(), k); };
    if (num_features == 23 && (count(1) != 8 || count(2) != 5 || count(3) != 10)) {
      throw ConfigError("config key 'group_map': 23 features must split 8/5/10 across groups 1/2/3");
    }
  }
}

void TrainConfig::validate() const {
  model.validate();
  if (!(lr > 0.0)) throw ConfigError("config key 'lr': must be positive");
  if (weight_decay < 0.0) throw ConfigError("config key 'weight_decay': must be non-negative");
  if (batch_size == 0) throw ConfigError("config key 'batch_size': must be positive");
  if (warmup_ratio < 0.0 || warmup_ratio > 1.0) throw ConfigError("config key 'warmup_ratio': must lie in [0, 1]");
  if (lambda_sym < 0.0) throw ConfigError("config key 'lambda_sym': must be non-negative");
  if (p_hist < 0.0 || p_hist > 1.0) throw ConfigError("config key 'p_hist': must lie in [0, 1]");
  if (max_epochs == 0) throw ConfigError("config key 'max_epochs': must be positive");
  if (patience == 0) throw ConfigError("config key 'patience': must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError("config key 'clip_norm': must be positive");
  if (!(huber_delta > 0.0)) throw ConfigError("config key 'huber_delta': must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0) throw ConfigError("config key 'beta1': must lie in [0, 1)");
  if (beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("config key 'beta2': must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("config key 'adam_eps': must be positive");
}

nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{
      {"d", c.d},
      {"heads", c.heads},
      {"d_ff", c.d_ff},
      {"enc_layers", c.enc_layers},
      {"dec_layers", c.dec_layers},
      {"num_features", c.num_features},
      {"num_symptoms", c.num_symptoms},
      {"memory_slots", c.memory_slots},
      {"max_turns", c.max_turns},
      {"embed_dim", c.embed_dim},
      {"score_hidden", c.score_hidden},
      {"dropout", c.dropout},
      {"ln_eps", c.ln_eps},
      {"group_map", c.resolved_group_map()},
      {"memory_mode", to_string(c.memory)},
      {"readout", to_string(c.readout)},
      {"input_source", to_string(c.input_source)},
      {"speaker_view", to_string(c.speaker_view)},
      {"query_self_attention", c.query_self_attention},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.d = j.at("d").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.enc_layers = j.at("enc_layers").get<std::size_t>();
    c.dec_layers = j.at("dec_layers").get<std::size_t>();
    c.num_features = j.at("num_features").get<std::size_t>();
    c.num_symptoms = j.at("num_symptoms").get<std::size_t>();
    c.memory_slots = j.at("memory_slots").get<std::size_t>();
    c.max_turns = j.at("max_turns").get<std::size_t>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.score_hidden = j.at("score_hidden").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.ln_eps = j.at("ln_eps").get<double>();
    c.group_map = j.at("group_map").get<std::vector<int>>();
    c.memory = parse_memory_mode(j.at("memory_mode").get<std::string>());
    c.readout = parse_readout(j.at("readout").get<std::string>());
    c.input_source = parse_input_source(j.at("input_source").get<std::string>());
    c.speaker_view = parse_speaker_view(j.at("speaker_view").get<std::string>());
    c.query_self_attention = j.at("query_self_attention").get<bool>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

nlohmann::json to_json(const TrainConfig& c) {
  return nlohmann::json{
      {"model", to_json(c.model)},
      {"lr", c.lr},
      {"weight_decay", c.weight_decay},
      {"batch_size", c.batch_size},
      {"warmup_ratio", c.warmup_ratio},
      {"lambda_sym", c.lambda_sym},
      {"p_hist", c.p_hist},
      {"max_epochs", c.max_epochs},
      {"patience", c.patience},
      {"clip_norm", c.clip_norm},
      {"huber_delta", c.huber_delta},
      {"beta1", c.beta1},
      {"beta2", c.beta2},
      {"adam_eps", c.adam_eps},
      {"decay_exclude", c.decay_exclude},
      {"seed", c.seed},
  };
}

std::string fingerprint(const nlohmann::json& j) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_string(j.dump())));
  return buf;
}

// ---- KeyValueConfig --------------------------------------------------------------

KeyValueConfig KeyValueConfig::parse(std::string_view text, const std::string& source) {
  KeyValueConfig kv;
  kv.source_ = source;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    std::string trimmed = trim(line);
    if (trimmed.empty()) continue;
    auto eq = trimmed.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = trim(std::string_view(trimmed).substr(0, eq));
    std::string value = trim(std::string_view(trimmed).substr(eq + 1));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
    if (kv.values_.count(key)) throw ConfigError(source + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    kv.values_[key] = value;
    if (end == text.size()) break;
  }
  return kv;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

std::optional<std::string> KeyValueConfig::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  consumed_.insert(key);
  return it->second;
}

std::optional<double> KeyValueConfig::get_double(const std::string& key) const {
  auto s = get_string(key);
  if (!s) return std::nullopt;
  try {
    std::size_t used = 0;
    double v = std::stod(*s, &used);
    if (used != s->size()) bad_value(key, *s, "a number");
    return v;
  } catch (const std::logic_error&) {
    bad_value(key, *s, "a number");
  }
}

std::optional<std::uint64_t> KeyValueConfig::get_uint(const std::string& key) const {
  auto s = get_string(key);
  if (!s) return std::nullopt;
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s->data(), s->data() + s->size(), v);
  if (ec != std::errc() || ptr != s->data() + s->size()) bad_value(key, *s, "a non-negative integer");
  return v;
}

std::optional<bool> KeyValueConfig::get_bool(const std::string& key) const {
  auto s = get_string(key);
  if (!s) return std::nullopt;
  if (*s == "true" || *s == "1" || *s == "yes") return true;
  if (*s == "false" || *s == "0" || *s == "no") return false;
  bad_value(key, *s, "true|false");
}

std::optional<std::vector<std::string>> KeyValueConfig::get_list(const std::string& key) const {
  auto s = get_string(key);
  if (!s) return std::nullopt;
  std::vector<std::string> out;
  if (trim(*s).empty()) return out;
  std::size_t pos = 0;
  while (true) {
    auto comma = s->find(',', pos);
    out.push_back(trim(std::string_view(*s).substr(pos, comma == std::string::npos ? std::string::npos : comma - pos)));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::optional<std::vector<double>> KeyValueConfig::get_double_list(const std::string& key) const {
  auto items = get_list(key);
  if (!items) return std::nullopt;
  std::vector<double> out;
  for (const auto& item : *items) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) bad_value(key, item, "a list of numbers");
    } catch (const std::logic_error&) {
      bad_value(key, item, "a list of numbers");
    }
  }
  return out;
}

void KeyValueConfig::require_all_consumed(std::string_view context) const {
  for (const auto& [key, _] : values_) {
    if (!consumed_.count(key)) {
      throw ConfigError("unknown config key '" + key + "' for " + std::string(context) + " (" + source_ + ")");
    }
  }
}

TrainConfig train_config_from(const KeyValueConfig& kv, TrainConfig c) {
  auto& m = c.model;
  if (auto v = kv.get_uint("d")) m.d = *v;
  if (auto v = kv.get_uint("heads")) m.heads = *v;
  if (auto v = kv.get_uint("d_ff")) m.d_ff = *v;
  if (auto v = kv.get_uint("enc_layers")) m.enc_layers = *v;
  if (auto v = kv.get_uint("dec_layers")) m.dec_layers = *v;
  if (auto v = kv.get_uint("memory_slots")) m.memory_slots = *v;
  if (auto v = kv.get_uint("max_turns")) m.max_turns = *v;
  if (auto v = kv.get_uint("score_hidden")) m.score_hidden = *v;
  if (auto v = kv.get_double("dropout")) m.dropout = *v;
  if (auto v = kv.get_string("memory_mode")) m.memory = parse_memory_mode(*v);
  if (auto v = kv.get_string("readout")) m.readout = parse_readout(*v);
  if (auto v = kv.get_string("input_source")) m.input_source = parse_input_source(*v);
  if (auto v = kv.get_string("speaker_view")) m.speaker_view = parse_speaker_view(*v);
  if (auto v = kv.get_bool("query_self_attention")) m.query_self_attention = *v;
  if (auto v = kv.get_double_list("group_map")) {
    m.group_map.clear();
    for (double g : *v) m.group_map.push_back(static_cast<int>(g));
  }
  if (auto v = kv.get_double("lr")) c.lr = *v;
  if (auto v = kv.get_double("weight_decay")) c.weight_decay = *v;
  if (auto v = kv.get_uint("batch_size")) c.batch_size = *v;
  if (auto v = kv.get_double("warmup_ratio")) c.warmup_ratio = *v;
  if (auto v = kv.get_double("lambda_sym")) c.lambda_sym = *v;
  if (auto v = kv.get_double("p_hist")) c.p_hist = *v;
  if (auto v = kv.get_uint("max_epochs")) c.max_epochs = *v;
  if (auto v = kv.get_uint("patience")) c.patience = *v;
  if (auto v = kv.get_double("clip_norm")) c.clip_norm = *v;
  if (auto v = kv.get_double("huber_delta")) c.huber_delta = *v;
  if (auto v = kv.get_double("beta1")) c.beta1 = *v;
  if (auto v = kv.get_double("beta2")) c.beta2 = *v;
  if (auto v = kv.get_double("adam_eps")) c.adam_eps = *v;
  if (auto v = kv.get_list("decay_exclude")) c.decay_exclude = *v;
  if (auto v = kv.get_uint("seed")) c.seed = *v;
  return c;
}

}  // namespace emotrack
