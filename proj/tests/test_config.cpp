#include <doctest.h>

#include "emotrack/config.hpp"
#include "emotrack/errors.hpp"

using namespace emotrack;

namespace {

std::string config_error(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  FAIL("expected ConfigError");
  return {};
}

}  // namespace

TEST_CASE("key-value grammar") {
  const auto kv = KeyValueConfig::parse(
      "# comment line\n"
      "\n"
      "  lr =  0.002   # trailing comment\n"
      "decay_exclude = head.b, queries ,dialog.ln\n"
      "query_self_attention = no\n"
      "max_epochs=7");
  CHECK(*kv.get_double("lr") == 0.002);
  CHECK(*kv.get_list("decay_exclude") == std::vector<std::string>{"head.b", "queries", "dialog.ln"});
  CHECK(*kv.get_bool("query_self_attention") == false);
  CHECK(*kv.get_uint("max_epochs") == 7);
  CHECK(!kv.get_string("missing"));
  CHECK_NOTHROW(kv.require_all_consumed("test"));
}

TEST_CASE("grammar errors carry the line") {
  CHECK(config_error([] { KeyValueConfig::parse("a = 1\nnot a pair\n", "x.cfg"); }).find("x.cfg:2") !=
        std::string::npos);
  CHECK(config_error([] { KeyValueConfig::parse("a = 1\na = 2\n", "x.cfg"); }).find("duplicate key 'a'") !=
        std::string::npos);
  CHECK(config_error([] { KeyValueConfig::parse(" = 3\n", "x.cfg"); }).find("empty key") != std::string::npos);
}

TEST_CASE("typed getters reject malformed values with the key name") {
  const auto kv = KeyValueConfig::parse("a = 1.5x\nb = -3\nc = maybe\nd = 1,two\n");
  CHECK(config_error([&] { kv.get_double("a"); }).find("'a'") != std::string::npos);
  CHECK(config_error([&] { kv.get_uint("b"); }).find("'b'") != std::string::npos);
  CHECK(config_error([&] { kv.get_bool("c"); }).find("'c'") != std::string::npos);
  CHECK(config_error([&] { kv.get_double_list("d"); }).find("'d'") != std::string::npos);
}

TEST_CASE("unread keys are reported") {
  const auto kv = KeyValueConfig::parse("lr = 0.1\nlearning_rate = 0.2\n");
  const auto cfg = train_config_from(kv);
  CHECK(cfg.lr == 0.1);
  CHECK(config_error([&] { kv.require_all_consumed("training"); }).find("learning_rate") != std::string::npos);
}

TEST_CASE("train_config_from maps every key") {
  const auto kv = KeyValueConfig::parse(
      "d = 32\nheads = 2\nd_ff = 64\nenc_layers = 3\ndec_layers = 1\nmemory_slots = 8\nmax_turns = 40\n"
      "score_hidden = 16\ndropout = 0.2\nmemory_mode = summary\nreadout = mean-pooled\ninput_source = dialogue\n"
      "speaker_view = both\nquery_self_attention = false\nlr = 0.0005\nweight_decay = 0\nbatch_size = 4\n"
      "warmup_ratio = 0.1\nlambda_sym = 1\np_hist = 0.2\nmax_epochs = 5\npatience = 2\nclip_norm = 2\n"
      "huber_delta = 0.5\nbeta1 = 0.8\nbeta2 = 0.99\nadam_eps = 1e-6\ndecay_exclude = head\nseed = 9\n");
  const auto c = train_config_from(kv);
  CHECK_NOTHROW(kv.require_all_consumed("training"));
  CHECK(c.model.d == 32);
  CHECK(c.model.heads == 2);
  CHECK(c.model.enc_layers == 3);
  CHECK(c.model.memory == MemoryMode::summary);
  CHECK(c.model.readout == Readout::mean_pooled);
  CHECK(c.model.input_source == InputSource::dialogue);
  CHECK(c.model.speaker_view == SpeakerView::both);
  CHECK(!c.model.query_self_attention);
  CHECK(c.lr == 0.0005);
  CHECK(c.batch_size == 4);
  CHECK(c.huber_delta == 0.5);
  CHECK(c.decay_exclude == std::vector<std::string>{"head"});
  CHECK(c.seed == 9);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("defaults match the reference architecture") {
  const TrainConfig c;
  CHECK(c.model.d == 64);
  CHECK(c.model.heads == 4);
  CHECK(c.model.d_ff == 256);
  CHECK(c.model.enc_layers == 2);
  CHECK(c.model.dec_layers == 4);
  CHECK(c.model.memory_slots == 16);
  CHECK(c.model.max_turns == 80);
  CHECK(c.model.dropout == 0.1);
  CHECK(c.lr == 1e-3);
  CHECK(c.weight_decay == 1e-2);
  CHECK(c.batch_size == 32);
  CHECK(c.warmup_ratio == 0.05);
  CHECK(c.lambda_sym == 0.5);
  CHECK(c.p_hist == 0.1);
  CHECK(c.max_epochs == 100);
  CHECK(c.patience == 8);
  CHECK(c.clip_norm == 1.0);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("validation names the offending key") {
  ModelConfig m;
  m.heads = 3;
  CHECK(config_error([&] { m.validate(); }).find("'heads'") != std::string::npos);
  m = ModelConfig{};
  m.num_features = 4;
  CHECK(config_error([&] { m.validate(); }).find("'group_map'") != std::string::npos);
  m.group_map = {1, 2, 3, 4};
  CHECK(config_error([&] { m.validate(); }).find("'group_map'") != std::string::npos);
  m.group_map = {1, 2, 3, 3};
  CHECK_NOTHROW(m.validate());

  TrainConfig t;
  t.lr = 0.0;
  CHECK(config_error([&] { t.validate(); }).find("'lr'") != std::string::npos);
  CHECK(config_error([] { parse_memory_mode("full"); }).find("memory_mode") != std::string::npos);
  CHECK(config_error([] { parse_speaker_view("patient"); }).find("speaker_view") != std::string::npos);
}

TEST_CASE("enum names round-trip") {
  for (auto m : {MemoryMode::none, MemoryMode::summary, MemoryMode::summary_retrieval})
    CHECK(parse_memory_mode(to_string(m)) == m);
  for (auto v : {SpeakerView::client, SpeakerView::counselor, SpeakerView::both})
    CHECK(parse_speaker_view(to_string(v)) == v);
  for (auto r : {Readout::symptom_query, Readout::mean_pooled}) CHECK(parse_readout(to_string(r)) == r);
  for (auto s : {InputSource::both, InputSource::features, InputSource::dialogue})
    CHECK(parse_input_source(to_string(s)) == s);
}

TEST_CASE("model config JSON round-trip and fingerprint stability") {
  ModelConfig m;
  m.d = 16;
  m.group_map = {};
  m.memory = MemoryMode::none;
  const auto back = model_config_from_json(to_json(m));
  CHECK(to_json(back) == to_json(m));
  CHECK(fingerprint(to_json(m)) == fingerprint(to_json(back)));
  CHECK(fingerprint(to_json(m)).size() == 16);
  m.d = 32;
  CHECK(fingerprint(to_json(m)) != fingerprint(to_json(back)));
}
