#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "emotrack/functional.hpp"
#include "emotrack/model.hpp"
#include "test_util.hpp"

using namespace emotrack;
using namespace emotrack::model;
using num::KeyMask;
using num::Tape;
using testutil::random_tensor;
using testutil::random_vector;
using testutil::tiny_config;

namespace {

ForwardContext eval_ctx(Tape& tape, const ParamStore& params) { return ForwardContext{tape, params}; }

std::vector<double> values_of(Var v) { return {v.value().values().begin(), v.value().values().end()}; }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor rows_of(const Tensor& t, std::size_t n) {
  Tensor out({n, t.cols()});
  std::copy_n(t.data(), n * t.cols(), out.data());
  return out;
}

struct Session {
  std::vector<double> z;
  Tensor turns;
  std::size_t count;
  Tensor history;
  std::size_t history_count;

  SessionInput input(bool with_history) const {
    SessionInput in{&z, &turns, count, nullptr, 0};
    if (with_history) {
      in.history = &history;
      in.history_count = history_count;
    }
    return in;
  }
};

Session random_session(const ModelConfig& cfg, Rng& rng, std::size_t n = 5, std::size_t m = 4) {
  return Session{random_vector(cfg.num_features, rng), random_tensor({n, cfg.embed_dim}, rng), n,
                 random_tensor({m, cfg.embed_dim}, rng), m};
}

}  // namespace

TEST_CASE("clinical feature tokens") {
  SUBCASE("F = 23 gives 23 token rows") {
    ModelConfig cfg;
    cfg.embed_dim = 8;
    auto params = init_params(cfg, 1);
    Tape tape;
    Rng rng(2);
    auto tokens = embed_clinical_features(eval_ctx(tape, params), cfg, random_vector(23, rng));
    CHECK(tokens.value().rows() == 23);
    CHECK(tokens.value().cols() == 64);
  }
  SUBCASE("zeroed score MLP leaves exactly e_feat + e_group") {
    auto cfg = tiny_config();
    auto params = init_params(cfg, 3);
    params.at("score.fc2.w").fill(0.0);
    params.at("score.fc2.b").fill(0.0);
    Tape tape;
    Rng rng(4);
    auto tokens = embed_clinical_features(eval_ctx(tape, params), cfg, random_vector(4, rng)).value();
    const auto& feat = params.at("feat_embed");
    const auto& group = params.at("group_embed");
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t g = static_cast<std::size_t>(cfg.group_map[i] - 1);
      for (std::size_t k = 0; k < cfg.d; ++k) CHECK(tokens.at(i, k) == feat.at(i, k) + group.at(g, k));
    }
  }
  SUBCASE("same group, equal z and equal identity rows give identical tokens") {
    auto cfg = tiny_config();
    auto params = init_params(cfg, 5);
    auto& feat = params.at("feat_embed");
    std::copy(feat.row(0).begin(), feat.row(0).end(), feat.row(1).begin());
    Tape tape;
    auto tokens = embed_clinical_features(eval_ctx(tape, params), cfg, {0.7, 0.7, -1.0, 2.0}).value();
    for (std::size_t k = 0; k < cfg.d; ++k) CHECK(tokens.at(0, k) == tokens.at(1, k));
  }
  SUBCASE("wrong length is rejected") {
    auto cfg = tiny_config();
    auto params = init_params(cfg, 5);
    Tape tape;
    CHECK_THROWS_AS(embed_clinical_features(eval_ctx(tape, params), cfg, {1.0, 2.0}), std::invalid_argument);
  }
}

TEST_CASE("dialogue tokens") {
  auto cfg = tiny_config();
  auto params = init_params(cfg, 7);
  Rng rng(8);
  SUBCASE("one turn gives one token") {
    Tape tape;
    CHECK(embed_dialogue_turns(eval_ctx(tape, params), cfg, random_tensor({1, 6}, rng)).value().rows() == 1);
  }
  SUBCASE("zero projection leaves the layer-norm shift plus position") {
    params.at("dialog.proj.w").fill(0.0);
    params.at("dialog.proj.b").fill(0.0);
    auto beta = random_tensor({cfg.d}, rng);
    params.at("dialog.ln.beta") = beta;
    Tape tape;
    auto tokens = embed_dialogue_turns(eval_ctx(tape, params), cfg, random_tensor({3, 6}, rng)).value();
    auto pe = positional_encoding(3, cfg.d);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t k = 0; k < cfg.d; ++k) CHECK(tokens.at(r, k) - pe.at(r, k) == doctest::Approx(beta[k]).epsilon(1e-12));
  }
  SUBCASE("identical rows differ only by their position codes") {
    auto row = random_tensor({1, 6}, rng);
    Tensor u({4, 6});
    for (std::size_t r = 0; r < 4; ++r) std::copy(row.values().begin(), row.values().end(), u.row(r).begin());
    Tape tape;
    auto tokens = embed_dialogue_turns(eval_ctx(tape, params), cfg, u).value();
    auto pe = positional_encoding(4, cfg.d);
    for (std::size_t k = 0; k < cfg.d; ++k) {
      CHECK(tokens.at(3, k) - tokens.at(1, k) == doctest::Approx(pe.at(3, k) - pe.at(1, k)).epsilon(1e-12));
    }
    CHECK(tokens.at(0, 0) != tokens.at(1, 0));
  }
  SUBCASE("embedding width mismatch is rejected") {
    Tape tape;
    CHECK_THROWS_AS(embed_dialogue_turns(eval_ctx(tape, params), cfg, random_tensor({2, 5}, rng)), std::invalid_argument);
  }
}

TEST_CASE("position codes follow the sinusoid definition") {
  auto pe = positional_encoding(5, 8);
  CHECK(pe.at(0, 0) == 0.0);
  CHECK(pe.at(0, 1) == 1.0);
  CHECK(pe.at(3, 2) == doctest::Approx(std::sin(3.0 / std::pow(10000.0, 2.0 / 8.0))));
  CHECK(pe.at(4, 5) == doctest::Approx(std::cos(4.0 / std::pow(10000.0, 4.0 / 8.0))));
}

TEST_CASE("encoder") {
  auto cfg = tiny_config();
  Rng rng(9);
  auto x = random_tensor({7, cfg.d}, rng);
  KeyMask mask(7, 1);
  SUBCASE("keeps the (F + N) x d shape") {
    auto params = init_params(cfg, 1);
    Tape tape;
    auto out = encode_session(eval_ctx(tape, params), cfg, tape.constant(x), mask).value();
    CHECK(out.rows() == 7);
    CHECK(out.cols() == cfg.d);
  }
  SUBCASE("zero layers is the identity") {
    cfg.enc_layers = 0;
    auto params = init_params(cfg, 1);
    Tape tape;
    CHECK(encode_session(eval_ctx(tape, params), cfg, tape.constant(x), mask).value() == x);
  }
  SUBCASE("padding never reaches the real rows") {
    cfg.enc_layers = 2;
    auto params = init_params(cfg, 1);
    Tensor padded({10, cfg.d});
    std::copy(x.values().begin(), x.values().end(), padded.values().begin());
    for (std::size_t i = x.size(); i < padded.size(); ++i) padded[i] = 1e3 * rng.normal();
    KeyMask pmask(10, 0);
    std::fill_n(pmask.begin(), 7, 1);
    Tape t1, t2;
    auto base = encode_session(eval_ctx(t1, params), cfg, t1.constant(x), mask).value();
    auto with_pad = encode_session(eval_ctx(t2, params), cfg, t2.constant(padded), pmask).value();
    CHECK(max_abs_diff(base, rows_of(with_pad, 7)) < 1e-12);

    auto repadded = padded;
    for (std::size_t i = x.size(); i < repadded.size(); ++i) repadded[i] = rng.normal();
    Tape t3;
    auto other = encode_session(eval_ctx(t3, params), cfg, t3.constant(repadded), pmask).value();
    CHECK(rows_of(other, 7) == rows_of(with_pad, 7));
  }
}

TEST_CASE("decoder") {
  auto cfg = tiny_config();
  Rng rng(10);
  auto x = random_tensor({6, cfg.d}, rng);
  KeyMask mask{1, 1, 1, 1, 1, 0};
  SUBCASE("returns one row per symptom") {
    auto params = init_params(cfg, 2);
    Tape tape;
    auto d = decode_symptoms(eval_ctx(tape, params), cfg, tape.constant(x), mask).value();
    CHECK(d.rows() == 8);
    CHECK(d.cols() == cfg.d);
  }
  SUBCASE("permuting encoder rows together with the mask leaves D unchanged") {
    cfg.dec_layers = 3;
    auto params = init_params(cfg, 2);
    const std::vector<std::size_t> perm{4, 0, 5, 2, 1, 3};
    Tensor px({6, cfg.d});
    KeyMask pmask(6);
    for (std::size_t r = 0; r < 6; ++r) {
      std::copy(x.row(perm[r]).begin(), x.row(perm[r]).end(), px.row(r).begin());
      pmask[r] = mask[perm[r]];
    }
    Tape t1, t2;
    auto a = decode_symptoms(eval_ctx(t1, params), cfg, t1.constant(x), mask).value();
    auto b = decode_symptoms(eval_ctx(t2, params), cfg, t2.constant(px), pmask).value();
    CHECK(max_abs_diff(a, b) < 1e-12);
  }
  SUBCASE("zero layers returns the queries") {
    cfg.dec_layers = 0;
    auto params = init_params(cfg, 2);
    Tape tape;
    CHECK(decode_symptoms(eval_ctx(tape, params), cfg, tape.constant(x), mask).value() == params.at("queries"));
  }
}

TEST_CASE("prediction head") {
  auto cfg = tiny_config();
  auto params = init_params(cfg, 3);
  Rng rng(11);
  auto states = random_tensor({8, cfg.d}, rng);
  SUBCASE("zero logits give 1.5 per item and 12 in total") {
    params.at("head.w").fill(0.0);
    Tape tape;
    auto p = predict_items(eval_ctx(tape, params), tape.constant(states));
    for (double v : values_of(p.items)) CHECK(v == 1.5);
    CHECK(p.total.value()[0] == 12.0);
  }
  SUBCASE("large logits saturate at 3") {
    params.at("head.w").fill(0.0);
    params.at("head.b").fill(50.0);
    Tape tape;
    auto p = predict_items(eval_ctx(tape, params), tape.constant(states));
    for (double v : values_of(p.items)) {
      CHECK(v == doctest::Approx(3.0).epsilon(1e-12));
      CHECK(v < 3.0);
    }
    params.at("head.b").fill(-1e4);
    Tape t2;
    auto q = predict_items(eval_ctx(t2, params), t2.constant(states));
    for (double v : values_of(q.items)) CHECK(v > 0.0);
  }
  SUBCASE("w = 0 and b = ln 3 give 2.25") {
    params.at("head.w").fill(0.0);
    params.at("head.b").fill(std::log(3.0));
    Tape tape;
    auto p = predict_items(eval_ctx(tape, params), tape.constant(states));
    // sigmoid(ln 3) = 3 / (3 + 1)
    for (double v : values_of(p.items)) CHECK(v == doctest::Approx(3.0 * 3.0 / 4.0).epsilon(1e-14));
  }
  SUBCASE("each item uses its own weight row") {
    Tape tape;
    auto p = predict_items(eval_ctx(tape, params), tape.constant(states));
    const auto& w = params.at("head.w");
    const auto& b = params.at("head.b");
    for (std::size_t j = 0; j < 8; ++j) {
      double logit = b[j];
      for (std::size_t k = 0; k < cfg.d; ++k) logit += w.at(j, k) * states.at(j, k);
      CHECK(p.items.value()[j] == doctest::Approx(3.0 / (1.0 + std::exp(-logit))).epsilon(1e-13));
    }
  }
}

TEST_CASE("forward: first session matches a memory-free model bit for bit") {
  auto cfg = tiny_config();
  auto mem_params = init_params(cfg, 21);
  auto plain_cfg = cfg;
  plain_cfg.memory = MemoryMode::none;
  auto plain_params = init_params(plain_cfg, 21);
  for (const auto& [name, t] : plain_params) CHECK(mem_params.at(name) == t);
  CHECK(mem_params.size() > plain_params.size());

  Rng rng(22);
  auto s = random_session(cfg, rng);
  auto a = predict(mem_params, cfg, s.input(false));
  auto b = predict(plain_params, plain_cfg, s.input(false));
  CHECK(a.items == b.items);
  CHECK(a.total == b.total);

  // Memory disabled by configuration ignores any history it is handed.
  auto c = predict(plain_params, plain_cfg, s.input(true));
  CHECK(c.items == b.items);

  // Train mode with the same stream also agrees.
  ForwardOptions opt;
  opt.train = true;
  opt.stream = Rng(5).split("x");
  Tape t1, t2;
  auto ra = forward(t1, mem_params, cfg, s.input(false), opt);
  auto rb = forward(t2, plain_params, plain_cfg, s.input(false), opt);
  CHECK(ra.prediction.items.value() == rb.prediction.items.value());
}

TEST_CASE("forward: certain history dropout equals the no-history pass") {
  auto cfg = tiny_config();
  auto params = init_params(cfg, 23);
  Rng rng(24);
  auto s = random_session(cfg, rng);
  ForwardOptions opt;
  opt.train = true;
  opt.stream = Rng(99).split(3);
  opt.p_hist = 1.0;
  Tape t1, t2;
  auto dropped = forward(t1, params, cfg, s.input(true), opt);
  auto none = forward(t2, params, cfg, s.input(false), opt);
  CHECK_FALSE(dropped.used_history);
  CHECK(dropped.prediction.items.value() == none.prediction.items.value());

  // In eval mode history is always used and changes the output.
  auto with = predict(params, cfg, s.input(true));
  auto without = predict(params, cfg, s.input(false));
  CHECK(with.items != without.items);
}

TEST_CASE("forward: outputs stay inside the score ranges") {
  for (auto memory : {MemoryMode::none, MemoryMode::summary, MemoryMode::summary_retrieval}) {
    for (auto readout : {Readout::symptom_query, Readout::mean_pooled}) {
      for (auto source : {InputSource::both, InputSource::features, InputSource::dialogue}) {
        auto cfg = tiny_config();
        cfg.memory = memory;
        cfg.readout = readout;
        cfg.input_source = source;
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
          auto params = init_params(cfg, seed);
          Rng rng(seed + 100);
          auto s = random_session(cfg, rng, 1 + seed, 1 + seed % 3);
          for (auto& v : s.z) v *= 30.0;
          auto p = predict(params, cfg, s.input(true));
          REQUIRE(p.items.size() == 8);
          for (double v : p.items) {
            CHECK(v > 0.0);
            CHECK(v < 3.0);
          }
          CHECK(p.total > 0.0);
          CHECK(p.total < 24.0);
        }
      }
    }
  }
}

TEST_CASE("forward: padded turns never change the outputs") {
  auto cfg = tiny_config();
  auto params = init_params(cfg, 31);
  Rng rng(32);
  auto s = random_session(cfg, rng, 7, 6);
  s.count = 4;
  s.history_count = 3;
  ForwardOptions opt;
  opt.train = true;
  opt.stream = Rng(1).split(2);
  Tape t1;
  auto base = forward(t1, params, cfg, s.input(true), opt);
  auto edited = s;
  for (std::size_t r = 4; r < 7; ++r)
    for (auto& v : edited.turns.row(r)) v = 1e6 * rng.normal();
  for (std::size_t r = 3; r < 6; ++r)
    for (auto& v : edited.history.row(r)) v = -1e6 * rng.normal();
  Tape t2;
  auto moved = forward(t2, params, cfg, edited.input(true), opt);
  CHECK(base.prediction.items.value() == moved.prediction.items.value());

  auto trimmed = s;
  trimmed.turns = rows_of(s.turns, 4);
  trimmed.history = rows_of(s.history, 3);
  auto a = predict(params, cfg, s.input(true));
  auto b = predict(params, cfg, trimmed.input(true));
  for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(a.items[j] - b.items[j]) < 1e-12);
}

TEST_CASE("forward: inputs, parameters, seed and mode determine the output") {
  auto cfg = tiny_config();
  auto params = init_params(cfg, 41);
  CHECK(init_params(cfg, 41) == params);
  CHECK_FALSE(init_params(cfg, 42) == params);
  Rng rng(42);
  auto s = random_session(cfg, rng);
  ForwardOptions opt;
  opt.train = true;
  opt.p_hist = 0.5;
  opt.stream = Rng(7).split(1);
  Tape t1, t2, t3;
  auto a = forward(t1, params, cfg, s.input(true), opt);
  auto b = forward(t2, params, cfg, s.input(true), opt);
  CHECK(a.prediction.items.value() == b.prediction.items.value());
  opt.stream = Rng(7).split(2);
  auto c = forward(t3, params, cfg, s.input(true), opt);
  CHECK_FALSE(a.prediction.items.value() == c.prediction.items.value());
  CHECK_THROWS_AS(forward(t3, params, cfg, s.input(true), ForwardOptions{true, std::nullopt, 0.0}), std::logic_error);
}

TEST_CASE("parameter count at the default hyperparameters is about one million") {
  ModelConfig cfg;  // d_e = 4096
  const auto n = parameter_count(cfg);
  MESSAGE("parameters: " << n);
  CHECK(std::abs(static_cast<double>(n) - 1.02e6) <= 0.1 * 1.02e6);

  // Independent tally of the dialogue projection and one encoder block.
  auto params = init_params(cfg, 0);
  CHECK(params.at("dialog.proj.w").size() == 4096 * 64);
  std::size_t enc0 = 0;
  for (const auto& [name, t] : params)
    if (name.rfind("enc.0.", 0) == 0) enc0 += t.size();
  // LN 2x128, attention 4x64x64 + 3x64 biases, FFN 64x256+256+256x64+64
  CHECK(enc0 == 2 * 128 + (4 * 64 * 64 + 3 * 64) + (64 * 256 + 256 + 256 * 64 + 64));
}
