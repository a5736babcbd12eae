#include <doctest.h>

#include <cmath>
#include <fstream>

#include "emotrack/checkpoint.hpp"
#include "emotrack/errors.hpp"
#include "emotrack/training.hpp"
#include "test_util.hpp"

using namespace emotrack;
using namespace emotrack::training;
using num::Tape;
using num::Tensor;
using testutil::random_tensor;
using testutil::tiny_config;

namespace {

model::Prediction constant_prediction(Tape& t, const std::vector<double>& items) {
  Tensor it({items.size()}, items);
  double total = 0.0;
  for (double v : items) total += v;
  return {t.constant(it), t.constant(Tensor({1}, total))};
}

double loss_of(const std::vector<double>& pred, const data::Items& y, double lambda, double delta = 1.0) {
  Tape t;
  return compute_loss(constant_prediction(t, pred), y, lambda, delta).value()[0];
}

/// Short trajectories of random sessions with labels tied to the first feature.
std::vector<data::Example> make_examples(std::size_t clients, const ModelConfig& cfg, Rng& rng) {
  std::vector<data::Example> out;
  for (std::size_t c = 0; c < clients; ++c) {
    std::optional<Tensor> prev;
    for (int s = 1; s <= 2; ++s) {
      data::Example ex;
      ex.run_id = "c" + std::to_string(c);
      ex.session_index = s;
      ex.features_z = testutil::random_vector(cfg.num_features, rng);
      const std::size_t n = 2 + rng.below(3);
      ex.turns = random_tensor({n, cfg.embed_dim}, rng);
      ex.turn_count = n;
      ex.history = prev;
      data::Items y{};
      for (auto& v : y) v = std::clamp(1.5 + 0.8 * ex.features_z[0] + 0.2 * rng.normal(), 0.0, 3.0);
      ex.label_items = y;
      ex.target_items = y;
      prev = ex.turns;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

TrainConfig small_train_config() {
  TrainConfig cfg;
  cfg.model = tiny_config();
  cfg.batch_size = 4;
  cfg.max_epochs = 6;
  cfg.seed = 17;
  return cfg;
}

}  // namespace

TEST_CASE("objective examples") {
  const data::Items zeros{};
  data::Items y{1, 0, 2, 0, 3, 0, 1, 1};
  CHECK(loss_of({1, 0, 2, 0, 3, 0, 1, 1}, y, 0.5) == 0.0);

  // All items 1.5 against all zeros: aggregate residual 12 -> 12 - 0.5 = 11.5;
  // each item residual 1.5 -> 1.5 - 0.5 = 1.0; 11.5 + 0.5 * 1.0 = 12.
  const std::vector<double> flat(8, 1.5);
  CHECK(loss_of(flat, zeros, 0.5) == doctest::Approx(12.0).epsilon(1e-15));
  CHECK(loss_of(flat, zeros, 0.0) == doctest::Approx(11.5).epsilon(1e-15));

  // Small residuals stay on the quadratic branch: total residual 0.4 and item residual 0.05.
  std::vector<double> near(8, 0.05);
  CHECK(loss_of(near, zeros, 0.5) == doctest::Approx(0.5 * 0.16 + 0.5 * 0.5 * 0.0025).epsilon(1e-12));

  Tape t;
  CHECK_THROWS_AS(compute_loss(constant_prediction(t, flat), std::nullopt, 0.5, 1.0), DataError);
  CHECK(loss_value(flat, zeros, 0.5, 1.0) == doctest::Approx(12.0));
}

TEST_CASE("objective is non-negative and zero only at the labels") {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    data::Items y{};
    std::vector<double> p(8);
    for (std::size_t j = 0; j < 8; ++j) {
      y[j] = 3.0 * rng.uniform();
      p[j] = 3.0 * rng.uniform();
    }
    const double lambda = trial % 3 == 0 ? 0.0 : 2.0 * rng.uniform();
    const double l = loss_of(p, y, lambda);
    CHECK(l >= 0.0);
    if (lambda > 0.0) CHECK(l > 0.0);
    CHECK(loss_of({y.begin(), y.end()}, y, lambda) == 0.0);
  }
}

TEST_CASE("learning-rate schedule") {
  CHECK(lr_at(49, 1000, 0.05, 1e-3) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(lr_at(24, 1000, 0.05, 1e-3) == doctest::Approx(0.5e-3).epsilon(1e-15));
  CHECK(lr_at(0, 1000, 0.05, 1e-3) == doctest::Approx(1e-3 / 50));
  // Decay spans steps 50..1000; its midpoint is 525.
  CHECK(lr_at(525, 1000, 0.05, 1e-3) == doctest::Approx(0.5e-3).epsilon(1e-12));
  CHECK(lr_at(1000, 1000, 0.05, 1e-3) == doctest::Approx(0.0).epsilon(1e-18));
  CHECK(warmup_steps(1000, 0.05) == 50);
  CHECK(warmup_steps(7, 0.05) == 1);
  CHECK_THROWS_AS(lr_at(0, 0, 0.05, 1e-3), std::invalid_argument);

  for (std::size_t total : {20u, 100u, 333u, 1000u, 4000u}) {
    const auto w = warmup_steps(total, 0.05);
    CHECK(std::abs(lr_at(w - 1, total, 0.05, 1e-3) - lr_at(w, total, 0.05, 1e-3)) <= 1e-12 * 1e-3);
    double prev = lr_at(w, total, 0.05, 1e-3);
    for (std::size_t s = w + 1; s <= total; ++s) {
      const double cur = lr_at(s, total, 0.05, 1e-3);
      CHECK(cur <= prev);
      prev = cur;
    }
  }
  CHECK(lr_at(3, 10, 0.0, 2e-3) == doctest::Approx(0.5 * 2e-3 * (1 + std::cos(M_PI * 0.3))));
}

TEST_CASE("AdamW single steps") {
  TrainConfig cfg;
  SUBCASE("closed-form first step") {
    num::ParamStore p;
    p.add("w", Tensor({1}, 1.0));
    num::Gradients g;
    g.add("w", Tensor({1}, 1.0));
    auto st = OptimizerState::for_params(p);
    adamw_step(p, g, st, cfg, 1e-3);
    CHECK(p.at("w")[0] == doctest::Approx((1.0 - 1e-3 * 1e-2) - 1e-3 / (1.0 + 1e-8)).epsilon(1e-14));
    CHECK(p.at("w")[0] == doctest::Approx(0.99899).epsilon(1e-8));
    CHECK(st.step == 1);
  }
  SUBCASE("zero gradient and no decay leaves parameters alone") {
    cfg.weight_decay = 0.0;
    num::ParamStore p;
    p.add("w", Tensor({3}, std::vector<double>{0.5, -2.0, 7.0}));
    auto before = p;
    num::Gradients g = p.zeros_like();
    auto st = OptimizerState::for_params(p);
    for (int i = 0; i < 5; ++i) adamw_step(p, g, st, cfg, 1e-3);
    CHECK(p == before);
  }
  SUBCASE("decay applies to everything unless excluded") {
    num::ParamStore p;
    p.add("feat_embed", Tensor({2}, 1.0));
    p.add("head.w", Tensor({2}, 1.0));
    auto g = p.zeros_like();
    auto st = OptimizerState::for_params(p);
    adamw_step(p, g, st, cfg, 0.1);
    CHECK(p.at("feat_embed")[0] == doctest::Approx(1.0 - 0.1 * 1e-2));
    cfg.decay_exclude = {"feat_"};
    p.at("feat_embed").fill(1.0);
    p.at("head.w").fill(1.0);
    adamw_step(p, g, st, cfg, 0.1);
    CHECK(p.at("feat_embed")[0] == 1.0);
    CHECK(p.at("head.w")[0] == doctest::Approx(1.0 - 0.1 * 1e-2));
  }
  SUBCASE("non-finite gradient aborts with the parameter name") {
    num::ParamStore p;
    p.add("dialog.proj.w", Tensor({2}, 1.0));
    auto g = p.zeros_like();
    g.at("dialog.proj.w")[1] = std::nan("");
    auto st = OptimizerState::for_params(p);
    try {
      adamw_step(p, g, st, cfg, 1e-3);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("dialog.proj.w") != std::string::npos);
    }
  }
}

TEST_CASE("one clipped step moves each coordinate within the AdamW bound") {
  auto mcfg = tiny_config();
  auto params = model::init_params(mcfg, 3);
  Rng rng(4);
  auto examples = make_examples(2, mcfg, rng);
  TrainConfig cfg;
  cfg.model = mcfg;
  num::Gradients grads = params.zeros_like();
  for (const auto& ex : examples) {
    Tape tape;
    model::ForwardOptions fo;
    fo.train = true;
    fo.stream = Rng(1).split(ex.session_index);
    auto out = model::forward(tape, params, mcfg, model::input_from(ex), fo);
    tape.backward(compute_loss(out.prediction, ex.label_items, 0.5, 1.0));
    tape.accumulate_gradients(grads);
  }
  num::clip_global_norm(grads, 1.0);
  auto before = params;
  auto st = OptimizerState::for_params(params);
  const double lr = 1e-3;
  adamw_step(params, grads, st, cfg, lr);
  for (const auto& [name, t] : params) {
    const auto& b = before.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double bound = lr * (1.0 + cfg.weight_decay * std::abs(b[i])) + lr * cfg.weight_decay * std::abs(b[i]);
      CHECK(std::abs(t[i] - b[i]) <= bound);
    }
  }
}

TEST_CASE("early stopping arithmetic") {
  EarlyStopper s(8);
  std::size_t stopped_at = 0;
  for (std::size_t epoch = 1; epoch <= 100; ++epoch) {
    s.update(epoch, static_cast<double>(epoch));
    if (s.should_stop()) {
      stopped_at = epoch;
      break;
    }
  }
  CHECK(stopped_at == 9);
  CHECK(s.best_epoch() == 1);

  EarlyStopper t(2);
  CHECK(t.update(1, 5.0));
  CHECK_FALSE(t.update(2, 5.0));  // ties do not count as improvement
  CHECK(t.update(3, 4.0));
  CHECK_FALSE(t.should_stop());
}

TEST_CASE("training with steadily worse validation stops at epoch 9 and keeps epoch 1") {
  Rng rng(8);
  auto cfg = small_train_config();
  auto examples = make_examples(4, cfg.model, rng);
  std::vector<data::Example> train_set(examples.begin(), examples.begin() + 6);
  std::vector<data::Example> val_set(examples.begin() + 6, examples.end());
  cfg.max_epochs = 20;
  cfg.patience = 8;
  TrainHooks hooks;
  hooks.val_loss_override = [](std::size_t epoch, double) { return static_cast<double>(epoch); };
  std::vector<std::size_t> seen;
  hooks.on_epoch = [&](const EpochLog& e) { seen.push_back(e.epoch); };
  auto r = train(train_set, val_set, cfg, hooks);
  CHECK(r.epochs_run == 9);
  CHECK(r.stopped_early);
  CHECK(r.best_epoch == 1);
  CHECK(seen.size() == 9);

  // Patience 1 stops after epoch 2 with the same schedule, so its epoch-1 parameters are the reference.
  cfg.patience = 1;
  auto reference = train(train_set, val_set, cfg, hooks);
  CHECK(reference.epochs_run == 2);
  CHECK(reference.best_params == r.best_params);
}

TEST_CASE("overfitting a single example") {
  Rng rng(9);
  TrainConfig cfg;
  cfg.model = tiny_config();
  cfg.model.dropout = 0.0;
  cfg.batch_size = 1;
  cfg.max_epochs = 400;
  cfg.patience = 400;
  cfg.seed = 3;
  auto examples = make_examples(1, cfg.model, rng);
  std::vector<data::Example> one{examples[0]};
  // Interior targets: the sigmoid head reaches 0 and 3 only asymptotically.
  one[0].label_items = data::Items{2.5, 0.5, 1.0, 2.8, 0.3, 2.0, 1.5, 0.6};
  auto r = train(one, one, cfg);
  const auto& log = r.log;
  REQUIRE(log.size() == 400);
  CHECK(log.back().train_loss < 0.01 * log.front().train_loss);
  // Late-phase losses sit on a plateau below the early ones.
  for (std::size_t e = 200; e < 400; ++e) CHECK(log[e].train_loss <= log[10].train_loss);
  auto p = model::predict(r.best_params, cfg.model, model::input_from(one[0]));
  for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(p.items[j] - (*one[0].label_items)[j]) < 0.1);
  CHECK(std::abs(p.total - data::total_score(*one[0].label_items)) < 0.1);
}

TEST_CASE("training is deterministic for a seed") {
  Rng rng(10);
  auto cfg = small_train_config();
  auto examples = make_examples(5, cfg.model, rng);
  std::vector<data::Example> train_set(examples.begin(), examples.begin() + 8);
  std::vector<data::Example> val_set(examples.begin() + 8, examples.end());
  auto a = train(train_set, val_set, cfg);
  auto b = train(train_set, val_set, cfg);
  CHECK(a.best_params == b.best_params);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    auto ja = to_json(a.log[i]);
    auto jb = to_json(b.log[i]);
    ja.erase("seconds");
    jb.erase("seconds");
    CHECK(ja == jb);
  }
  cfg.seed = 18;
  auto c = train(train_set, val_set, cfg);
  CHECK_FALSE(c.best_params == a.best_params);
}

TEST_CASE("training rejects empty or unlabeled splits") {
  Rng rng(11);
  auto cfg = small_train_config();
  auto examples = make_examples(2, cfg.model, rng);
  CHECK_THROWS_AS(train({}, examples, cfg), DataError);
  CHECK_THROWS_AS(train(examples, {}, cfg), DataError);
  auto unlabeled = examples;
  unlabeled[1].label_items.reset();
  CHECK_THROWS_AS(train(unlabeled, examples, cfg), DataError);
}

TEST_CASE("checkpoint round-trip") {
  testutil::TempDir dir;
  Checkpoint c;
  c.model = tiny_config();
  c.model.memory = MemoryMode::summary;
  c.seed = 1234567890123ULL;
  c.params = model::init_params(c.model, 5);
  c.feature_stats = data::FeatureStats{{1.0, 2.0, 3.0, 4.0}, {0.5, 1e-6, 2.0, 3.0}};
  c.extra = {{"best_epoch", 3}};
  save_checkpoint(c, dir / "m.ckpt");
  auto back = load_checkpoint(dir / "m.ckpt");
  CHECK(back.params == c.params);
  CHECK(back.seed == c.seed);
  CHECK(to_json(back.model) == to_json(c.model));
  CHECK(back.feature_stats->std == c.feature_stats->std);
  CHECK(back.extra == c.extra);

  // Truncation and foreign files are reported as data errors.
  const auto size = std::filesystem::file_size(dir / "m.ckpt");
  std::filesystem::resize_file(dir / "m.ckpt", size - 8);
  CHECK_THROWS_AS(load_checkpoint(dir / "m.ckpt"), DataError);
  testutil::write_text(dir / "x.ckpt", "not a checkpoint");
  CHECK_THROWS_AS(load_checkpoint(dir / "x.ckpt"), DataError);
}
