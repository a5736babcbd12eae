#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "emotrack/errors.hpp"
#include "emotrack/synthgen.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace emotrack;
using namespace emotrack::synth;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

GeneratorConfig small_config() {
  GeneratorConfig c;
  c.n_clients = 40;
  c.client_turns = 3;
  c.counselor_turns = 3;
  c.embed_dim = 8;
  return c;
}

int sum(const ItemVector& v) {
  int s = 0;
  for (int x : v) s += x;
  return s;
}

}  // namespace

TEST_CASE("anchor chain: agreeing boundaries pass through") {
  const auto a = reconstruct_anchor_chain({Window{3, 5}, Window{5, 9}, Window{9, 12}, Window{12, 14}});
  CHECK(a == Anchors{3, 5, 9, 12, 14});
}

TEST_CASE("anchor chain: disagreeing boundary rounds the mean half up") {
  const auto a = reconstruct_anchor_chain({Window{2, 7}, Window{8, 8}, Window{8, 8}, Window{8, 8}});
  CHECK(a[1] == 8);
  const auto b = reconstruct_anchor_chain({Window{0, 4}, Window{7, 7}, Window{7, 7}, Window{7, 7}});
  CHECK(b[1] == 6);  // 5.5 -> 6
}

TEST_CASE("anchor chain: monotone windows give monotone anchors") {
  const auto a = reconstruct_anchor_chain({Window{20, 16}, Window{16, 11}, Window{11, 9}, Window{9, 2}});
  CHECK(std::is_sorted(a.begin(), a.end(), std::greater<>()));
  CHECK(a == Anchors{20, 16, 11, 9, 2});
}

TEST_CASE("anchor chain rejects out-of-range scores") {
  CHECK_THROWS_AS(reconstruct_anchor_chain({Window{0, 25}, Window{25, 3}, Window{3, 3}, Window{3, 3}}), DataError);
  CHECK_THROWS_AS(reconstruct_anchor_chain({Window{-1, 2}, Window{2, 3}, Window{3, 3}, Window{3, 3}}), DataError);
}

TEST_CASE("trend classes follow anchor deltas") {
  CHECK(classify_trend({10, 9, 8, 7, 6}) == Trend::improving);
  CHECK(classify_trend({6, 7, 8, 8, 9}) == Trend::worsening);
  CHECK(classify_trend({8, 14, 8, 13, 9}) == Trend::fluctuating);
  CHECK(classify_trend({8, 9, 8, 9, 10}) == Trend::stable);
  CHECK(classify_trend({4, 4, 4, 4, 9}) == Trend::worsening);
}

TEST_CASE("decompose_total boundary cases and determinism") {
  const auto buckets = build_buckets(42, 32);
  CHECK(decompose_total(0, buckets, 42, "p1", 1) == ItemVector{});
  ItemVector threes;
  threes.fill(3);
  CHECK(decompose_total(24, buckets, 42, "p1", 1) == threes);
  const auto a = decompose_total(11, buckets, 42, "p7", 3);
  const auto b = decompose_total(11, buckets, 42, "p7", 3);
  CHECK(a == b);
  CHECK(sum(a) == 11);
  CHECK_THROWS_AS(decompose_total(25, buckets, 42, "p1", 1), DataError);
  Buckets empty;
  CHECK_THROWS_AS(decompose_total(5, empty, 42, "p1", 1), DataError);
}

TEST_CASE("every bucket entry sums to its total and buckets are capped") {
  const auto buckets = build_buckets(7, 32);
  for (std::size_t t = 0; t < buckets.size(); ++t) {
    CHECK(!buckets[t].empty());
    CHECK(buckets[t].size() <= 32);
    for (const auto& v : buckets[t]) {
      CHECK(sum(v) == static_cast<int>(t));
      for (int x : v) CHECK((x >= 0 && x <= 3));
    }
  }
  CHECK(buckets[0].size() == 1);
  CHECK(buckets[1].size() == 8);
  CHECK(buckets[12].size() == 32);
}

TEST_CASE("noise-free sessions are exact functions of the items") {
  GeneratorConfig c = small_config();
  c.embed_noise = 0.0;
  c.feature_noise = 0.0;
  c.history_fraction = 0.0;
  const auto basis = make_basis(c);
  const ItemVector y{1, 0, 2, 3, 1, 0, 2, 1};
  const auto r1 = synthesize_session(y, std::nullopt, 1, "c", basis, c, Rng(1));
  const auto r2 = synthesize_session(y, std::nullopt, 1, "c", basis, c, Rng(999));
  REQUIRE(r1.turns.size() == r2.turns.size());
  for (std::size_t i = 0; i < r1.turns.size(); ++i) {
    if (r1.turns[i].speaker != data::Speaker::client) continue;
    CHECK(r1.turns[i].embedding == r2.turns[i].embedding);
    for (std::size_t k = 0; k < c.embed_dim; ++k) {
      double expect = 0.0;
      for (std::size_t j = 0; j < kSymptoms; ++j) expect += basis.embed_basis[k][j] * y[j];
      CHECK(r1.turns[i].embedding[k] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  CHECK(r1.features == r2.features);
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < kSymptoms; ++j) dot += basis.feature_weights[i][j] * y[j];
    const double expect = std::clamp(basis.feature_scale[i] * dot + basis.feature_offset[i], 0.0, 10.0);
    CHECK(r1.features[i] == doctest::Approx(expect).epsilon(1e-12));
  }
  CHECK(*r1.latent_items == data::Items{1, 0, 2, 3, 1, 0, 2, 1});
}

TEST_CASE("session synthesis: turn layout and determinism") {
  const GeneratorConfig c = small_config();
  const auto basis = make_basis(c);
  const ItemVector y{2, 2, 1, 0, 0, 1, 3, 1};
  const auto a = synthesize_session(y, y, 2, "c", basis, c, Rng(5));
  const auto b = synthesize_session(y, y, 2, "c", basis, c, Rng(5));
  CHECK(data::session_to_json(a) == data::session_to_json(b));
  REQUIRE(a.turns.size() == 6);
  for (std::size_t i = 0; i < a.turns.size(); ++i) {
    CHECK(a.turns[i].speaker == (i % 2 == 0 ? data::Speaker::counselor : data::Speaker::client));
    CHECK(a.turns[i].embedding.size() == c.embed_dim);
  }
  for (double f : a.features) CHECK((f >= 0.0 && f <= 10.0));
  CHECK(!a.labels);
}

TEST_CASE("history mask: fraction zero exposes every symptom in its own session") {
  GeneratorConfig c = small_config();
  c.history_fraction = 0.0;
  const auto mask = c.history_mask();
  for (bool m : mask) CHECK(!m);
  const ItemVector y{1, 2, 3, 0, 1, 2, 3, 0};
  const ItemVector next{3, 3, 3, 3, 3, 3, 3, 3};
  const auto s = expressed_vector(y, next, mask);
  for (std::size_t j = 0; j < kSymptoms; ++j) CHECK(s[j] == y[j]);
}

TEST_CASE("history mask: dependent symptoms carry the next visit, zero at the last") {
  GeneratorConfig c = small_config();
  c.history_fraction = 0.25;
  const auto mask = c.history_mask();
  CHECK(std::count(mask.begin(), mask.end(), true) == 2);
  const ItemVector y{1, 1, 1, 1, 1, 1, 1, 1};
  const ItemVector next{2, 2, 2, 2, 2, 2, 2, 2};
  const auto s = expressed_vector(y, next, mask);
  const auto last = expressed_vector(y, std::nullopt, mask);
  for (std::size_t j = 0; j < kSymptoms; ++j) {
    CHECK(s[j] == (mask[j] ? 2.0 : 1.0));
    CHECK(last[j] == (mask[j] ? 0.0 : 1.0));
  }
  c.history_symptoms = std::vector<std::size_t>{0, 5};
  const auto explicit_mask = c.history_mask();
  CHECK(explicit_mask[0]);
  CHECK(explicit_mask[5]);
  CHECK(std::count(explicit_mask.begin(), explicit_mask.end(), true) == 2);
}

TEST_CASE("self-report averaging") {
  std::vector<ItemVector> passes(5);
  const int item0[5] = {1, 1, 2, 2, 2};
  for (int p = 0; p < 5; ++p) passes[static_cast<std::size_t>(p)][0] = item0[p];
  const auto l = average_passes(passes);
  CHECK(l.items[0] == doctest::Approx(1.6).epsilon(1e-15));
  CHECK(l.total == doctest::Approx(1.6).epsilon(1e-15));

  const ItemVector y{0, 1, 2, 3, 3, 2, 1, 0};
  const auto exact = simulate_self_report(y, 5, 0.0, Rng(3));
  for (std::size_t j = 0; j < kSymptoms; ++j) CHECK(exact.items[j] == y[j]);

  Rng r(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto noisy = simulate_self_report(y, 5, 0.3, r.split(static_cast<std::uint64_t>(trial)));
    double s = 0.0;
    for (std::size_t j = 0; j < kSymptoms; ++j) {
      s += noisy.items[j];
      CHECK((noisy.items[j] >= 0.0 && noisy.items[j] <= 3.0));
    }
    CHECK(std::abs(noisy.total - s) <= 1e-12);
  }
  CHECK_THROWS(simulate_self_report(y, 0, 0.1, Rng(1)));
}

TEST_CASE("generate_corpus: counts, split sizes and anchor sums") {
  GeneratorConfig c = small_config();
  c.n_clients = 200;
  const auto g = generate_corpus(c);
  CHECK(g.corpus.trajectories.size() == 200);
  CHECK(g.corpus.session_count() == 1000);
  CHECK(g.manifest.count(data::Split::train) == 140);
  CHECK(g.manifest.count(data::Split::val) == 20);
  CHECK(g.manifest.count(data::Split::test) == 40);
  REQUIRE(g.latents.size() == 200);
  std::array<int, 4> per_trend{};
  for (std::size_t i = 0; i < g.latents.size(); ++i) {
    const auto& lt = g.latents[i];
    const auto& traj = g.corpus.trajectories[i];
    CHECK(lt.run_id == traj.run_id);
    CHECK(classify_trend(lt.anchors) == lt.trend);
    ++per_trend[static_cast<std::size_t>(lt.trend)];
    REQUIRE(traj.sessions.size() == kVisits);
    for (std::size_t t = 0; t < kVisits; ++t) {
      const auto& s = traj.sessions[t];
      CHECK(s.session_index == static_cast<int>(t + 1));
      CHECK(sum(lt.items[t]) == lt.anchors[t]);
      CHECK(oracle::latent_total(s) == lt.anchors[t]);
      REQUIRE(s.labels);
      CHECK(s.features.size() == kFeatureCount);
    }
  }
  for (int n : per_trend) CHECK(n == 50);
}

TEST_CASE("same config writes byte-identical corpora that load back") {
  const GeneratorConfig c = small_config();
  testutil::TempDir d1, d2;
  write_corpus(generate_corpus(c), d1.path());
  write_corpus(generate_corpus(c), d2.path());
  CHECK(slurp(d1.path() / "corpus.jsonl") == slurp(d2.path() / "corpus.jsonl"));
  CHECK(slurp(d1.path() / "split_manifest.json") == slurp(d2.path() / "split_manifest.json"));
  const auto loaded = data::load_dataset(d1.path() / "corpus.jsonl");
  CHECK(loaded.session_count() == c.n_clients * kVisits);
  CHECK(loaded.embed_dim == c.embed_dim);

  GeneratorConfig other = c;
  other.seed = 43;
  testutil::TempDir d3;
  write_corpus(generate_corpus(other), d3.path());
  CHECK(slurp(d1.path() / "corpus.jsonl") != slurp(d3.path() / "corpus.jsonl"));
}

TEST_CASE("generator config parsing") {
  testutil::TempDir dir;
  const auto p = dir.path() / "gen.cfg";
  testutil::write_text(p, "n_clients = 12\nembed_dim = 16\nhistory_symptoms = 1,4\nsplit_ratios = 0.5,0.25,0.25\n");
  const auto c = generator_config_from(KeyValueConfig::load(p));
  CHECK(c.n_clients == 12);
  CHECK(c.embed_dim == 16);
  REQUIRE(c.history_symptoms);
  CHECK(*c.history_symptoms == std::vector<std::size_t>{1, 4});
  CHECK(c.split_ratios[1] == 0.25);

  GeneratorConfig bad;
  bad.p_flip = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = GeneratorConfig{};
  bad.split_ratios = {0.5, 0.5, 0.5};
  try {
    bad.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("split_ratios") != std::string::npos);
  }
  bad = GeneratorConfig{};
  bad.history_symptoms = std::vector<std::size_t>{8};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("label fidelity matches the enumerated expectation") {
  GeneratorConfig c = small_config();
  c.n_clients = 200;  // 1000 sessions
  const auto g = generate_corpus(c);
  double observed = 0.0, expected = 0.0;
  std::size_t n = 0;
  for (const auto& traj : g.corpus.trajectories) {
    for (const auto& s : traj.sessions) {
      for (std::size_t j = 0; j < kSymptoms; ++j) {
        const int latent = static_cast<int>((*s.latent_items)[j]);
        observed += std::abs(s.labels->items[j] - latent);
        expected += oracle::expected_label_error(latent, 5, 0.1);
        ++n;
      }
    }
  }
  observed /= static_cast<double>(n);
  expected /= static_cast<double>(n);
  MESSAGE("label error observed " << observed << ", expected " << expected);
  CHECK(observed < 0.15);
  // 8000 item draws with per-item sd near 0.1: the sample mean sits within ~0.003
  CHECK(std::abs(observed - expected) < 0.01);
}

TEST_CASE("least squares recovers the total from session embeddings") {
  GeneratorConfig c;  // default noise levels
  const auto g = generate_corpus(c);
  const auto r = oracle::ols_total(g.corpus, g.manifest, false);
  MESSAGE("ols mae " << r.model_mae << " vs mean baseline " << r.baseline_mae);
  CHECK(r.model_mae < r.baseline_mae);
}

TEST_CASE("previous-session embeddings add signal when symptoms are history-dependent") {
  GeneratorConfig c;
  c.history_fraction = 0.25;
  const auto g = generate_corpus(c);
  const auto now = oracle::ols_total(g.corpus, g.manifest, false);
  const auto both = oracle::ols_total(g.corpus, g.manifest, true);
  MESSAGE("current-only " << now.model_mae << ", with previous " << both.model_mae);
  CHECK(both.model_mae < now.model_mae);
}
