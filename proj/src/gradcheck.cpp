#include "emotrack/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "emotrack/layers.hpp"
#include "emotrack/model.hpp"
#include "emotrack/rng.hpp"
#include "emotrack/training.hpp"

namespace emotrack::gradcheck {

using num::Tensor;

const ParamCheck* Report::worst() const {
  const ParamCheck* w = nullptr;
  for (const auto& p : params)
    if (!w || p.worst_error > w->worst_error) w = &p;
  return w;
}

Report check(const std::string& subject, ParamStore params, const LossFn& loss, const Options& opt) {
  Report report;
  report.subject = subject;

  num::Gradients analytic;
  {
    Tape tape;
    if (!opt.corrupt_op.empty()) tape.set_corrupt_op(opt.corrupt_op);
    Var l = loss(tape, params);
    tape.backward(l);
    analytic = tape.gradients(params);
  }
  auto evaluate = [&] {
    Tape tape;
    return loss(tape, params).value()[0];
  };

  for (auto& [name, tensor] : params) {
    ParamCheck pc;
    pc.name = name;
    pc.count = tensor.size();
    const Tensor& a = analytic.at(name);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double saved = tensor[i];
      tensor[i] = saved + opt.step;
      const double up = evaluate();
      tensor[i] = saved - opt.step;
      const double down = evaluate();
      tensor[i] = saved;
      const double f = (up - down) / (2.0 * opt.step);
      const double err = std::abs(a[i] - f) / std::max({std::abs(a[i]), std::abs(f), 1e-8});
      if (err > opt.tolerance) ++pc.failures;
      if (i == 0 || err > pc.worst_error) {
        pc.worst_error = err;
        pc.worst_index = i;
        pc.analytic = a[i];
        pc.numeric = f;
      }
    }
    if (pc.failures) report.passed = false;
    report.params.push_back(pc);
  }
  return report;
}

namespace {

Tensor random(Tensor::Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

/// Reduces an op output to a scalar with fixed random weights so every output
/// coordinate contributes a distinct amount.
Var weighted_sum(Tape& tape, Var out, std::uint64_t seed) {
  Rng r = Rng(seed).split("readout");
  Tensor w = random(out.value().shape(), r);
  return num::sum(num::mul(out, tape.constant(std::move(w))));
}

struct OpCase {
  std::string name;
  std::vector<std::pair<std::string, Tensor>> inputs;
  std::function<Var(Tape&, const ParamStore&, const std::vector<Var>&)> body;
};

}  // namespace

std::vector<Report> check_ops(const Options& opt) {
  Rng rng = Rng(opt.seed).split("gradcheck-ops");
  std::vector<OpCase> cases;
  auto shape = [&](std::size_t r, std::size_t c) { return random({r, c}, rng); };
  auto vec = [&](std::size_t n) { return random({n}, rng); };

  cases.push_back({"matmul", {{"a", shape(3, 4)}, {"b", shape(4, 2)}},
                   [](Tape&, const ParamStore&, const std::vector<Var>& x) { return num::matmul(x[0], x[1]); }});
  cases.push_back({"matmul_nt", {{"a", shape(3, 4)}, {"b", shape(5, 4)}},
                   [](Tape&, const ParamStore&, const std::vector<Var>& x) { return num::matmul_nt(x[0], x[1]); }});
  cases.push_back({"linear", {{"x", shape(3, 4)}, {"w", shape(4, 2)}, {"b", vec(2)}},
                   [](Tape&, const ParamStore&, const std::vector<Var>& x) { return num::linear(x[0], x[1], x[2]); }});
  cases.push_back({"add", {{"a", shape(2, 3)}, {"b", shape(2, 3)}},
                   [](Tape&, const ParamStore&, const std::vector<Var>& x) { return num::add(x[0], x[1]); }});
  cases.push_back({"add_row", {{"a", shape(3, 4)}, {"r", vec(4)}},
                   [](Tape&, const ParamStore&, const std::vector<Var>& x) { return num::add_row(x[0], x[1]); }});
  cases.push_back({"mul", {{"a", shape(2, 3)}, {"b", shape(2, 3)}},
                   [](Tape&, const ParamStore&, const std::vector<Var>& x) { return num::mul(x[0], x[1]); }});
  cases.push_back({"scale", {{"a", shape(2, 3)}},
                   [](Tape&, const ParamStore&, const std::vector<Var>& x) { return num::scale(x[0], -1.7); }});
  cases.push_back({"add_scalar", {{"a", shape(2, 3)}},
                   [](Tape&, const ParamStore&, const std::vector<Var>& x) { return num::add_scalar(x[0], 0.3); }});
  cases.push_back({"sigmoid", {{"a", shape(3, 3)}},
                   [](Tape&, const ParamStore&, const std::vector<Var>& x) { return num::sigmoid(x[0]); }});
  cases.push_back({"clamp", {{"a", shape(3, 3)}},
                   [](Tape&, const ParamStore&, const std::vector<Var>& x) { return num::clamp(x[0], -0.8, 0.9); }});
  cases.push_back({"gelu", {{"a", shape(3, 3)}},
                   [](Tape&, const ParamStore&, const std::vector<Var>& x) { return num::gelu(x[0]); }});
  cases.push_back({"layer_norm", {{"x", shape(3, 5)}, {"gamma", vec(5)}, {"beta", vec(5)}},
                   [](Tape&, const ParamStore&, const std::vector<Var>& x) {
                     return num::layer_norm(x[0], x[1], x[2], 1e-5);
                   }});
  cases.push_back({"softmax", {{"s", shape(3, 5)}},
                   [](Tape&, const ParamStore&, const std::vector<Var>& x) {
                     return num::softmax_rows(x[0], num::KeyMask{1, 0, 1, 1, 0});
                   }});
  cases.push_back({"slice_cols", {{"a", shape(3, 5)}},
                   [](Tape&, const ParamStore&, const std::vector<Var>& x) { return num::slice_cols(x[0], 1, 3); }});
  cases.push_back({"slice_rows", {{"a", shape(4, 3)}},
                   [](Tape&, const ParamStore&, const std::vector<Var>& x) { return num::slice_rows(x[0], 1, 2); }});
  cases.push_back({"concat_cols", {{"a", shape(3, 2)}, {"b", shape(3, 3)}},
                   [](Tape&, const ParamStore&, const std::vector<Var>& x) { return num::concat_cols({x[0], x[1]}); }});
  cases.push_back({"concat_rows", {{"a", shape(2, 3)}, {"b", shape(1, 3)}},
                   [](Tape&, const ParamStore&, const std::vector<Var>& x) { return num::concat_rows({x[0], x[1]}); }});
  cases.push_back({"mean_rows", {{"a", shape(4, 3)}},
                   [](Tape&, const ParamStore&, const std::vector<Var>& x) { return num::mean_rows(x[0]); }});
  cases.push_back({"broadcast_rows", {{"r", vec(3)}},
                   [](Tape&, const ParamStore&, const std::vector<Var>& x) { return num::broadcast_rows(x[0], 4); }});
  cases.push_back({"row_sum", {{"a", shape(4, 3)}},
                   [](Tape&, const ParamStore&, const std::vector<Var>& x) { return num::row_sum(x[0]); }});
  cases.push_back({"sum", {{"a", shape(2, 3)}},
                   [](Tape&, const ParamStore&, const std::vector<Var>& x) { return num::sum(x[0]); }});
  {
    // residuals on both branches, none within a step of the kink
    Tensor pred = Tensor::vector({0.2, -0.4, 2.5, -3.0, 0.9, 1.6});
    cases.push_back({"huber", {{"p", pred}}, [](Tape&, const ParamStore&, const std::vector<Var>& x) {
                       return num::huber(x[0], Tensor::vector({0.0, 0.0, 0.0, 0.0, 0.0, 0.0}), 1.0);
                     }});
  }
  cases.push_back({"dropout", {{"a", shape(3, 4)}}, [seed = opt.seed](Tape&, const ParamStore&, const std::vector<Var>& x) {
                     Rng r = Rng(seed).split("dropout-case");
                     return num::dropout(x[0], 0.3, r);
                   }});
  {
    ParamStore attn;
    num::init_attention(attn, "attn", 8, Rng(opt.seed).split("attention-case"));
    std::vector<std::pair<std::string, Tensor>> inputs{{"q", shape(3, 8)}, {"kv", shape(5, 8)}};
    for (const auto& [n, t] : attn) inputs.emplace_back(n, t);
    cases.push_back({"attention", inputs, [](Tape& tape, const ParamStore& p, const std::vector<Var>& x) {
                       num::ForwardContext ctx{tape, p};
                       return num::multi_head_attention(ctx, "attn", x[0], x[1], num::KeyMask{1, 1, 0, 1, 1}, 2);
                     }});
  }

  std::vector<Report> reports;
  for (const auto& c : cases) {
    ParamStore store;
    std::vector<std::string> names;
    for (const auto& [n, t] : c.inputs) {
      store.add(n, t);
      names.push_back(n);
    }
    const std::uint64_t readout_seed = hash_string(c.name);
    reports.push_back(check(c.name, std::move(store),
                            [&c, names, readout_seed](Tape& tape, const ParamStore& p) {
                              std::vector<Var> xs;
                              for (const auto& n : names) xs.push_back(tape.parameter(n, p.at(n)));
                              return weighted_sum(tape, c.body(tape, p, xs), readout_seed);
                            },
                            opt));
  }
  return reports;
}

ModelConfig tiny_model_config() {
  ModelConfig c;
  c.d = 8;
  c.heads = 2;
  c.d_ff = 16;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.num_features = 4;
  c.group_map = {1, 1, 2, 3};
  c.memory_slots = 4;
  c.max_turns = 6;
  c.embed_dim = 6;
  c.memory = MemoryMode::summary_retrieval;
  return c;
}

Report check_model(const ModelConfig& cfg, const Options& opt) {
  cfg.validate();
  Rng rng = Rng(opt.seed).split("gradcheck-model");
  const std::size_t n = cfg.max_turns;
  std::vector<double> z(cfg.num_features);
  for (auto& v : z) v = rng.normal();
  const Tensor turns = random({n, cfg.embed_dim}, rng);
  const Tensor history = random({n, cfg.embed_dim}, rng);
  data::Items labels{};
  for (auto& v : labels) v = 0.3 + 2.4 * rng.uniform();

  model::SessionInput input;
  input.features_z = &z;
  input.turns = &turns;
  input.turn_count = n > 1 ? n - 1 : n;  // one padded row
  input.history = &history;
  input.history_count = n > 2 ? n - 2 : n;

  // Fresh initialization is a degenerate point: slot queries start near zero,
  // so every slot holds the same summary and retrieval query/key gradients sit
  // around 1e-8, below what a 1e-5 central difference resolves. A generic
  // point is obtained by perturbing every parameter with N(0, 0.3^2).
  ParamStore params = model::init_params(cfg, opt.seed);
  Rng jitter = rng.split("jitter");
  for (auto& [name, t] : params)
    for (auto& v : t.values()) v += 0.3 * jitter.normal();

  return check("model", std::move(params),
               [&](Tape& tape, const ParamStore& p) {
                 const auto out = model::forward(tape, p, cfg, input);
                 return training::compute_loss(out.prediction, labels, 0.5, 1.0);
               },
               opt);
}

nlohmann::json to_json(const Report& r) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : r.params) {
    params.push_back({{"name", p.name},
                      {"count", p.count},
                      {"worst_index", p.worst_index},
                      {"worst_rel_error", p.worst_error},
                      {"analytic", p.analytic},
                      {"numeric", p.numeric},
                      {"failures", p.failures}});
  }
  nlohmann::json j{{"subject", r.subject}, {"passed", r.passed}, {"params", params}};
  if (const auto* w = r.worst()) j["worst"] = {{"name", w->name}, {"rel_error", w->worst_error}};
  return j;
}

}  // namespace emotrack::gradcheck
