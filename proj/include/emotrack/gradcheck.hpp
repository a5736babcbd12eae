#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "emotrack/autodiff.hpp"
#include "emotrack/config.hpp"

namespace emotrack::gradcheck {

using num::ParamStore;
using num::Tape;
using num::Var;

struct Options {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Negative control: scale the upstream gradient of every node with this op name.
  std::string corrupt_op;
  std::uint64_t seed = 0;
};

/// Worst coordinate of one parameter tensor. Relative error is
/// |a - f| / max(|a|, |f|, 1e-8) with a analytic and f the central difference.
struct ParamCheck {
  std::string name;
  std::size_t count = 0;
  std::size_t worst_index = 0;
  double worst_error = 0.0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t failures = 0;
};

struct Report {
  std::string subject;
  std::vector<ParamCheck> params;
  bool passed = true;

  const ParamCheck* worst() const;
};

/// Builds a scalar loss on a fresh tape from the given parameters.
using LossFn = std::function<Var(Tape&, const ParamStore&)>;

/// Compares backward() against central differences for every coordinate of every parameter.
Report check(const std::string& subject, ParamStore params, const LossFn& loss, const Options& opt);

/// One check per primitive (and attention), each on small random inputs.
std::vector<Report> check_ops(const Options& opt);

/// The architecture used for the whole-model check: d=8, two heads, four
/// features, six turns, eight symptoms, four slots, one encoder and one
/// decoder layer, summary and retrieval memory.
ModelConfig tiny_model_config();

/// Full objective (item and total Huber terms) of the tiny model on one random
/// session with history, eval mode.
Report check_model(const ModelConfig& cfg, const Options& opt);

nlohmann::json to_json(const Report& r);

}  // namespace emotrack::gradcheck
