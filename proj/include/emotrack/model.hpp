#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "emotrack/config.hpp"
#include "emotrack/layers.hpp"

namespace emotrack::data {
struct Example;
}

namespace emotrack::model {

using num::ForwardContext;
using num::ParamStore;
using emotrack::Rng;
using num::Tensor;
using num::Var;

/// Fresh parameters for `cfg`. Every tensor draws from Rng(seed).split("init")
/// split by its name: Glorot-uniform matrices, N(0, 0.02) embeddings and
/// queries, zero biases, unit layer-norm gains.
ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Number of scalar parameters init_params would create.
std::size_t parameter_count(const ModelConfig& cfg);

/// One session as the model sees it. Rows of `turns` at or beyond
/// `turn_count` are padding and never influence the real outputs; the same
/// holds for `history` and `history_count`.
struct SessionInput {
  const std::vector<double>* features_z = nullptr;
  const Tensor* turns = nullptr;
  std::size_t turn_count = 0;
  const Tensor* history = nullptr;
  std::size_t history_count = 0;
};

SessionInput input_from(const data::Example& ex);

/// Sinusoidal position codes, [n x d]: sin on even columns, cos on odd ones.
Tensor positional_encoding(std::size_t n, std::size_t d);

/// h_i = MLP_score(z_i) + e_feat_i + e_group_g(i), [F x d].
Var embed_clinical_features(const ForwardContext& ctx, const ModelConfig& cfg, const std::vector<double>& z);

/// LN(U W_proj + b_proj) + positional code, [N x d].
Var embed_dialogue_turns(const ForwardContext& ctx, const ModelConfig& cfg, const Tensor& turns);

/// L_enc pre-norm blocks over [clinical; dialogue]; keys outside `mask` are never attended.
Var encode_session(const ForwardContext& ctx, const ModelConfig& cfg, Var tokens, const num::KeyMask& mask);

/// L_dec blocks starting from the symptom queries; returns D, [J x d].
Var decode_symptoms(const ForwardContext& ctx, const ModelConfig& cfg, Var encoded, const num::KeyMask& mask);

struct Prediction {
  Var items;  ///< [J], each in (0, 3)
  Var total;  ///< [1], in (0, 24)
};

/// y_j = 3 sigmoid(w_j . d_j + b_j), logit clamped to [-30, 30], and their sum.
Prediction predict_items(const ForwardContext& ctx, Var states);

struct ForwardOptions {
  bool train = false;
  /// Per-example stream in train mode; dropout, memory dropout and the history
  /// gate each use their own labelled split of it.
  std::optional<Rng> stream;
  double p_hist = 0.0;
};

struct ForwardResult {
  Prediction prediction;
  Var states;
  bool used_history = false;
};

ForwardResult forward(num::Tape& tape, const ParamStore& params, const ModelConfig& cfg, const SessionInput& input,
                      const ForwardOptions& options = {});

/// Eval-mode prediction without gradient bookkeeping beyond the tape's lifetime.
struct ItemPrediction {
  std::vector<double> items;
  double total = 0.0;
};
ItemPrediction predict(const ParamStore& params, const ModelConfig& cfg, const SessionInput& input);

}  // namespace emotrack::model
