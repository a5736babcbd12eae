#include "emotrack/model.hpp"

#include <cmath>
#include <stdexcept>

#include "emotrack/data.hpp"
#include "emotrack/memory.hpp"

namespace emotrack::model {

namespace {

constexpr double kLogitBound = 30.0;

std::string block(const char* stack, std::size_t l) { return std::string(stack) + "." + std::to_string(l); }

bool uses_features(const ModelConfig& c) { return c.input_source != InputSource::dialogue; }
bool uses_dialogue(const ModelConfig& c) { return c.input_source != InputSource::features; }

}  // namespace

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Rng root = Rng(seed).split("init");
  const std::size_t d = cfg.d;
  ParamStore p;
  if (uses_features(cfg)) {
    num::init_linear(p, "score.fc1", 1, cfg.score_hidden, root);
    num::init_linear(p, "score.fc2", cfg.score_hidden, d, root);
    num::init_normal(p, "feat_embed", {cfg.num_features, d}, 0.02, root);
    num::init_normal(p, "group_embed", {3, d}, 0.02, root);
  }
  if (uses_dialogue(cfg)) {
    num::init_linear(p, "dialog.proj", cfg.embed_dim, d, root);
    num::init_layer_norm(p, "dialog.ln", d);
  }
  for (std::size_t l = 0; l < cfg.enc_layers; ++l) {
    const auto b = block("enc", l);
    num::init_layer_norm(p, b + ".ln1", d);
    num::init_attention(p, b + ".attn", d, root);
    num::init_layer_norm(p, b + ".ln2", d);
    num::init_feed_forward(p, b + ".ffn", d, cfg.d_ff, root);
  }
  if (cfg.enc_layers > 0) num::init_layer_norm(p, "enc.final_ln", d);
  if (cfg.readout == Readout::symptom_query) {
    num::init_normal(p, "queries", {cfg.num_symptoms, d}, 0.02, root);
    for (std::size_t l = 0; l < cfg.dec_layers; ++l) {
      const auto b = block("dec", l);
      if (cfg.query_self_attention) {
        num::init_layer_norm(p, b + ".ln_self", d);
        num::init_attention(p, b + ".self_attn", d, root);
      }
      num::init_layer_norm(p, b + ".ln_cross", d);
      num::init_attention(p, b + ".cross_attn", d, root);
      num::init_layer_norm(p, b + ".ln_ff", d);
      num::init_feed_forward(p, b + ".ffn", d, cfg.d_ff, root);
    }
    if (cfg.dec_layers > 0) num::init_layer_norm(p, "dec.final_ln", d);
  }
  memory::init_memory_params(p, cfg, root);
  num::init_glorot(p, "head.w", cfg.num_symptoms, d, root);
  num::init_constant(p, "head.b", {cfg.num_symptoms}, 0.0);
  return p;
}

std::size_t parameter_count(const ModelConfig& cfg) { return init_params(cfg, 0).total_elements(); }

SessionInput input_from(const data::Example& ex) {
  SessionInput in;
  in.features_z = &ex.features_z;
  in.turns = &ex.turns;
  in.turn_count = ex.turn_count;
  if (ex.history) {
    in.history = &*ex.history;
    in.history_count = ex.history->rows();
  }
  return in;
}

Tensor positional_encoding(std::size_t n, std::size_t d) {
  Tensor pe({n, d});
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * freq;
      pe.at(pos, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Var embed_clinical_features(const ForwardContext& ctx, const ModelConfig& cfg, const std::vector<double>& z) {
  const std::size_t f = cfg.num_features;
  if (z.size() != f) {
    throw std::invalid_argument("expected " + std::to_string(f) + " normalized features, got " + std::to_string(z.size()));
  }
  Var scores = ctx.tape.constant(Tensor({f, 1}, z));
  Var hidden = num::gelu(num::apply_linear(ctx, "score.fc1", scores));
  Var mlp = num::apply_linear(ctx, "score.fc2", hidden);

  const auto groups = cfg.resolved_group_map();
  Tensor onehot({f, 3});
  for (std::size_t i = 0; i < f; ++i) onehot.at(i, static_cast<std::size_t>(groups[i] - 1)) = 1.0;
  Var group = num::matmul(ctx.tape.constant(std::move(onehot)), ctx.param("group_embed"));

  return ctx.drop(num::add(num::add(mlp, ctx.param("feat_embed")), group));
}

Var embed_dialogue_turns(const ForwardContext& ctx, const ModelConfig& cfg, const Tensor& turns) {
  if (turns.cols() != cfg.embed_dim) {
    throw std::invalid_argument("turn embedding width " + std::to_string(turns.cols()) + " does not match d_e " +
                                std::to_string(cfg.embed_dim));
  }
  Var projected = num::apply_linear(ctx, "dialog.proj", ctx.tape.constant(turns));
  Var normed = num::apply_layer_norm(ctx, "dialog.ln", projected, cfg.ln_eps);
  Var tokens = num::add(normed, ctx.tape.constant(positional_encoding(turns.rows(), cfg.d)));
  return ctx.drop(tokens);
}

Var encode_session(const ForwardContext& ctx, const ModelConfig& cfg, Var x, const num::KeyMask& mask) {
  for (std::size_t l = 0; l < cfg.enc_layers; ++l) {
    const auto b = block("enc", l);
    Var h = num::apply_layer_norm(ctx, b + ".ln1", x, cfg.ln_eps);
    x = num::add(x, num::multi_head_attention(ctx, b + ".attn", h, h, mask, cfg.heads));
    h = num::apply_layer_norm(ctx, b + ".ln2", x, cfg.ln_eps);
    x = num::add(x, num::feed_forward(ctx, b + ".ffn", h));
  }
  if (cfg.enc_layers > 0) x = num::apply_layer_norm(ctx, "enc.final_ln", x, cfg.ln_eps);
  return x;
}

Var decode_symptoms(const ForwardContext& ctx, const ModelConfig& cfg, Var encoded, const num::KeyMask& mask) {
  Var q = ctx.param("queries");
  for (std::size_t l = 0; l < cfg.dec_layers; ++l) {
    const auto b = block("dec", l);
    if (cfg.query_self_attention) {
      Var h = num::apply_layer_norm(ctx, b + ".ln_self", q, cfg.ln_eps);
      q = num::add(q, num::multi_head_attention(ctx, b + ".self_attn", h, h, {}, cfg.heads));
    }
    Var h = num::apply_layer_norm(ctx, b + ".ln_cross", q, cfg.ln_eps);
    q = num::add(q, num::multi_head_attention(ctx, b + ".cross_attn", h, encoded, mask, cfg.heads));
    h = num::apply_layer_norm(ctx, b + ".ln_ff", q, cfg.ln_eps);
    q = num::add(q, num::feed_forward(ctx, b + ".ffn", h));
  }
  if (cfg.dec_layers > 0) q = num::apply_layer_norm(ctx, "dec.final_ln", q, cfg.ln_eps);
  return q;
}

Prediction predict_items(const ForwardContext& ctx, Var states) {
  Var logits = num::add(num::row_sum(num::mul(states, ctx.param("head.w"))), ctx.param("head.b"));
  // 3 sigmoid(30) is below 3 by about 3e-13; beyond that the double would round to the endpoint.
  Var items = num::scale(num::sigmoid(num::clamp(logits, -kLogitBound, kLogitBound)), 3.0);
  return {items, num::sum(items)};
}

ForwardResult forward(num::Tape& tape, const ParamStore& params, const ModelConfig& cfg, const SessionInput& input,
                      const ForwardOptions& options) {
  if (options.train && !options.stream) throw std::logic_error("train-mode forward needs a per-example stream");
  std::optional<Rng> dropout_rng, memory_rng, gate_rng;
  if (options.stream) {
    dropout_rng = options.stream->split("dropout");
    memory_rng = options.stream->split("memory-dropout");
    gate_rng = options.stream->split("history-gate");
  }
  ForwardContext ctx{tape, params, options.train, cfg.dropout, dropout_rng ? &*dropout_rng : nullptr};

  std::vector<Var> parts;
  num::KeyMask mask;
  if (uses_features(cfg)) {
    if (input.features_z == nullptr) throw std::invalid_argument("forward: missing features");
    parts.push_back(embed_clinical_features(ctx, cfg, *input.features_z));
    mask.assign(cfg.num_features, 1);
  }
  if (uses_dialogue(cfg)) {
    if (input.turns == nullptr || input.turn_count == 0 || input.turn_count > input.turns->rows()) {
      throw std::invalid_argument("forward: a session needs between 1 and its row count of real turns");
    }
    parts.push_back(embed_dialogue_turns(ctx, cfg, *input.turns));
    mask.resize(mask.size() + input.turns->rows(), 0);
    std::fill_n(mask.end() - static_cast<std::ptrdiff_t>(input.turns->rows()), input.turn_count, 1);
  }
  Var tokens = parts.size() == 1 ? parts.front() : num::concat_rows(parts);
  Var encoded = encode_session(ctx, cfg, tokens, mask);

  Var states;
  if (cfg.readout == Readout::symptom_query) {
    states = decode_symptoms(ctx, cfg, encoded, mask);
  } else {
    // Real rows are contiguous from the top; padding only trails the dialogue block.
    std::size_t real = 0;
    for (auto m : mask) real += m;
    Var kept = real == mask.size() ? encoded : num::slice_rows(encoded, 0, real);
    states = num::broadcast_rows(num::mean_rows(kept), cfg.num_symptoms);
  }

  ForwardResult result;
  const bool has_history = cfg.memory != MemoryMode::none && input.history != nullptr && input.history_count > 0;
  Rng fallback(0);
  result.used_history = memory::history_gate(has_history, options.p_hist, options.train, gate_rng ? *gate_rng : fallback);
  if (result.used_history) {
    ForwardContext mem_ctx{tape, params, options.train, cfg.dropout, memory_rng ? &*memory_rng : nullptr};
    states = memory::refine(mem_ctx, cfg, states, *input.history, input.history_count);
  }
  result.states = states;
  result.prediction = predict_items(ctx, states);
  return result;
}

ItemPrediction predict(const ParamStore& params, const ModelConfig& cfg, const SessionInput& input) {
  num::Tape tape;
  auto r = forward(tape, params, cfg, input);
  const auto& items = r.prediction.items.value();
  return {std::vector<double>(items.values().begin(), items.values().end()), r.prediction.total.value()[0]};
}

}  // namespace emotrack::model
