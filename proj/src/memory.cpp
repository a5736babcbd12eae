#include "emotrack/memory.hpp"

#include <stdexcept>

namespace emotrack::memory {

void init_memory_params(ParamStore& params, const ModelConfig& cfg, const Rng& root) {
  if (cfg.memory == MemoryMode::none) return;
  const std::size_t d = cfg.d;
  num::init_linear(params, "mem.hist_proj", cfg.embed_dim, d, root);
  num::init_linear(params, "mem.summary_map", d, d, root);
  num::init_linear(params, "mem.summary_gate", 2 * d, d, root);
  if (cfg.memory != MemoryMode::summary_retrieval) return;
  num::init_normal(params, "mem.slots", {cfg.memory_slots, d}, 0.02, root);
  num::init_attention(params, "mem.slot_attn", d, root);
  num::init_layer_norm(params, "mem.slot_ln", d);
  num::init_attention(params, "mem.retr_attn", d, root);
  num::init_linear(params, "mem.retr_gate", 2 * d, d, root);
  num::init_linear(params, "mem.retr_out", d, d, root);
}

Var project_history(const ForwardContext& ctx, Var history) {
  const auto& w = ctx.params.at("mem.hist_proj.w");
  if (history.value().cols() != w.rows()) {
    throw std::invalid_argument("history embedding width " + std::to_string(history.value().cols()) +
                                " does not match d_e " + std::to_string(w.rows()));
  }
  return num::apply_linear(ctx, "mem.hist_proj", history);
}

Var build_slot_memory(const ForwardContext& ctx, const ModelConfig& cfg, Var projected, const num::KeyMask& mask) {
  Var read = num::multi_head_attention(ctx, "mem.slot_attn", ctx.param("mem.slots"), projected, mask, cfg.heads);
  return num::apply_layer_norm(ctx, "mem.slot_ln", read, cfg.ln_eps);
}

Var retrieve_and_gate(const ForwardContext& ctx, const ModelConfig& cfg, Var states, Var slots) {
  Var c = num::multi_head_attention(ctx, "mem.retr_attn", states, slots, {}, cfg.heads);
  Var gate = num::sigmoid(num::apply_linear(ctx, "mem.retr_gate", num::concat_cols({states, c})));
  return num::add(states, num::mul(gate, num::apply_linear(ctx, "mem.retr_out", c)));
}

Var summary_gate(const ForwardContext& ctx, Var states, Var projected) {
  const std::size_t j = states.value().rows();
  Var pooled = num::apply_linear(ctx, "mem.summary_map", num::mean_rows(projected));
  Var v = num::broadcast_rows(pooled, j);
  Var gate = num::sigmoid(num::apply_linear(ctx, "mem.summary_gate", num::concat_cols({states, v})));
  return num::add(states, num::mul(gate, v));
}

bool history_gate(bool has_history, double p_hist, bool train, Rng& rng) {
  if (p_hist < 0.0 || p_hist > 1.0) throw std::invalid_argument("p_hist must lie in [0, 1]");
  if (!has_history) return false;
  if (!train) return true;
  return !rng.bernoulli(p_hist);
}

Var refine(const ForwardContext& ctx, const ModelConfig& cfg, Var states, const num::Tensor& history,
           std::size_t history_count) {
  if (cfg.memory == MemoryMode::none) return states;
  if (history_count == 0 || history_count > history.rows()) {
    throw std::invalid_argument("history needs between 1 and " + std::to_string(history.rows()) + " real rows");
  }
  Var v = project_history(ctx, ctx.tape.constant(history));
  if (cfg.memory == MemoryMode::summary_retrieval) {
    num::KeyMask mask(history.rows(), 0);
    std::fill_n(mask.begin(), history_count, 1);
    states = retrieve_and_gate(ctx, cfg, states, build_slot_memory(ctx, cfg, v, mask));
  }
  Var real = history_count == history.rows() ? v : num::slice_rows(v, 0, history_count);
  return summary_gate(ctx, states, real);
}

}  // namespace emotrack::memory
