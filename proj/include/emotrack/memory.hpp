#pragma once

#include <cstddef>

#include "emotrack/config.hpp"
#include "emotrack/layers.hpp"

namespace emotrack::memory {

using num::ForwardContext;
using num::ParamStore;
using emotrack::Rng;
using num::Var;

/// Adds the memory parameters for `cfg.memory` (nothing for MemoryMode::none):
///   mem.hist_proj          d_e -> d projection of previous-session turns
///   mem.summary_map        d -> d map of the pooled summary
///   mem.summary_gate       2d -> d gate of the summary update
/// and, with retrieval,
///   mem.slots              S x d slot queries
///   mem.slot_attn/slot_ln  slot construction
///   mem.retr_attn          symptom -> memory attention
///   mem.retr_gate/retr_out retrieval gate (2d -> d) and output map (d -> d)
void init_memory_params(ParamStore& params, const ModelConfig& cfg, const Rng& init_root);

/// V = U_prev W + b, row-wise. `history` is [M x d_e].
Var project_history(const ForwardContext& ctx, Var history);

/// M_mem = LN(MHA(P, V, V)) with S rows, keys limited by `mask` (empty = all).
Var build_slot_memory(const ForwardContext& ctx, const ModelConfig& cfg, Var projected, const num::KeyMask& mask);

/// C = MHA(D, M, M); D + sigmoid([D; C] W_g + b_g) * (C W_o + b_o).
Var retrieve_and_gate(const ForwardContext& ctx, const ModelConfig& cfg, Var states, Var slots);

/// v = mean(V) W_s + b_s broadcast to every row of D; D + sigmoid([D; v] W_g' + b_g') * v.
/// `projected` holds only real history rows.
Var summary_gate(const ForwardContext& ctx, Var states, Var projected);

/// Whether history feeds this forward pass. Without history: false. In eval
/// mode: true. In train mode: true with probability 1 - p_hist, drawn from `rng`.
bool history_gate(bool has_history, double p_hist, bool train, Rng& rng);

/// Retrieval update (when enabled) followed by the summary update.
/// `history` is [M x d_e] with real rows first; rows at or beyond
/// `history_count` are padding.
Var refine(const ForwardContext& ctx, const ModelConfig& cfg, Var states, const num::Tensor& history,
           std::size_t history_count);

}  // namespace emotrack::memory
