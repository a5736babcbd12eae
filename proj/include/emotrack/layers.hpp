#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "emotrack/autodiff.hpp"
#include "emotrack/params.hpp"
#include "emotrack/rng.hpp"

namespace emotrack::num {

/// Everything a forward pass needs besides its inputs. Dropout draws come from
/// `rng`; with `train == false` dropout is the identity and `rng` may be null.
struct ForwardContext {
  Tape& tape;
  const ParamStore& params;
  bool train = false;
  double dropout = 0.0;
  Rng* rng = nullptr;

  Var param(const std::string& name) const { return tape.parameter(name, params.at(name)); }
  Var drop(Var x) const;
};

// ---- parameter initialization ---------------------------------------------
// Each tensor draws from its own stream keyed by name, so adding or removing a
// component never changes the initial values of the others.

void init_glorot(ParamStore& params, const std::string& name, std::size_t fan_in, std::size_t fan_out,
                 const Rng& root);
void init_normal(ParamStore& params, const std::string& name, Tensor::Shape shape, double stddev, const Rng& root);
void init_constant(ParamStore& params, const std::string& name, Tensor::Shape shape, double value);

/// Affine map parameters: `<prefix>.w` [in x out] and `<prefix>.b` [out].
void init_linear(ParamStore& params, const std::string& prefix, std::size_t in, std::size_t out, const Rng& root);
/// `<prefix>.gamma` = 1, `<prefix>.beta` = 0.
void init_layer_norm(ParamStore& params, const std::string& prefix, std::size_t d);
/// Query/value/output projections with biases and a key projection without one
/// (a key bias only shifts each score row by a constant, which softmax ignores).
void init_attention(ParamStore& params, const std::string& prefix, std::size_t d, const Rng& root);
/// Two-layer GELU feed-forward d -> d_ff -> d.
void init_feed_forward(ParamStore& params, const std::string& prefix, std::size_t d, std::size_t d_ff,
                       const Rng& root);

// ---- composite layers ------------------------------------------------------

Var apply_linear(const ForwardContext& ctx, const std::string& prefix, Var x);
Var apply_layer_norm(const ForwardContext& ctx, const std::string& prefix, Var x, double eps = 1e-5);

/// Multi-head scaled dot-product attention. Per head h of width d/heads:
/// softmax(Q_h K_h^T / sqrt(d/heads)) V_h over keys allowed by `key_mask`,
/// heads concatenated and passed through the output projection.
Var multi_head_attention(const ForwardContext& ctx, const std::string& prefix, Var queries, Var keys_values,
                         const KeyMask& key_mask, std::size_t heads);

Var feed_forward(const ForwardContext& ctx, const std::string& prefix, Var x);

}  // namespace emotrack::num
