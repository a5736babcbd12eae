#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "emotrack/params.hpp"
#include "emotrack/tensor.hpp"

namespace emotrack {
class Rng;
}

namespace emotrack::num {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Key-position validity for attention: true means the key may be attended.
using KeyMask = std::vector<std::uint8_t>;

/// Reverse-mode autodiff tape. Operations append nodes in execution order;
/// backward() visits them once each in reverse. Parameters are recorded by
/// reference, so the ParamStore must outlive the tape and stay unmodified
/// while it is in use.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf for a named parameter; repeated calls with one name return the same node.
  Var parameter(const std::string& name, const Tensor& value);

  /// Records an op. Backward is dropped when no input carries a gradient.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer for a node, allocated as zeros on first use.
  Tensor& grad_buffer(std::size_t id);

  /// Runs reverse accumulation from a single-element loss.
  void backward(Var loss);

  /// dloss/dv after backward(); zeros when v received no gradient.
  Tensor grad(Var v) const;

  /// Gradients for every entry of params (zeros for entries not on the tape).
  Gradients gradients(const ParamStore& params) const;

  /// Adds each parameter gradient on this tape into the same-named entry of `into`.
  void accumulate_gradients(Gradients& into) const;

  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(std::size_t id) const { return nodes_[id].op; }

  /// Test hook: multiplies the upstream gradient entering every node with this op name.
  void set_corrupt_op(std::string op, double factor = 1.5) {
    corrupt_op_ = std::move(op);
    corrupt_factor_ = factor;
  }

 private:
  struct Node {
    std::string op;
    Tensor own;
    const Tensor* ref = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
    const Tensor& value() const { return ref ? *ref : own; }
  };

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_ids_;
  bool backward_done_ = false;
  std::string corrupt_op_;
  double corrupt_factor_ = 1.0;
};

// ---- primitive operations -------------------------------------------------
// All operate on the 2-D view of their inputs unless noted.

Var matmul(Var a, Var b);     ///< [n x k] * [k x m]
Var matmul_nt(Var a, Var b);  ///< [n x k] * [m x k]^T
/// x * w + b with w stored [in x out] and b of length out (b may be invalid for no bias).
Var linear(Var x, Var w, Var b);
Var add(Var a, Var b);        ///< same shape
Var add_row(Var a, Var row);  ///< row broadcast over every row of a
Var mul(Var a, Var b);        ///< elementwise, same shape
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var sigmoid(Var a);
/// min(max(a, lo), hi); the gradient passes only where lo <= a <= hi.
Var clamp(Var a, double lo, double hi);
Var gelu(Var a);              ///< exact erf form
/// Row-wise layer normalization with population variance.
Var layer_norm(Var x, Var gamma, Var beta, double eps);
/// Row-wise softmax; keys with mask==0 get exactly zero weight. Empty mask means none masked.
Var softmax_rows(Var scores, const KeyMask& mask = {});
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var slice_rows(Var a, std::size_t start, std::size_t count);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var mean_rows(Var a);                     ///< [n x m] -> [m]
Var broadcast_rows(Var row, std::size_t n);  ///< [m] -> [n x m]
Var row_sum(Var a);                       ///< [n x m] -> [n]
Var sum(Var a);                           ///< -> [1]
/// Elementwise Huber of a against constant targets (same size).
Var huber(Var a, const Tensor& targets, double delta);
/// Inverted dropout with keep probability 1 - p; identity when p == 0.
Var dropout(Var a, double p, Rng& rng);

}  // namespace emotrack::num
