#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "emotrack/tensor.hpp"

namespace emotrack::num {

/// Insertion-ordered collection of named tensors. Used for model parameters,
/// their gradients, and optimizer moments; iteration order is the insertion
/// order, which keeps serialization and reductions deterministic.
class NamedTensors {
 public:
  Tensor& add(const std::string& name, Tensor value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  const Tensor* find(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t total_elements() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Same names and shapes, all zeros.
  NamedTensors zeros_like() const;

  friend bool operator==(const NamedTensors& a, const NamedTensors& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ParamStore = NamedTensors;
using Gradients = NamedTensors;

/// Global L2 norm over every entry of every tensor.
double global_norm(const NamedTensors& grads);

/// Scales all gradients by max_norm / norm when the global norm exceeds max_norm.
/// Returns the norm measured before clipping.
double clip_global_norm(NamedTensors& grads, double max_norm);

}  // namespace emotrack::num
