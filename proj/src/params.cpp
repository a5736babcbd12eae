#include "emotrack/params.hpp"

#include <cmath>
#include <stdexcept>

namespace emotrack::num {

Tensor& NamedTensors::add(const std::string& name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate tensor name: " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, std::move(value));
  return entries_.back().second;
}

Tensor& NamedTensors::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown tensor: " + name);
  return entries_[it->second].second;
}

const Tensor& NamedTensors::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown tensor: " + name);
  return entries_[it->second].second;
}

const Tensor* NamedTensors::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second].second;
}

std::size_t NamedTensors::total_elements() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

NamedTensors NamedTensors::zeros_like() const {
  NamedTensors out;
  for (const auto& [name, t] : entries_) out.add(name, Tensor::zeros_like(t));
  return out;
}

double global_norm(const NamedTensors& grads) {
  double sq = 0.0;
  for (const auto& [_, t] : grads) {
    for (double v : t.values()) sq += v * v;
  }
  return std::sqrt(sq);
}

double clip_global_norm(NamedTensors& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_global_norm: max_norm must be positive");
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& [_, t] : grads) t *= scale;
  }
  return norm;
}

}  // namespace emotrack::num
