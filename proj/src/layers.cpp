#include "emotrack/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace emotrack::num {

Var ForwardContext::drop(Var x) const {
  if (!train || dropout <= 0.0) return x;
  if (rng == nullptr) throw std::logic_error("training-mode forward requires a dropout stream");
  return num::dropout(x, dropout, *rng);
}

void init_glorot(ParamStore& params, const std::string& name, std::size_t fan_in, std::size_t fan_out,
                 const Rng& root) {
  Rng rng = root.split(name);
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t({fan_in, fan_out});
  for (auto& v : t.values()) v = (2.0 * rng.uniform() - 1.0) * limit;
  params.add(name, std::move(t));
}

void init_normal(ParamStore& params, const std::string& name, Tensor::Shape shape, double stddev, const Rng& root) {
  Rng rng = root.split(name);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = stddev * rng.normal();
  params.add(name, std::move(t));
}

void init_constant(ParamStore& params, const std::string& name, Tensor::Shape shape, double value) {
  params.add(name, Tensor(std::move(shape), value));
}

void init_linear(ParamStore& params, const std::string& prefix, std::size_t in, std::size_t out, const Rng& root) {
  init_glorot(params, prefix + ".w", in, out, root);
  init_constant(params, prefix + ".b", {out}, 0.0);
}

void init_layer_norm(ParamStore& params, const std::string& prefix, std::size_t d) {
  init_constant(params, prefix + ".gamma", {d}, 1.0);
  init_constant(params, prefix + ".beta", {d}, 0.0);
}

void init_attention(ParamStore& params, const std::string& prefix, std::size_t d, const Rng& root) {
  init_linear(params, prefix + ".q", d, d, root);
  init_glorot(params, prefix + ".k.w", d, d, root);
  init_linear(params, prefix + ".v", d, d, root);
  init_linear(params, prefix + ".o", d, d, root);
}

void init_feed_forward(ParamStore& params, const std::string& prefix, std::size_t d, std::size_t d_ff,
                       const Rng& root) {
  init_linear(params, prefix + ".fc1", d, d_ff, root);
  init_linear(params, prefix + ".fc2", d_ff, d, root);
}

Var apply_linear(const ForwardContext& ctx, const std::string& prefix, Var x) {
  return linear(x, ctx.param(prefix + ".w"), ctx.param(prefix + ".b"));
}

Var apply_layer_norm(const ForwardContext& ctx, const std::string& prefix, Var x, double eps) {
  return layer_norm(x, ctx.param(prefix + ".gamma"), ctx.param(prefix + ".beta"), eps);
}

Var multi_head_attention(const ForwardContext& ctx, const std::string& prefix, Var queries, Var keys_values,
                         const KeyMask& key_mask, std::size_t heads) {
  const std::size_t d = queries.value().cols();
  if (heads == 0 || d % heads != 0) {
    throw std::invalid_argument("attention width " + std::to_string(d) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Var q = apply_linear(ctx, prefix + ".q", queries);
  Var k = linear(keys_values, ctx.param(prefix + ".k.w"), Var{});
  Var v = apply_linear(ctx, prefix + ".v", keys_values);

  std::vector<Var> per_head;
  per_head.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = heads == 1 ? q : slice_cols(q, h * dh, dh);
    Var kh = heads == 1 ? k : slice_cols(k, h * dh, dh);
    Var vh = heads == 1 ? v : slice_cols(v, h * dh, dh);
    Var probs = softmax_rows(scale(matmul_nt(qh, kh), inv_scale), key_mask);
    probs = ctx.drop(probs);
    per_head.push_back(matmul(probs, vh));
  }
  Var joined = heads == 1 ? per_head.front() : concat_cols(per_head);
  return apply_linear(ctx, prefix + ".o", joined);
}

Var feed_forward(const ForwardContext& ctx, const std::string& prefix, Var x) {
  Var h = gelu(apply_linear(ctx, prefix + ".fc1", x));
  return ctx.drop(apply_linear(ctx, prefix + ".fc2", h));
}

}  // namespace emotrack::num
