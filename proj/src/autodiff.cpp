#include "emotrack/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "emotrack/rng.hpp"

namespace emotrack::num {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const MatR>;
using MMap = Eigen::Map<MatR>;

CMap cmap(const Tensor& t) { return CMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())); }
MMap mmap(Tensor& t) { return MMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())); }

Tape& tape_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("operation on an unrecorded Var");
  return *a.tape();
}

void check_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("operands recorded on different tapes");
}

[[noreturn]] void shape_error(std::string_view op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                              b.shape_string());
}

}  // namespace

// ---- Var / Tape -------------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.own = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const std::string& name, const Tensor& value) {
  if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var(this, it->second);
  Node n;
  n.op = "parameter";
  n.ref = &value;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  param_ids_.emplace(name, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(op, std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  if (backward_done_) throw std::logic_error("tape already consumed by backward()");
  Node n;
  n.op = std::string(op);
  n.own = std::move(value);
  for (const auto& in : inputs) {
    if (in.valid() && in.tape() != this) throw std::invalid_argument(n.op + ": input from another tape");
    if (in.valid() && nodes_[in.id()].requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(std::size_t id) const { return nodes_.at(id).value(); }

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor::zeros_like(n.value());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss from another tape");
  if (backward_done_) throw std::logic_error("backward() may run once per tape");
  const Tensor& lv = value(loss.id());
  if (lv.size() != 1) throw std::invalid_argument("backward: loss must be a scalar, got shape " + lv.shape_string());
  backward_done_ = true;
  grad_buffer(loss.id()).fill(1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    if (!corrupt_op_.empty() && n.op == corrupt_op_) {
      Tensor g = n.grad;
      g *= corrupt_factor_;
      n.backward(*this, g);
    } else {
      // Copy-free: the closure only writes into input buffers, never into this node's.
      n.backward(*this, n.grad);
    }
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  return n.has_grad ? n.grad : Tensor::zeros_like(n.value());
}

Gradients Tape::gradients(const ParamStore& params) const {
  Gradients out;
  for (const auto& [name, value] : params) {
    auto it = param_ids_.find(name);
    if (it != param_ids_.end() && nodes_[it->second].has_grad) {
      out.add(name, nodes_[it->second].grad);
    } else {
      out.add(name, Tensor::zeros_like(value));
    }
  }
  return out;
}

void Tape::accumulate_gradients(Gradients& into) const {
  for (const auto& [name, id] : param_ids_) {
    if (!nodes_[id].has_grad) continue;
    Tensor& dst = into.at(name);
    const Tensor& g = nodes_[id].grad;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  }
}

// ---- primitives -------------------------------------------------------------

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  Tensor out = Tensor::zeros(av.rows(), bv.cols());
  mmap(out).noalias() = cmap(av) * cmap(bv);
  return tape_of(a).record("matmul", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a.id())) mmap(t.grad_buffer(a.id())).noalias() += cmap(g) * cmap(t.value(b.id())).transpose();
    if (t.requires_grad(b.id())) mmap(t.grad_buffer(b.id())).noalias() += cmap(t.value(a.id())).transpose() * cmap(g);
  });
}

Var matmul_nt(Var a, Var b) {
  check_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) shape_error("matmul_nt", av, bv);
  Tensor out = Tensor::zeros(av.rows(), bv.rows());
  mmap(out).noalias() = cmap(av) * cmap(bv).transpose();
  return tape_of(a).record("matmul_nt", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a.id())) mmap(t.grad_buffer(a.id())).noalias() += cmap(g) * cmap(t.value(b.id()));
    if (t.requires_grad(b.id())) mmap(t.grad_buffer(b.id())).noalias() += cmap(g).transpose() * cmap(t.value(a.id()));
  });
}

Var linear(Var x, Var w, Var b) {
  check_same_tape(x, w);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.cols() != wv.rows()) shape_error("linear", xv, wv);
  Tensor out = Tensor::zeros(xv.rows(), wv.cols());
  auto om = mmap(out);
  om.noalias() = cmap(xv) * cmap(wv);
  if (b.valid()) {
    check_same_tape(x, b);
    const Tensor& bv = b.value();
    if (bv.size() != wv.cols()) shape_error("linear bias", wv, bv);
    om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data(), static_cast<Eigen::Index>(bv.size()));
  }
  return tape_of(x).record("linear", std::move(out), {x, w, b}, [x, w, b](Tape& t, const Tensor& g) {
    auto gm = cmap(g);
    if (t.requires_grad(x.id())) mmap(t.grad_buffer(x.id())).noalias() += gm * cmap(t.value(w.id())).transpose();
    if (t.requires_grad(w.id())) mmap(t.grad_buffer(w.id())).noalias() += cmap(t.value(x.id())).transpose() * gm;
    if (b.valid() && t.requires_grad(b.id())) {
      Tensor& gb = t.grad_buffer(b.id());
      Eigen::Map<Eigen::RowVectorXd>(gb.data(), static_cast<Eigen::Index>(gb.size())) += gm.colwise().sum();
    }
  });
}

Var add(Var a, Var b) {
  check_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.size() != bv.size()) shape_error("add", av, bv);
  Tensor out = av;
  out += bv;
  return tape_of(a).record("add", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a.id())) t.grad_buffer(a.id()) += g;
    if (t.requires_grad(b.id())) t.grad_buffer(b.id()) += g;
  });
}

Var add_row(Var a, Var row) {
  check_same_tape(a, row);
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  if (rv.size() != av.cols()) shape_error("add_row", av, rv);
  Tensor out = av;
  const std::size_t n = av.rows(), m = av.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += rv[j];
  return tape_of(a).record("add_row", std::move(out), {a, row}, [a, row, n, m](Tape& t, const Tensor& g) {
    if (t.requires_grad(a.id())) t.grad_buffer(a.id()) += g;
    if (t.requires_grad(row.id())) {
      Tensor& gr = t.grad_buffer(row.id());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gr[j] += g[i * m + j];
    }
  });
}

Var mul(Var a, Var b) {
  check_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.size() != bv.size()) shape_error("mul", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return tape_of(a).record("mul", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a.id());
    const Tensor& bv = t.value(b.id());
    if (t.requires_grad(a.id())) {
      Tensor& ga = t.grad_buffer(a.id());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b.id())) {
      Tensor& gb = t.grad_buffer(b.id());
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  out *= s;
  return tape_of(a).record("scale", std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var add_scalar(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v += s;
  return tape_of(a).record("add_scalar", std::move(out), {a}, [a](Tape& t, const Tensor& g) { t.grad_buffer(a.id()) += g; });
}

Var sigmoid(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  return tape_of(a).record("sigmoid", std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a.id());
    Tensor& ga = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-av[i]));
      ga[i] += g[i] * s * (1.0 - s);
    }
  });
}

Var clamp(Var a, double lo, double hi) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::min(std::max(v, lo), hi);
  return tape_of(a).record("clamp", std::move(out), {a}, [a, lo, hi](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a.id());
    Tensor& ga = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] >= lo && av[i] <= hi) ga[i] += g[i];
    }
  });
}

Var gelu(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return tape_of(a).record("gelu", std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a.id());
    Tensor& ga = t.grad_buffer(a.id());
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = av[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      ga[i] += g[i] * (cdf + x * pdf);
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  check_same_tape(x, gamma);
  check_same_tape(x, beta);
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  if (gv.size() != d || bv.size() != d) shape_error("layer_norm", xv, gv);
  Tensor out({n, d});
  Tensor xhat({n, d});
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xv[r * d + j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xv[r * d + j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xv[r * d + j] - mean) * inv_std[r];
      xhat[r * d + j] = h;
      out[r * d + j] = gv[j] * h + bv[j];
    }
  }
  return tape_of(x).record(
      "layer_norm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
        const Tensor& gv = t.value(gamma.id());
        if (t.requires_grad(gamma.id())) {
          Tensor& gg = t.grad_buffer(gamma.id());
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
        }
        if (t.requires_grad(beta.id())) {
          Tensor& gb = t.grad_buffer(beta.id());
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
        }
        if (t.requires_grad(x.id())) {
          Tensor& gx = t.grad_buffer(x.id());
          for (std::size_t r = 0; r < n; ++r) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[r * d + j] * gv[j];
              mean_dh += dh;
              mean_dh_h += dh * xhat[r * d + j];
            }
            mean_dh /= static_cast<double>(d);
            mean_dh_h /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[r * d + j] * gv[j];
              gx[r * d + j] += inv_std[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
            }
          }
        }
      });
}

Var softmax_rows(Var scores, const KeyMask& mask) {
  const Tensor& sv = scores.value();
  const std::size_t n = sv.rows(), m = sv.cols();
  if (!mask.empty() && mask.size() != m) {
    throw std::invalid_argument("softmax_rows: mask length " + std::to_string(mask.size()) + " vs " +
                                std::to_string(m) + " keys");
  }
  if (!mask.empty() && std::none_of(mask.begin(), mask.end(), [](auto v) { return v != 0; })) {
    throw std::invalid_argument("softmax_rows: every key is masked");
  }
  Tensor out({n, m});
  for (std::size_t r = 0; r < n; ++r) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < m; ++j)
      if (mask.empty() || mask[j]) mx = std::max(mx, sv[r * m + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double e = (mask.empty() || mask[j]) ? std::exp(sv[r * m + j] - mx) : 0.0;
      out[r * m + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] /= z;
  }
  Tape& tape = tape_of(scores);
  // The closure reads the probabilities back from the node being recorded.
  const std::size_t out_id = tape.size();
  return tape.record("softmax", std::move(out), {scores}, [scores, n, m, out_id](Tape& t, const Tensor& g) {
    const Tensor& p = t.value(out_id);
    Tensor& gs = t.grad_buffer(scores.id());
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += g[r * m + j] * p[r * m + j];
      for (std::size_t j = 0; j < m; ++j) gs[r * m + j] += p[r * m + j] * (g[r * m + j] - dot);
    }
  });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  const Tensor& av = a.value();
  const std::size_t n = av.rows(), m = av.cols();
  if (start + count > m) throw std::invalid_argument("slice_cols out of range on " + av.shape_string());
  Tensor out({n, count});
  for (std::size_t r = 0; r < n; ++r)
    std::copy_n(av.data() + r * m + start, count, out.data() + r * count);
  return tape_of(a).record("slice_cols", std::move(out), {a}, [a, n, m, start, count](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a.id());
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < count; ++j) ga[r * m + start + j] += g[r * count + j];
  });
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
  const Tensor& av = a.value();
  const std::size_t n = av.rows(), m = av.cols();
  if (start + count > n) throw std::invalid_argument("slice_rows out of range on " + av.shape_string());
  Tensor out({count, m});
  std::copy_n(av.data() + start * m, count * m, out.data());
  return tape_of(a).record("slice_rows", std::move(out), {a}, [a, m, start, count](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < count * m; ++i) ga[start * m + i] += g[i];
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t n = parts[0].value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    check_same_tape(parts[0], p);
    if (p.value().rows() != n) shape_error("concat_cols", parts[0].value(), p.value());
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Tensor out({n, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t r = 0; r < n; ++r) std::copy_n(pv.data() + r * widths[k], widths[k], out.data() + r * total + off);
    off += widths[k];
  }
  return tape_of(parts[0]).record("concat_cols", std::move(out), parts, [parts, widths, n, total](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (t.requires_grad(parts[k].id())) {
        Tensor& gp = t.grad_buffer(parts[k].id());
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < widths[k]; ++j) gp[r * widths[k] + j] += g[r * total + off + j];
      }
      off += widths[k];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t m = parts[0].value().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    check_same_tape(parts[0], p);
    if (p.value().cols() != m) shape_error("concat_rows", parts[0].value(), p.value());
    total += p.value().rows();
  }
  Tensor out({total, m});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), out.data() + off);
    off += p.value().size();
  }
  return tape_of(parts[0]).record("concat_rows", std::move(out), parts, [parts](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t sz = t.value(p.id()).size();
      if (t.requires_grad(p.id())) {
        Tensor& gp = t.grad_buffer(p.id());
        for (std::size_t i = 0; i < sz; ++i) gp[i] += g[off + i];
      }
      off += sz;
    }
  });
}

Var mean_rows(Var a) {
  const Tensor& av = a.value();
  const std::size_t n = av.rows(), m = av.cols();
  if (n == 0) throw std::invalid_argument("mean_rows on empty tensor");
  Tensor out(Tensor::Shape{m});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < m; ++j) out[j] += av[r * m + j];
  out *= 1.0 / static_cast<double>(n);
  return tape_of(a).record("mean_rows", std::move(out), {a}, [a, n, m](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a.id());
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < m; ++j) ga[r * m + j] += g[j] * inv;
  });
}

Var broadcast_rows(Var row, std::size_t n) {
  const Tensor& rv = row.value();
  const std::size_t m = rv.size();
  Tensor out({n, m});
  for (std::size_t r = 0; r < n; ++r) std::copy_n(rv.data(), m, out.data() + r * m);
  return tape_of(row).record("broadcast_rows", std::move(out), {row}, [row, n, m](Tape& t, const Tensor& g) {
    Tensor& gr = t.grad_buffer(row.id());
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < m; ++j) gr[j] += g[r * m + j];
  });
}

Var row_sum(Var a) {
  const Tensor& av = a.value();
  const std::size_t n = av.rows(), m = av.cols();
  Tensor out(Tensor::Shape{n});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < m; ++j) out[r] += av[r * m + j];
  return tape_of(a).record("row_sum", std::move(out), {a}, [a, n, m](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a.id());
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < m; ++j) ga[r * m + j] += g[r];
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return tape_of(a).record("sum", Tensor::vector({s}), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a.id());
    for (auto& v : ga.values()) v += g[0];
  });
}

Var huber(Var a, const Tensor& targets, double delta) {
  const Tensor& av = a.value();
  if (av.size() != targets.size()) shape_error("huber", av, targets);
  if (!(delta > 0.0)) throw std::invalid_argument("huber: delta must be positive");
  Tensor out = Tensor::zeros_like(av);
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double r = av[i] - targets[i];
    const double ar = std::abs(r);
    out[i] = ar <= delta ? 0.5 * r * r : delta * (ar - 0.5 * delta);
  }
  return tape_of(a).record("huber", std::move(out), {a}, [a, targets, delta](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a.id());
    Tensor& ga = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double r = av[i] - targets[i];
      ga[i] += g[i] * std::clamp(r, -delta, delta);
    }
  });
}

Var dropout(Var a, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout probability must lie in [0, 1)");
  if (p == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor mask = Tensor::zeros_like(a.value());
  for (auto& v : mask.values()) v = rng.uniform() < p ? 0.0 : keep_scale;
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return tape_of(a).record("dropout", std::move(out), {a}, [a, mask = std::move(mask)](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
  });
}

}  // namespace emotrack::num
