#include "gf3d/diffcore/graph.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "gf3d/diffcore/nn.h"
#include "gf3d/errors.h"

namespace gf3d {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(std::span<const double> d, std::size_t r, std::size_t c) {
  return ConstMap(d.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

MutMap as_matrix(std::span<double> d, std::size_t r, std::size_t c) {
  return MutMap(d.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

void require_same_graph(Var a, Var b) {
  if (a.graph != b.graph || a.graph == nullptr) throw UsageError("operands belong to different graphs");
}

void require_same_shape(const char* op, Var a, Var b) {
  require_same_graph(a, b);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

// log(sigmoid(x)) without overflow.
double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---- Var / GradientMap -----------------------------------------------------

const Tensor& Var::value() const { return graph->value(id); }
bool Var::requires_grad() const { return graph->needs_grad(id); }

const Tensor& GradientMap::of(Var v) const {
  auto it = grads_.find(v.id);
  if (it == grads_.end()) throw UsageError("no gradient recorded for this value");
  return it->second;
}

// ---- Graph -----------------------------------------------------------------

Var Graph::push(Node node) {
  if (nodes_.size() >= std::numeric_limits<std::uint32_t>::max()) throw UsageError("graph too large");
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.leaf = true;
  return push(std::move(n));
}

Var Graph::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.leaf = true;
  n.requires_grad = grad_enabled_;
  return push(std::move(n));
}

Var Graph::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var{this, it->second};
  Node n;
  n.value = p.value;
  n.leaf = true;
  n.requires_grad = grad_enabled_;
  n.param = &p;
  Var v = push(std::move(n));
  param_nodes_.emplace(&p, v.id);
  return v;
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Graph::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (const Var& in : inputs) {
      if (in.graph != this) throw UsageError("operand recorded on a different graph");
      if (nodes_[in.id].requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

std::span<double> Graph::grad_accum(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.numel(), 0.0);
  return n.grad;
}

GradientMap Graph::backward(Var loss) {
  if (loss.graph != this) throw UsageError("loss recorded on a different graph");
  const Tensor& lv = nodes_[loss.id].value;
  if (lv.numel() != 1) throw UsageError("backward() needs a scalar loss, got shape " + shape_string(lv.shape()));
  if (!nodes_[loss.id].requires_grad) {
    throw UsageError("loss is not connected to any value that requires a gradient");
  }
  grad_accum(loss.id)[0] = 1.0;
  for (std::int64_t i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, static_cast<std::uint32_t>(i));
  }
  GradientMap out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (!n.leaf || !n.requires_grad) continue;
    if (n.grad.empty()) n.grad.assign(n.value.numel(), 0.0);
    if (n.param != nullptr) {
      Parameter& p = *n.param;
      if (p.grad.size() != n.grad.size()) p.grad.assign(n.grad.size(), 0.0);
      for (std::size_t k = 0; k < n.grad.size(); ++k) p.grad[k] += n.grad[k];
    }
    out.grads_.emplace(static_cast<std::uint32_t>(i), Tensor::unchecked(n.value.shape(), std::move(n.grad)));
  }
  clear();
  return out;
}

void Graph::clear() {
  nodes_.clear();
  param_nodes_.clear();
}

// ---- linear algebra --------------------------------------------------------

Var matmul(Var a, Var b) {
  require_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(av.shape()) + " by " +
                         shape_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  std::vector<double> out(m * n);
  as_matrix(std::span<double>(out), m, n).noalias() = as_matrix(av.data(), m, k) * as_matrix(bv.data(), k, n);
  const auto ia = a.id, ib = b.id;
  return a.graph->record(Tensor::unchecked({m, n}, std::move(out)), {a, b}, [ia, ib, m, k, n](Graph& g, std::uint32_t self) {
    auto dc = as_matrix(g.grad(self), m, n);
    if (g.needs_grad(ia)) {
      as_matrix(g.grad_accum(ia), m, k).noalias() += dc * as_matrix(g.value(ib).data(), k, n).transpose();
    }
    if (g.needs_grad(ib)) {
      as_matrix(g.grad_accum(ib), k, n).noalias() += as_matrix(g.value(ia).data(), m, k).transpose() * dc;
    }
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(1)) {
    throw DimensionError("matmul_nt: cannot multiply " + shape_string(av.shape()) + " by transpose of " +
                         shape_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  std::vector<double> out(m * n);
  as_matrix(std::span<double>(out), m, n).noalias() =
      as_matrix(av.data(), m, k) * as_matrix(bv.data(), n, k).transpose();
  const auto ia = a.id, ib = b.id;
  return a.graph->record(Tensor::unchecked({m, n}, std::move(out)), {a, b}, [ia, ib, m, k, n](Graph& g, std::uint32_t self) {
    auto dc = as_matrix(g.grad(self), m, n);
    if (g.needs_grad(ia)) {
      as_matrix(g.grad_accum(ia), m, k).noalias() += dc * as_matrix(g.value(ib).data(), n, k);
    }
    if (g.needs_grad(ib)) {
      as_matrix(g.grad_accum(ib), n, k).noalias() += dc.transpose() * as_matrix(g.value(ia).data(), m, k);
    }
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  if (av.rank() != 2) throw DimensionError("transpose: expected a matrix, got " + shape_string(av.shape()));
  const std::size_t r = av.dim(0), c = av.dim(1);
  std::vector<double> out(r * c);
  as_matrix(std::span<double>(out), c, r) = as_matrix(av.data(), r, c).transpose();
  const auto ia = a.id;
  return a.graph->record(Tensor::unchecked({c, r}, std::move(out)), {a}, [ia, r, c](Graph& g, std::uint32_t self) {
    as_matrix(g.grad_accum(ia), r, c) += as_matrix(g.grad(self), c, r).transpose();
  });
}

// ---- elementwise -----------------------------------------------------------

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  const auto& x = a.value().values();
  const auto& y = b.value().values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  const auto ia = a.id, ib = b.id;
  return a.graph->record(Tensor::unchecked(a.shape(), std::move(out)), {a, b}, [ia, ib](Graph& g, std::uint32_t self) {
    auto dy = g.grad(self);
    for (auto id : {ia, ib}) {
      if (!g.needs_grad(id)) continue;
      auto d = g.grad_accum(id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  const auto& x = a.value().values();
  const auto& y = b.value().values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  const auto ia = a.id, ib = b.id;
  return a.graph->record(Tensor::unchecked(a.shape(), std::move(out)), {a, b}, [ia, ib](Graph& g, std::uint32_t self) {
    auto dy = g.grad(self);
    if (g.needs_grad(ia)) {
      auto d = g.grad_accum(ia);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    }
    if (g.needs_grad(ib)) {
      auto d = g.grad_accum(ib);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= dy[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  const auto& x = a.value().values();
  const auto& y = b.value().values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  const auto ia = a.id, ib = b.id;
  return a.graph->record(Tensor::unchecked(a.shape(), std::move(out)), {a, b}, [ia, ib](Graph& g, std::uint32_t self) {
    auto dy = g.grad(self);
    if (g.needs_grad(ia)) {
      const auto& yv = g.value(ib).values();
      auto d = g.grad_accum(ia);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * yv[i];
    }
    if (g.needs_grad(ib)) {
      const auto& xv = g.value(ia).values();
      auto d = g.grad_accum(ib);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * xv[i];
    }
  });
}

Var add_row(Var a, Var bias) {
  require_same_graph(a, bias);
  const std::size_t r = a.rows(), c = a.cols();
  if (bias.value().numel() != c) {
    throw DimensionError("add_row: bias " + shape_string(bias.shape()) + " does not match columns of " +
                         shape_string(a.shape()));
  }
  const auto& x = a.value().values();
  const auto& b = bias.value().values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + b[j];
  }
  const auto ia = a.id, ib = bias.id;
  return a.graph->record(Tensor::unchecked(a.shape(), std::move(out)), {a, bias}, [ia, ib, r, c](Graph& g, std::uint32_t self) {
    auto dy = g.grad(self);
    if (g.needs_grad(ia)) {
      auto d = g.grad_accum(ia);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    }
    if (g.needs_grad(ib)) {
      auto d = g.grad_accum(ib);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) d[j] += dy[i * c + j];
      }
    }
  });
}

Var scale(Var a, double s) {
  const auto& x = a.value().values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  const auto ia = a.id;
  return a.graph->record(Tensor::unchecked(a.shape(), std::move(out)), {a}, [ia, s](Graph& g, std::uint32_t self) {
    auto dy = g.grad(self);
    auto d = g.grad_accum(ia);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * s;
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const auto ia = a.id;
  return a.graph->record(std::move(out), {a}, [ia](Graph& g, std::uint32_t self) {
    auto dy = g.grad(self);
    auto d = g.grad_accum(ia);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
  });
}

Var detach(Var a) { return a.graph->constant(a.value()); }

Var relu(Var a) {
  const auto& x = a.value().values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0 ? x[i] : 0.0;
  const auto ia = a.id;
  return a.graph->record(Tensor::unchecked(a.shape(), std::move(out)), {a}, [ia](Graph& g, std::uint32_t self) {
    auto dy = g.grad(self);
    const auto& xv = g.value(ia).values();
    auto d = g.grad_accum(ia);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (xv[i] > 0) d[i] += dy[i];
    }
  });
}

Var sigmoid(Var a) {
  const auto& x = a.value().values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(x[i]);
  const auto ia = a.id;
  return a.graph->record(Tensor::unchecked(a.shape(), std::move(out)), {a}, [ia](Graph& g, std::uint32_t self) {
    auto dy = g.grad(self);
    const auto& yv = g.value(self).values();
    auto d = g.grad_accum(ia);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * yv[i] * (1.0 - yv[i]);
  });
}

// ---- normalization ---------------------------------------------------------

Var softmax(Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  const Shape& s = xv.shape();
  std::size_t outer = 1, n = 1, inner = 1;
  if (s.empty()) {
    if (axis != 0) throw DimensionError("softmax: axis out of range for scalar");
  } else {
    if (axis >= s.size()) throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_string(s));
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    n = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  }
  if (n == 0) throw DimensionError("softmax: empty axis in " + shape_string(s));
  const auto& in = xv.values();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t t = 0; t < inner; ++t) {
      const std::size_t base = o * n * inner + t;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, in[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(in[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  }
  const auto ix = x.id;
  return x.graph->record(Tensor::unchecked(s, std::move(out)), {x}, [ix, outer, n, inner](Graph& g, std::uint32_t self) {
    auto dy = g.grad(self);
    const auto& y = g.value(self).values();
    auto d = g.grad_accum(ix);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t t = 0; t < inner; ++t) {
        const std::size_t base = o * n * inner + t;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += y[base + j * inner] * dy[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t k = base + j * inner;
          d[k] += y[k] * (dy[k] - dot);
        }
      }
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  require_same_graph(x, gamma);
  require_same_graph(x, beta);
  if (!(eps > 0)) throw ArgumentError("layer_norm: eps must be positive");
  const std::size_t r = x.rows(), c = x.cols();
  if (gamma.value().numel() != c || beta.value().numel() != c) {
    throw DimensionError("layer_norm: affine parameters " + shape_string(gamma.shape()) + "/" +
                         shape_string(beta.shape()) + " do not match width of " + shape_string(x.shape()));
  }
  const auto& xv = x.value().values();
  const auto& gv = gamma.value().values();
  const auto& bv = beta.value().values();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> rstd(r);
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xv[i * c + j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double dlt = xv[i * c + j] - mu;
      var += dlt * dlt;
    }
    var /= static_cast<double>(c);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t k = i * c + j;
      xhat[k] = (xv[k] - mu) * rstd[i];
      out[k] = xhat[k] * gv[j] + bv[j];
    }
  }
  const auto ix = x.id, ig = gamma.id, ib = beta.id;
  return x.graph->record(
      Tensor::unchecked(x.shape(), std::move(out)), {x, gamma, beta},
      [ix, ig, ib, r, c, xhat = std::move(xhat), rstd = std::move(rstd)](Graph& g, std::uint32_t self) {
        auto dy = g.grad(self);
        if (g.needs_grad(ig)) {
          auto d = g.grad_accum(ig);
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) d[j] += dy[i * c + j] * xhat[i * c + j];
          }
        }
        if (g.needs_grad(ib)) {
          auto d = g.grad_accum(ib);
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) d[j] += dy[i * c + j];
          }
        }
        if (g.needs_grad(ix)) {
          const auto& gv = g.value(ig).values();
          auto d = g.grad_accum(ix);
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t i = 0; i < r; ++i) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double dh = dy[i * c + j] * gv[j];
              m1 += dh;
              m2 += dh * xhat[i * c + j];
            }
            m1 *= inv_c;
            m2 *= inv_c;
            for (std::size_t j = 0; j < c; ++j) {
              const std::size_t k = i * c + j;
              d[k] += rstd[i] * (dy[k] * gv[j] - m1 - xhat[k] * m2);
            }
          }
        }
      });
}

// ---- reductions ------------------------------------------------------------

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const auto ia = a.id;
  return a.graph->record(Tensor::unchecked({}, {s}), {a}, [ia](Graph& g, std::uint32_t self) {
    const double dy = g.grad(self)[0];
    auto d = g.grad_accum(ia);
    for (double& v : d) v += dy;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().numel();
  if (n == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

// ---- indexing --------------------------------------------------------------

Var gather_rows(Var a, std::span<const std::size_t> index) {
  const std::size_t r = a.rows(), c = a.cols();
  const auto& x = a.value().values();
  std::vector<double> out(index.size() * c);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= r) {
      throw DimensionError("gather_rows: index " + std::to_string(index[i]) + " out of range for " +
                           shape_string(a.shape()));
    }
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(index[i] * c), c, out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  const auto ia = a.id;
  std::vector<std::size_t> idx(index.begin(), index.end());
  return a.graph->record(Tensor::unchecked({index.size(), c}, std::move(out)), {a},
                         [ia, c, idx = std::move(idx)](Graph& g, std::uint32_t self) {
                           auto dy = g.grad(self);
                           auto d = g.grad_accum(ia);
                           for (std::size_t i = 0; i < idx.size(); ++i) {
                             for (std::size_t j = 0; j < c; ++j) d[idx[i] * c + j] += dy[i * c + j];
                           }
                         });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  const std::size_t r = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  std::vector<std::uint32_t> ids;
  for (const Var& p : parts) {
    require_same_graph(parts[0], p);
    if (p.rows() != r) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    }
    widths.push_back(p.cols());
    ids.push_back(p.id);
    total += p.cols();
  }
  std::vector<double> out(r * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& x = parts[k].value().values();
    const std::size_t w = widths[k];
    for (std::size_t i = 0; i < r; ++i) {
      std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(i * w), w, out.begin() + static_cast<std::ptrdiff_t>(i * total + off));
    }
    off += w;
  }
  return parts[0].graph->record(
      Tensor::unchecked({r, total}, std::move(out)), parts,
      [ids = std::move(ids), widths = std::move(widths), r, total](Graph& g, std::uint32_t self) {
        auto dy = g.grad(self);
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const std::size_t w = widths[k];
          if (g.needs_grad(ids[k])) {
            auto d = g.grad_accum(ids[k]);
            for (std::size_t i = 0; i < r; ++i) {
              for (std::size_t j = 0; j < w; ++j) d[i * w + j] += dy[i * total + off + j];
            }
          }
          off += w;
        }
      });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  const std::size_t r = a.rows(), c = a.cols();
  if (start + count > c) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") exceeds width of " + shape_string(a.shape()));
  }
  const auto& x = a.value().values();
  std::vector<double> out(r * count);
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(i * c + start), count, out.begin() + static_cast<std::ptrdiff_t>(i * count));
  }
  const auto ia = a.id;
  return a.graph->record(Tensor::unchecked({r, count}, std::move(out)), {a}, [ia, r, c, start, count](Graph& g, std::uint32_t self) {
    auto dy = g.grad(self);
    auto d = g.grad_accum(ia);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < count; ++j) d[i * c + start + j] += dy[i * count + j];
    }
  });
}

Var select_col_group(Var a, std::span<const std::size_t> group, std::size_t width) {
  const std::size_t r = a.rows(), c = a.cols();
  if (group.size() != r) throw DimensionError("select_col_group: one group index per row required");
  if (width == 0 || c % width != 0) throw DimensionError("select_col_group: width does not divide " + shape_string(a.shape()));
  const auto& x = a.value().values();
  std::vector<double> out(r * width);
  for (std::size_t i = 0; i < r; ++i) {
    if ((group[i] + 1) * width > c) throw DimensionError("select_col_group: group index out of range");
    for (std::size_t j = 0; j < width; ++j) out[i * width + j] = x[i * c + group[i] * width + j];
  }
  const auto ia = a.id;
  std::vector<std::size_t> grp(group.begin(), group.end());
  return a.graph->record(Tensor::unchecked({r, width}, std::move(out)), {a},
                         [ia, r, c, width, grp = std::move(grp)](Graph& g, std::uint32_t self) {
                           auto dy = g.grad(self);
                           auto d = g.grad_accum(ia);
                           for (std::size_t i = 0; i < r; ++i) {
                             for (std::size_t j = 0; j < width; ++j) d[i * c + grp[i] * width + j] += dy[i * width + j];
                           }
                         });
}

Var segment_max(Var a, std::span<const std::size_t> offsets) {
  if (offsets.size() < 2) throw DimensionError("segment_max: need at least one segment");
  const std::size_t c = a.cols();
  const std::size_t segs = offsets.size() - 1;
  if (offsets.back() > a.rows()) throw DimensionError("segment_max: offsets exceed rows of " + shape_string(a.shape()));
  const auto& x = a.value().values();
  std::vector<double> out(segs * c);
  std::vector<std::size_t> argmax(segs * c);
  for (std::size_t s = 0; s < segs; ++s) {
    if (offsets[s + 1] <= offsets[s]) throw DimensionError("segment_max: empty segment");
    for (std::size_t j = 0; j < c; ++j) {
      std::size_t best = offsets[s];
      for (std::size_t i = offsets[s] + 1; i < offsets[s + 1]; ++i) {
        if (x[i * c + j] > x[best * c + j]) best = i;
      }
      argmax[s * c + j] = best;
      out[s * c + j] = x[best * c + j];
    }
  }
  const auto ia = a.id;
  return a.graph->record(Tensor::unchecked({segs, c}, std::move(out)), {a},
                         [ia, c, argmax = std::move(argmax)](Graph& g, std::uint32_t self) {
                           auto dy = g.grad(self);
                           auto d = g.grad_accum(ia);
                           for (std::size_t k = 0; k < argmax.size(); ++k) d[argmax[k] * c + k % c] += dy[k];
                         });
}

Var segment_mean(Var a, std::span<const std::size_t> offsets) {
  if (offsets.size() < 2) throw DimensionError("segment_mean: need at least one segment");
  const std::size_t c = a.cols();
  const std::size_t segs = offsets.size() - 1;
  if (offsets.back() > a.rows()) throw DimensionError("segment_mean: offsets exceed rows of " + shape_string(a.shape()));
  const auto& x = a.value().values();
  std::vector<double> out(segs * c, 0.0);
  for (std::size_t s = 0; s < segs; ++s) {
    if (offsets[s + 1] <= offsets[s]) throw DimensionError("segment_mean: empty segment");
    const double inv = 1.0 / static_cast<double>(offsets[s + 1] - offsets[s]);
    for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) {
      for (std::size_t j = 0; j < c; ++j) out[s * c + j] += x[i * c + j] * inv;
    }
  }
  const auto ia = a.id;
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  return a.graph->record(Tensor::unchecked({segs, c}, std::move(out)), {a},
                         [ia, c, off = std::move(off)](Graph& g, std::uint32_t self) {
                           auto dy = g.grad(self);
                           auto d = g.grad_accum(ia);
                           for (std::size_t s = 0; s + 1 < off.size(); ++s) {
                             const double inv = 1.0 / static_cast<double>(off[s + 1] - off[s]);
                             for (std::size_t i = off[s]; i < off[s + 1]; ++i) {
                               for (std::size_t j = 0; j < c; ++j) d[i * c + j] += dy[s * c + j] * inv;
                             }
                           }
                         });
}

Var interpolate_rows(Var a, std::span<const std::size_t> index, std::span<const double> weights, std::size_t k) {
  if (k == 0 || index.size() != weights.size() || index.size() % k != 0) {
    throw DimensionError("interpolate_rows: index/weight lists must be rows x k");
  }
  const std::size_t r = a.rows(), c = a.cols();
  const std::size_t m = index.size() / k;
  const auto& x = a.value().values();
  std::vector<double> out(m * c, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const std::size_t src = index[i * k + t];
      if (src >= r) throw DimensionError("interpolate_rows: index out of range");
      const double w = weights[i * k + t];
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] += w * x[src * c + j];
    }
  }
  const auto ia = a.id;
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> wts(weights.begin(), weights.end());
  return a.graph->record(Tensor::unchecked({m, c}, std::move(out)), {a},
                         [ia, c, k, m, idx = std::move(idx), wts = std::move(wts)](Graph& g, std::uint32_t self) {
                           auto dy = g.grad(self);
                           auto d = g.grad_accum(ia);
                           for (std::size_t i = 0; i < m; ++i) {
                             for (std::size_t t = 0; t < k; ++t) {
                               const std::size_t src = idx[i * k + t];
                               const double w = wts[i * k + t];
                               for (std::size_t j = 0; j < c; ++j) d[src * c + j] += w * dy[i * c + j];
                             }
                           }
                         });
}

// ---- losses ----------------------------------------------------------------

Var focal_loss(Var logits, std::span<const double> targets, double alpha, double gamma) {
  const auto& x = logits.value().values();
  const std::size_t n = x.size();
  if (targets.size() != n) throw DimensionError("focal_loss: one target per logit required");
  if (n == 0) throw DimensionError("focal_loss: empty input");
  double total = 0.0;
  std::vector<double> dx(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = targets[i];
    if (t != 0.0 && t != 1.0) throw ArgumentError("focal_loss: targets must be 0 or 1");
    const double sign = t == 1.0 ? 1.0 : -1.0;
    const double at = t == 1.0 ? alpha : 1.0 - alpha;
    const double logp = log_sigmoid(sign * x[i]);
    const double p = stable_sigmoid(sign * x[i]);
    const double q = 1.0 - p;
    const double mod = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
    total += -at * mod * logp;
    // d/dx of -a (1-p)^g log p with p = sigmoid(sign*x)
    dx[i] = at * sign * (gamma * mod * p * logp - mod * q) / static_cast<double>(n);
  }
  const auto ix = logits.id;
  return logits.graph->record(Tensor::unchecked({}, {total / static_cast<double>(n)}), {logits},
                              [ix, dx = std::move(dx)](Graph& g, std::uint32_t self) {
                                const double dy = g.grad(self)[0];
                                auto d = g.grad_accum(ix);
                                for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy * dx[i];
                              });
}

namespace {

double huber(double d, double beta, double* slope) {
  const double ad = std::abs(d);
  if (ad < beta) {
    *slope = d / beta;
    return 0.5 * d * d / beta;
  }
  *slope = d > 0 ? 1.0 : -1.0;
  return ad - 0.5 * beta;
}

}  // namespace

Var smooth_l1(Var pred, const Tensor& target, double beta) {
  if (!(beta > 0)) throw ArgumentError("smooth_l1: beta must be positive");
  const auto& p = pred.value().values();
  if (target.numel() != p.size()) {
    throw DimensionError("smooth_l1: prediction " + shape_string(pred.shape()) + " vs target " +
                         shape_string(target.shape()));
  }
  if (p.empty()) throw DimensionError("smooth_l1: empty input");
  const double inv = 1.0 / static_cast<double>(p.size());
  double total = 0.0;
  std::vector<double> dx(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    double slope = 0.0;
    total += huber(p[i] - target[i], beta, &slope);
    dx[i] = slope * inv;
  }
  const auto ip = pred.id;
  return pred.graph->record(Tensor::unchecked({}, {total * inv}), {pred}, [ip, dx = std::move(dx)](Graph& g, std::uint32_t self) {
    const double dy = g.grad(self)[0];
    auto d = g.grad_accum(ip);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy * dx[i];
  });
}

Var smooth_l1_rows(Var pred, const Tensor& target, double beta, std::span<const double> row_weights) {
  if (!(beta > 0)) throw ArgumentError("smooth_l1_rows: beta must be positive");
  const std::size_t r = pred.rows(), c = pred.cols();
  const auto& p = pred.value().values();
  if (target.numel() != p.size() || row_weights.size() != r) {
    throw DimensionError("smooth_l1_rows: prediction " + shape_string(pred.shape()) + " vs target " +
                         shape_string(target.shape()) + " with " + std::to_string(row_weights.size()) + " weights");
  }
  double wsum = 0.0;
  for (double w : row_weights) wsum += w;
  double total = 0.0;
  std::vector<double> dx(p.size(), 0.0);
  if (wsum > 0) {
    for (std::size_t i = 0; i < r; ++i) {
      const double w = row_weights[i] / wsum;
      if (w == 0.0) continue;
      for (std::size_t j = 0; j < c; ++j) {
        double slope = 0.0;
        total += w * huber(p[i * c + j] - target[i * c + j], beta, &slope);
        dx[i * c + j] = w * slope;
      }
    }
  }
  const auto ip = pred.id;
  return pred.graph->record(Tensor::unchecked({}, {total}), {pred}, [ip, dx = std::move(dx)](Graph& g, std::uint32_t self) {
    const double dy = g.grad(self)[0];
    auto d = g.grad_accum(ip);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy * dx[i];
  });
}

Var cross_entropy(Var logits, std::size_t target) {
  const std::size_t n = logits.value().numel();
  if (target >= n) {
    throw ArgumentError("cross_entropy: target " + std::to_string(target) + " out of range for " + std::to_string(n) +
                        " classes");
  }
  const std::size_t t[1] = {target};
  const double w[1] = {1.0};
  return cross_entropy_rows(reshape(logits, {1, n}), t, w);
}

Var cross_entropy_rows(Var logits, std::span<const std::size_t> targets, std::span<const double> row_weights) {
  const std::size_t r = logits.rows(), c = logits.cols();
  if (targets.size() != r || row_weights.size() != r) {
    throw DimensionError("cross_entropy_rows: need one target and weight per row of " + shape_string(logits.shape()));
  }
  const auto& x = logits.value().values();
  double wsum = 0.0;
  for (double w : row_weights) wsum += w;
  double total = 0.0;
  std::vector<double> dx(x.size(), 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    if (targets[i] >= c) {
      throw ArgumentError("cross_entropy_rows: target " + std::to_string(targets[i]) + " out of range for " +
                          std::to_string(c) + " classes");
    }
    if (wsum <= 0 || row_weights[i] == 0.0) continue;
    const double w = row_weights[i] / wsum;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, x[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(x[i * c + j] - mx);
    const double lse = mx + std::log(z);
    total += w * (lse - x[i * c + targets[i]]);
    for (std::size_t j = 0; j < c; ++j) {
      const double p = std::exp(x[i * c + j] - lse);
      dx[i * c + j] = w * (p - (j == targets[i] ? 1.0 : 0.0));
    }
  }
  const auto il = logits.id;
  return logits.graph->record(Tensor::unchecked({}, {total}), {logits}, [il, dx = std::move(dx)](Graph& g, std::uint32_t self) {
    const double dy = g.grad(self)[0];
    auto d = g.grad_accum(il);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy * dx[i];
  });
}

}  // namespace gf3d
