#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <unordered_map>
#include <vector>

#include "gf3d/diffcore/tensor.h"

namespace gf3d {

class Graph;
struct Parameter;

// Handle to a value recorded on a Graph. Cheap to copy; invalid once the
// owning graph is cleared.
struct Var {
  Graph* graph = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
};

// Gradients of the non-parameter leaves that required them, keyed by the
// leaf's Var. Parameter gradients are accumulated into Parameter::grad.
class GradientMap {
 public:
  bool contains(Var v) const { return grads_.count(v.id) != 0; }
  const Tensor& of(Var v) const;

 private:
  friend class Graph;
  std::unordered_map<std::uint32_t, Tensor> grads_;
};

// Dynamic reverse-mode tape. Every op appends a node; backward() walks the
// nodes in reverse creation order, which is a valid topological order since
// a node's inputs always precede it.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::uint32_t self)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value);
  Var variable(Tensor value);
  // Leaf bound to a parameter; repeated calls in one pass share the node.
  Var param(Parameter& p);

  // Appends an op result. `fn` is dropped when no input requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);

  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  bool needs_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  std::span<const double> grad(std::uint32_t id) const { return nodes_[id].grad; }
  // Accumulation buffer for an input's gradient, zero-filled on first use.
  std::span<double> grad_accum(std::uint32_t id);

  GradientMap backward(Var loss);
  void clear();

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    bool leaf = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  Var push(Node node);

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::uint32_t> param_nodes_;
};

// ---- ops -------------------------------------------------------------------
// All ops treat their operands as row-major matrices (rows x cols) unless
// noted. Broadcasting is limited to a bias row added to every row.

Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_row(Var a, Var bias);
Var scale(Var a, double s);
Var reshape(Var a, Shape shape);
Var detach(Var a);

Var relu(Var a);
Var sigmoid(Var a);

Var softmax(Var x, std::size_t axis);
Var layer_norm(Var x, Var gamma, Var beta, double eps);

Var sum(Var a);
Var mean(Var a);

Var gather_rows(Var a, std::span<const std::size_t> index);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t start, std::size_t count);
// Per-row pick of the `width`-column block `group[r]`.
Var select_col_group(Var a, std::span<const std::size_t> group, std::size_t width);

// Reductions over contiguous row segments; offsets has segments+1 entries.
Var segment_max(Var a, std::span<const std::size_t> offsets);
Var segment_mean(Var a, std::span<const std::size_t> offsets);

// out[i] = sum_j weights[i*k+j] * a[index[i*k+j]]
Var interpolate_rows(Var a, std::span<const std::size_t> index, std::span<const double> weights,
                     std::size_t k);

// ---- losses ----------------------------------------------------------------

// Mean binary focal loss over all elements; targets are 0/1.
Var focal_loss(Var logits, std::span<const double> targets, double alpha, double gamma);
// Mean elementwise smooth-L1.
Var smooth_l1(Var pred, const Tensor& target, double beta);
// sum_r w_r * sum_c smoothL1(pred - target) / sum_r w_r; zero when sum w == 0.
Var smooth_l1_rows(Var pred, const Tensor& target, double beta, std::span<const double> row_weights);
// -log softmax(logits)[target] for a single row of logits.
Var cross_entropy(Var logits, std::size_t target);
// Weighted mean of per-row cross entropy; zero when all weights vanish.
Var cross_entropy_rows(Var logits, std::span<const std::size_t> targets,
                       std::span<const double> row_weights);

}  // namespace gf3d
