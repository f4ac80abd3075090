#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gf3d/diffcore/graph.h"

namespace gf3d::testing {

struct OpCase {
  std::string name;
  std::vector<Shape> shapes;
  std::function<Var(Graph&, const std::vector<Var>&)> fn;
};

// Fixed pseudo-random weights so each case reduces to a scalar with a
// generic (non-degenerate) gradient.
inline Var probe(Var out, std::uint64_t salt = 7) {
  std::mt19937_64 rng(salt);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> w(out.value().numel());
  for (double& v : w) v = u(rng);
  Var c = out.graph->constant(Tensor::unchecked(out.shape(), std::move(w)));
  return sum(mul(out, c));
}

inline std::vector<OpCase> op_cases() {
  using V = std::vector<Var>;
  std::vector<OpCase> cs;
  cs.push_back({"matmul", {{3, 4}, {4, 2}}, [](Graph&, const V& x) { return probe(matmul(x[0], x[1])); }});
  cs.push_back({"matmul_nt", {{3, 4}, {2, 4}}, [](Graph&, const V& x) { return probe(matmul_nt(x[0], x[1])); }});
  cs.push_back({"transpose", {{3, 2}}, [](Graph&, const V& x) { return probe(transpose(x[0])); }});
  cs.push_back({"add", {{2, 3}, {2, 3}}, [](Graph&, const V& x) { return probe(add(x[0], x[1])); }});
  cs.push_back({"sub", {{2, 3}, {2, 3}}, [](Graph&, const V& x) { return probe(sub(x[0], x[1])); }});
  cs.push_back({"mul", {{2, 3}, {2, 3}}, [](Graph&, const V& x) { return probe(mul(x[0], x[1])); }});
  cs.push_back({"add_row", {{3, 4}, {4}}, [](Graph&, const V& x) { return probe(add_row(x[0], x[1])); }});
  cs.push_back({"scale", {{2, 3}}, [](Graph&, const V& x) { return probe(scale(x[0], -1.7)); }});
  cs.push_back({"reshape", {{2, 3}}, [](Graph&, const V& x) { return probe(reshape(x[0], {3, 2})); }});
  cs.push_back({"relu", {{3, 3}}, [](Graph&, const V& x) { return probe(relu(x[0])); }});
  cs.push_back({"sigmoid", {{3, 3}}, [](Graph&, const V& x) { return probe(sigmoid(x[0])); }});
  cs.push_back({"softmax_rows", {{3, 4}}, [](Graph&, const V& x) { return probe(softmax(x[0], 1)); }});
  cs.push_back({"softmax_cols", {{3, 4}}, [](Graph&, const V& x) { return probe(softmax(x[0], 0)); }});
  cs.push_back({"layer_norm", {{3, 4}, {4}, {4}},
                [](Graph&, const V& x) { return probe(layer_norm(x[0], x[1], x[2], 1e-5)); }});
  cs.push_back({"sum", {{2, 3}}, [](Graph&, const V& x) { return scale(sum(x[0]), 0.5); }});
  cs.push_back({"mean", {{2, 3}}, [](Graph&, const V& x) { return mean(mul(x[0], x[0])); }});
  cs.push_back({"gather_rows", {{4, 3}}, [](Graph&, const V& x) {
                  const std::size_t idx[] = {2, 0, 2, 3};
                  return probe(gather_rows(x[0], idx));
                }});
  cs.push_back({"concat_cols", {{3, 2}, {3, 3}}, [](Graph&, const V& x) { return probe(concat_cols(x)); }});
  cs.push_back({"slice_cols", {{3, 5}}, [](Graph&, const V& x) { return probe(slice_cols(x[0], 1, 3)); }});
  cs.push_back({"select_col_group", {{3, 6}}, [](Graph&, const V& x) {
                  const std::size_t grp[] = {1, 0, 2};
                  return probe(select_col_group(x[0], grp, 2));
                }});
  cs.push_back({"segment_max", {{6, 3}}, [](Graph&, const V& x) {
                  const std::size_t off[] = {0, 2, 3, 6};
                  return probe(segment_max(x[0], off));
                }});
  cs.push_back({"segment_mean", {{6, 3}}, [](Graph&, const V& x) {
                  const std::size_t off[] = {0, 2, 3, 6};
                  return probe(segment_mean(x[0], off));
                }});
  cs.push_back({"interpolate_rows", {{4, 3}}, [](Graph&, const V& x) {
                  const std::size_t idx[] = {0, 1, 3, 2, 2, 0};
                  const double w[] = {0.5, 0.3, 0.2, 0.7, 0.2, 0.1};
                  return probe(interpolate_rows(x[0], idx, w, 3));
                }});
  cs.push_back({"focal_loss", {{5, 1}}, [](Graph&, const V& x) {
                  const double t[] = {1, 0, 0, 1, 0};
                  return focal_loss(x[0], t, 0.25, 2.0);
                }});
  cs.push_back({"smooth_l1", {{3, 3}}, [](Graph&, const V& x) {
                  const Tensor target = Tensor::matrix({{0.3, -0.2, 1.0}, {0.0, 0.5, -1.1}, {0.9, 0.1, -0.4}});
                  return smooth_l1(x[0], target, 1.0);
                }});
  cs.push_back({"smooth_l1_rows", {{3, 3}}, [](Graph&, const V& x) {
                  const Tensor target = Tensor::matrix({{0.3, -0.2, 1.0}, {0.0, 0.5, -1.1}, {0.9, 0.1, -0.4}});
                  const double w[] = {1, 0, 1};
                  return smooth_l1_rows(x[0], target, 0.5, w);
                }});
  cs.push_back({"cross_entropy", {{4}}, [](Graph&, const V& x) { return cross_entropy(x[0], 2); }});
  cs.push_back({"cross_entropy_rows", {{3, 4}}, [](Graph&, const V& x) {
                  const std::size_t t[] = {0, 3, 1};
                  const double w[] = {1, 1, 0};
                  return cross_entropy_rows(x[0], t, w);
                }});
  return cs;
}

inline std::vector<Tensor> random_inputs(const std::vector<Shape>& shapes, std::mt19937_64& rng, double lo = -2.0,
                                         double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<Tensor> out;
  for (const Shape& s : shapes) {
    std::vector<double> d(shape_numel(s));
    for (double& v : d) v = u(rng);
    out.emplace_back(s, std::move(d));
  }
  return out;
}

}  // namespace gf3d::testing
