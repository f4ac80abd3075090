#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gf3d/diffcore/graph.h"
#include "gf3d/diffcore/nn.h"

namespace gf3d::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "input[i]" or parameter name with index
  std::size_t checked = 0;
};

inline double rel_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Compares reverse-mode gradients of `fn` against central differences for
// every element of `inputs` and of every parameter in `store` (when given).
// `fn` records a scalar on the graph from the variables it receives.
inline GradCheckResult grad_check(const std::function<Var(Graph&, const std::vector<Var>&)>& fn,
                                  std::vector<Tensor> inputs, ParameterStore* store = nullptr, double step = 1e-6,
                                  double floor = 1e-5, std::size_t max_param_elements = 0) {
  auto evaluate = [&](const std::vector<Tensor>& xs) {
    Graph g(false);
    std::vector<Var> vars;
    for (const Tensor& x : xs) vars.push_back(g.constant(x));
    return fn(g, vars).value().item();
  };

  Graph g;
  std::vector<Var> vars;
  for (const Tensor& x : inputs) vars.push_back(g.variable(x));
  if (store) store->zero_grad();
  const GradientMap grads = g.backward(fn(g, vars));

  GradCheckResult res;
  auto check = [&](double analytic, double numeric, const std::string& where) {
    const double e = rel_error(analytic, numeric, floor);
    ++res.checked;
    if (e > res.max_rel_error) {
      res.max_rel_error = e;
      res.worst = where + " analytic " + std::to_string(analytic) + " numeric " + std::to_string(numeric);
    }
  };

  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const Tensor analytic = grads.contains(vars[t]) ? grads.of(vars[t]) : Tensor::full(inputs[t].shape(), 0.0);
    for (std::size_t i = 0; i < inputs[t].numel(); ++i) {
      auto plus = inputs, minus = inputs;
      plus[t].mutable_data()[i] += step;
      minus[t].mutable_data()[i] -= step;
      check(analytic[i], (evaluate(plus) - evaluate(minus)) / (2 * step),
            "input" + std::to_string(t) + "[" + std::to_string(i) + "]");
    }
  }
  if (store) {
    for (Parameter* p : store->all()) {
      const std::vector<double> analytic = p->grad;
      const std::size_t n = max_param_elements ? std::min(max_param_elements, p->value.numel()) : p->value.numel();
      for (std::size_t i = 0; i < n; ++i) {
        double& w = p->value.mutable_data()[i];
        const double orig = w;
        w = orig + step;
        const double up = evaluate(inputs);
        w = orig - step;
        const double down = evaluate(inputs);
        w = orig;
        check(analytic[i], (up - down) / (2 * step), p->name + "[" + std::to_string(i) + "]");
      }
    }
  }
  return res;
}

}  // namespace gf3d::testing
