#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "gf3d/diffcore/graph.h"
#include "gf3d/diffcore/tensor.h"

namespace gf3d {

using Rng = std::mt19937_64;

struct Parameter {
  std::string name;
  std::string group;
  Tensor value;
  std::vector<double> grad;

  void zero_grad() { grad.assign(value.numel(), 0.0); }
};

// Owns every learnable tensor of a model. Addresses are stable so modules
// keep raw Parameter pointers.
class ParameterStore {
 public:
  Parameter& add(std::string name, Tensor init, std::string group);
  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  Parameter& uniform(std::string name, Shape shape, std::size_t fan_in, std::string group, Rng& rng);
  Parameter& constant(std::string name, Shape shape, double value, std::string group);

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// y = x W + b with W stored (in x out).
struct Linear {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                       const std::string& group, Rng& rng);
  Var operator()(Graph& g, Var x) const;
  std::size_t in() const { return weight->value.dim(0); }
  std::size_t out() const { return weight->value.dim(1); }
  void zero();
};

struct LayerNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;
  double eps = 1e-5;

  static LayerNorm create(ParameterStore& store, const std::string& name, std::size_t width,
                          const std::string& group);
  Var operator()(Graph& g, Var x) const;
};

// Shared two-layer perceptron, ReLU after each layer.
struct Mlp2 {
  Linear first;
  Linear second;

  static Mlp2 create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                     std::size_t out, const std::string& group, Rng& rng);
  Var operator()(Graph& g, Var x) const;
};

}  // namespace gf3d
