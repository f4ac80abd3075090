#include "gf3d/diffcore/nn.h"

#include <cmath>

#include "gf3d/errors.h"

namespace gf3d {

Parameter& ParameterStore::add(std::string name, Tensor init, std::string group) {
  if (index_.count(name)) throw UsageError("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->group = std::move(group);
  p->value = std::move(init);
  p->zero_grad();
  index_.emplace(std::move(name), params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterStore::uniform(std::string name, Shape shape, std::size_t fan_in, std::string group, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in == 0 ? 1 : fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = dist(rng);
  return add(std::move(name), Tensor(std::move(shape), std::move(data)), std::move(group));
}

Parameter& ParameterStore::constant(std::string name, Shape shape, double value, std::string group) {
  return add(std::move(name), Tensor::full(std::move(shape), value), std::move(group));
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                      const std::string& group, Rng& rng) {
  Linear l;
  l.weight = &store.uniform(name + ".weight", {in, out}, in, group, rng);
  l.bias = &store.uniform(name + ".bias", {out}, in, group, rng);
  return l;
}

Var Linear::operator()(Graph& g, Var x) const {
  if (x.cols() != in()) {
    throw DimensionError("linear " + weight->name + ": input " + shape_string(x.shape()) + " vs weight " +
                         shape_string(weight->value.shape()));
  }
  return add_row(matmul(x, g.param(*weight)), g.param(*bias));
}

void Linear::zero() {
  for (Parameter* p : {weight, bias}) {
    for (double& v : p->value.mutable_data()) v = 0.0;
  }
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, std::size_t width,
                            const std::string& group) {
  LayerNorm ln;
  ln.gamma = &store.constant(name + ".gamma", {width}, 1.0, group);
  ln.beta = &store.constant(name + ".beta", {width}, 0.0, group);
  return ln;
}

Var LayerNorm::operator()(Graph& g, Var x) const { return layer_norm(x, g.param(*gamma), g.param(*beta), eps); }

Mlp2 Mlp2::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                  std::size_t out, const std::string& group, Rng& rng) {
  return Mlp2{Linear::create(store, name + ".0", in, hidden, group, rng),
              Linear::create(store, name + ".1", hidden, out, group, rng)};
}

Var Mlp2::operator()(Graph& g, Var x) const { return relu(second(g, relu(first(g, x)))); }

}  // namespace gf3d
