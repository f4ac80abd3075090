#include "gf3d/train/optim.h"

#include <cmath>

#include "gf3d/errors.h"

namespace gf3d {

void AdamW::step(std::span<Parameter* const> params, const std::map<std::string, double>& lr_by_group) {
  for (const Parameter* p : params) {
    if (p->grad.size() != p->value.numel()) throw DimensionError("adamw: gradient shape differs for " + p->name);
    for (double g : p->grad) {
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient in parameter " + p->name);
    }
    if (!lr_by_group.count(p->group)) throw ArgumentError("adamw: no learning rate for group " + p->group);
  }
  ++step_;
  const double b1 = settings_.beta1, b2 = settings_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (Parameter* p : params) {
    const double lr = lr_by_group.at(p->group);
    Moments& s = state_[p];
    if (s.first.empty()) {
      s.first.assign(p->grad.size(), 0.0);
      s.second.assign(p->grad.size(), 0.0);
    }
    auto w = p->value.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = p->grad[i];
      s.first[i] = b1 * s.first[i] + (1 - b1) * g;
      s.second[i] = b2 * s.second[i] + (1 - b2) * g * g;
      const double m_hat = s.first[i] / c1;
      const double v_hat = s.second[i] / c2;
      w[i] -= lr * (m_hat / (std::sqrt(v_hat) + settings_.eps)) + lr * settings_.weight_decay * w[i];
    }
  }
}

const AdamW::Moments& AdamW::moments(const Parameter& p) const {
  auto it = state_.find(&p);
  if (it == state_.end()) throw UsageError("adamw: no state for " + p.name);
  return it->second;
}

GroupRates lr_at(std::size_t epoch, std::size_t total_epochs, const LrSchedule& schedule) {
  double lr = schedule.base_lr;
  for (double m : schedule.milestones) {
    if (static_cast<double>(epoch) >= m * static_cast<double>(total_epochs)) lr *= 0.1;
  }
  return {lr, lr * schedule.decoder_factor};
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  if (!(max_norm > 0)) throw ArgumentError("clip_grad_norm: max_norm must be positive");
  double sq = 0.0;
  for (const Parameter* p : params) {
    for (double g : p->grad) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (Parameter* p : params) {
      for (double& g : p->grad) g *= s;
    }
  }
  return norm;
}

}  // namespace gf3d
