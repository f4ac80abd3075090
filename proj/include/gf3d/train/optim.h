#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gf3d/diffcore/nn.h"

namespace gf3d {

struct AdamWSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
};

// Bias-corrected Adam with decoupled weight decay:
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps)) - lr * wd * p
class AdamW {
 public:
  struct Moments {
    std::vector<double> first;
    std::vector<double> second;
  };

  explicit AdamW(AdamWSettings settings = {}) : settings_(settings) {}

  // `lr_by_group` maps Parameter::group to its learning rate; a group without
  // an entry throws. A non-finite gradient throws TrainingError naming the
  // parameter before anything is updated.
  void step(std::span<Parameter* const> params, const std::map<std::string, double>& lr_by_group);

  std::size_t steps() const { return step_; }
  const Moments& moments(const Parameter& p) const;
  const AdamWSettings& settings() const { return settings_; }

 private:
  AdamWSettings settings_;
  std::size_t step_ = 0;
  std::map<const Parameter*, Moments> state_;
};

struct LrSchedule {
  double base_lr = 0.006;
  double decoder_factor = 0.1;
  std::vector<double> milestones{0.7, 0.85};
};

struct GroupRates {
  double backbone = 0;
  double decoder = 0;
  std::map<std::string, double> by_group() const { return {{"backbone", backbone}, {"decoder", decoder}}; }
};

// base * 0.1^(milestones passed), a milestone at fraction f being passed once
// epoch >= f * total_epochs.
GroupRates lr_at(std::size_t epoch, std::size_t total_epochs, const LrSchedule& schedule);

// Scales every gradient by max_norm / norm when the global L2 norm exceeds
// max_norm. Returns the norm observed before clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

}  // namespace gf3d
