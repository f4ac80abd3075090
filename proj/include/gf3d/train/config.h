#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gf3d/backbone/backbone.h"
#include "gf3d/candidates/candidates.h"
#include "gf3d/decoder/decoder.h"
#include "gf3d/heads/heads.h"
#include "gf3d/scenegen/scene.h"

namespace gf3d {

struct SamplingConfig {
  SamplingMethod method = SamplingMethod::kps;
  std::size_t candidates = 16;
  std::size_t positives_per_box = 4;
  double nms_radius = 0.05;
};

struct LossConfig {
  LossWeights weights;
  double assign_radius = 0.3;
};

struct EvalConfig {
  std::vector<double> iou_thresholds{0.25, 0.5};
  bool ensemble = true;
  double nms_iou = 0.25;
  // Validation mAP every N epochs (0 = only after the last epoch).
  std::size_t every = 0;
};

struct DataConfig {
  std::size_t train_scenes = 8;
  std::size_t val_scenes = 100;
  bool augment = true;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t epochs = 300;
  std::size_t trials = 1;
  std::size_t threads = 1;
  double base_lr = 0.006;
  double decoder_lr_factor = 0.1;
  double weight_decay = 5e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::vector<double> lr_milestones{0.7, 0.85};
  double grad_clip_norm = 1.0;

  DataConfig data;
  GeneratorConfig gen;
  BackboneConfig backbone = BackboneConfig::desk();
  DecoderConfig decoder;
  SamplingConfig sampling;
  HeadConfig head;
  LossConfig loss;
  EvalConfig eval;

  // Copies shared widths (feature width, classes, templates) into the
  // sub-configs and checks every invariant.
  void finalize();
  void validate() const;

  // Assigns one `key = value` pair; unknown keys throw ArgumentError.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  std::string to_text() const;
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  static RunConfig desk();
};

}  // namespace gf3d
