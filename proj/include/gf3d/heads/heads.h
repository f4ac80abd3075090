#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gf3d/candidates/candidates.h"
#include "gf3d/diffcore/nn.h"
#include "gf3d/geometry/geometry.h"

namespace gf3d {

struct HeadConfig {
  std::size_t num_classes = 4;
  std::vector<Vec3> size_templates;
  // Class-aware: one 3-vector size offset per template (templates are the
  // per-class mean sizes). Class-agnostic: a single 3-vector offset.
  bool class_aware_size = true;
  // 0 disables the orientation branch.
  std::size_t yaw_bins = 0;

  std::size_t templates() const { return size_templates.size(); }
  void validate() const;
};

// Raw per-candidate predictions of one head.
struct HeadOutput {
  Var objectness;      // K x 1
  Var class_logits;    // K x num_classes
  Var center_offsets;  // K x 3
  Var size_logits;     // K x T
  Var size_offsets;    // K x 3T (class-aware) or K x 3
  Var yaw_logits;      // K x B (orientation branch only)
  Var yaw_offsets;     // K x B

  bool has_yaw() const { return yaw_logits.graph != nullptr; }
};

// Shared 2-layer perceptron followed by one linear layer per task.
struct DetectionHead {
  Mlp2 shared;
  Linear objectness, classes, center, size_class, size_offset, yaw_class, yaw_offset;
  HeadConfig cfg;

  static DetectionHead create(ParameterStore& store, const std::string& name, std::size_t width,
                              const HeadConfig& cfg, const std::string& group, Rng& rng);
  HeadOutput forward(Graph& g, Var object_features) const;
  // Zero the task layers (tests and ablation probes).
  void zero_task_layers();
};

double yaw_bin_center(std::size_t bin, std::size_t bins);

// center = base + offset; size = template[argmax] + offset (clamped to
// >= 1e-4); yaw = bin center + offset; score = sigmoid(obj) * max class prob.
std::vector<Box3D> decode_boxes(const HeadOutput& out, std::span<const Vec3> base_positions, const HeadConfig& cfg);

// Everything a decoder stage produced.
struct StagePrediction {
  std::size_t stage = 0;
  HeadOutput head;
  std::vector<Box3D> boxes;
  PointSet base_positions;
  // Box estimates that fed this stage's spatial encodings.
  std::vector<Box3D> input_boxes;
  // Cross-attention weights per head (K x M each) when recording is enabled.
  std::vector<Tensor> attention;
};

struct LossWeights {
  std::array<double, 5> beta{0.5, 0.1, 1.0, 0.1, 0.1};
  double yaw_class = 0.1;
  double yaw_offset = 0.04;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double smooth_l1_beta = 1.0;
};

struct DecoderTargets {
  std::vector<double> objectness;    // 1 for positives
  std::vector<std::size_t> gt_index;  // meaningful for positives only
  std::vector<std::size_t> class_id;
  Tensor center_offset;  // K x 3
  std::vector<std::size_t> size_class;
  Tensor size_offset;  // K x 3
  std::vector<std::size_t> yaw_bin;
  Tensor yaw_offset;  // K x 1

  std::size_t positives() const;
};

// Template whose volume is closest to the box volume in log ratio.
std::size_t nearest_size_template(const Vec3& size, std::span<const Vec3> templates);

// A candidate is positive iff its base position lies within `radius` of some
// GT center (nearest GT wins, lower index on ties).
DecoderTargets assign_decoder_targets(std::span<const Vec3> base_positions, std::span<const Box3D> gt,
                                      const HeadConfig& cfg, double radius);
DecoderTargets assign_decoder_targets(const StagePrediction& prediction, std::span<const Box3D> gt,
                                      const HeadConfig& cfg, double radius);

// Per-term losses of one stage plus their weighted sum.
struct StageLoss {
  Var total;
  Var objectness, classification, center, size_class, size_offset;
  Var yaw_class, yaw_offset;  // unset without the orientation branch

  // (name, value) pairs in a fixed order, for logging.
  std::vector<std::pair<std::string, double>> breakdown() const;
};

StageLoss stage_loss(Graph& g, const HeadOutput& out, const DecoderTargets& targets, const HeadConfig& cfg,
                     const LossWeights& weights);

// Mean over the stage losses plus the sampler loss.
Var total_loss(std::span<const Var> stage_losses, Var sampler_loss);

struct SamplerLoss {
  Var total;
  Var objectness;
  Var center;
};

// beta1 * focal objectness over all points + beta3 * smooth-L1 center offset
// over positives.
SamplerLoss sampler_loss(Graph& g, const SamplerOutput& out, const SamplerLabels& labels, const LossWeights& weights);

}  // namespace gf3d
