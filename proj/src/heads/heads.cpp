#include "gf3d/heads/heads.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "gf3d/errors.h"

namespace gf3d {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_angle(double a) {
  a = std::fmod(a + std::numbers::pi, kTwoPi);
  if (a < 0) a += kTwoPi;
  return a - std::numbers::pi;
}

std::size_t argmax_row(const Tensor& t, std::size_t r) {
  const std::size_t c = t.cols();
  std::size_t best = 0;
  for (std::size_t j = 1; j < c; ++j) {
    if (t.at(r, j) > t.at(r, best)) best = j;
  }
  return best;
}

}  // namespace

void HeadConfig::validate() const {
  if (num_classes == 0) throw ArgumentError("head: need at least one class");
  if (size_templates.empty()) throw ArgumentError("head: size templates must be nonempty");
  for (const Vec3& t : size_templates) {
    if (!(t.x > 0 && t.y > 0 && t.z > 0)) throw ArgumentError("head: size templates must be positive");
  }
}

DetectionHead DetectionHead::create(ParameterStore& store, const std::string& name, std::size_t width,
                                    const HeadConfig& cfg, const std::string& group, Rng& rng) {
  cfg.validate();
  DetectionHead h;
  h.cfg = cfg;
  h.shared = Mlp2::create(store, name + ".shared", width, width, width, group, rng);
  h.objectness = Linear::create(store, name + ".objectness", width, 1, group, rng);
  h.classes = Linear::create(store, name + ".class", width, cfg.num_classes, group, rng);
  h.center = Linear::create(store, name + ".center", width, 3, group, rng);
  h.size_class = Linear::create(store, name + ".size_class", width, cfg.templates(), group, rng);
  h.size_offset =
      Linear::create(store, name + ".size_offset", width, cfg.class_aware_size ? 3 * cfg.templates() : 3, group, rng);
  if (cfg.yaw_bins > 0) {
    h.yaw_class = Linear::create(store, name + ".yaw_class", width, cfg.yaw_bins, group, rng);
    h.yaw_offset = Linear::create(store, name + ".yaw_offset", width, cfg.yaw_bins, group, rng);
  }
  return h;
}

HeadOutput DetectionHead::forward(Graph& g, Var object_features) const {
  Var h = shared(g, object_features);
  HeadOutput out;
  out.objectness = objectness(g, h);
  out.class_logits = classes(g, h);
  out.center_offsets = center(g, h);
  out.size_logits = size_class(g, h);
  out.size_offsets = size_offset(g, h);
  if (cfg.yaw_bins > 0) {
    out.yaw_logits = yaw_class(g, h);
    out.yaw_offsets = yaw_offset(g, h);
  }
  return out;
}

void DetectionHead::zero_task_layers() {
  for (Linear* l : {&objectness, &classes, &center, &size_class, &size_offset}) l->zero();
  if (cfg.yaw_bins > 0) {
    yaw_class.zero();
    yaw_offset.zero();
  }
}

double yaw_bin_center(std::size_t bin, std::size_t bins) { return wrap_angle(kTwoPi * static_cast<double>(bin) / static_cast<double>(bins)); }

std::vector<Box3D> decode_boxes(const HeadOutput& out, std::span<const Vec3> base_positions, const HeadConfig& cfg) {
  cfg.validate();
  const std::size_t k = base_positions.size();
  const Tensor& obj = out.objectness.value();
  const Tensor& cls = out.class_logits.value();
  const Tensor& ctr = out.center_offsets.value();
  const Tensor& szl = out.size_logits.value();
  const Tensor& szo = out.size_offsets.value();
  if (obj.numel() != k || cls.rows() != k || ctr.rows() != k || szl.rows() != k) {
    throw DimensionError("decode_boxes: head output does not have one row per base position");
  }
  std::vector<Box3D> boxes(k);
  for (std::size_t i = 0; i < k; ++i) {
    Box3D& b = boxes[i];
    b.center = base_positions[i] + Vec3{ctr.at(i, 0), ctr.at(i, 1), ctr.at(i, 2)};
    const std::size_t t = argmax_row(szl, i);
    const std::size_t off = cfg.class_aware_size ? 3 * t : 0;
    const Vec3 tmpl = cfg.size_templates[t];
    b.size = {std::max(1e-4, tmpl.x + szo.at(i, off)), std::max(1e-4, tmpl.y + szo.at(i, off + 1)),
              std::max(1e-4, tmpl.z + szo.at(i, off + 2))};
    if (out.has_yaw()) {
      const std::size_t bin = argmax_row(out.yaw_logits.value(), i);
      b.yaw = wrap_angle(yaw_bin_center(bin, cfg.yaw_bins) + out.yaw_offsets.value().at(i, bin));
    }
    const std::size_t c = argmax_row(cls, i);
    double z = 0.0;
    for (std::size_t j = 0; j < cls.cols(); ++j) z += std::exp(cls.at(i, j) - cls.at(i, c));
    const double pobj = 1.0 / (1.0 + std::exp(-obj[i]));
    b.class_id = static_cast<int>(c);
    b.score = std::clamp(pobj / z, 0.0, 1.0);
  }
  return boxes;
}

std::size_t DecoderTargets::positives() const {
  return static_cast<std::size_t>(std::count(objectness.begin(), objectness.end(), 1.0));
}

std::size_t nearest_size_template(const Vec3& size, std::span<const Vec3> templates) {
  const double v = std::log(size.x * size.y * size.z);
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < templates.size(); ++t) {
    const double d = std::abs(v - std::log(templates[t].x * templates[t].y * templates[t].z));
    if (d < best_d) {
      best_d = d;
      best = t;
    }
  }
  return best;
}

DecoderTargets assign_decoder_targets(std::span<const Vec3> base_positions, std::span<const Box3D> gt,
                                      const HeadConfig& cfg, double radius) {
  const std::size_t k = base_positions.size();
  DecoderTargets t;
  t.objectness.assign(k, 0.0);
  t.gt_index.assign(k, 0);
  t.class_id.assign(k, 0);
  t.size_class.assign(k, 0);
  t.yaw_bin.assign(k, 0);
  std::vector<double> center(k * 3, 0.0), size(k * 3, 0.0), yaw(k, 0.0);
  const double r2 = radius * radius;
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t best = gt.size();
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < gt.size(); ++j) {
      const double d = squared_distance(base_positions[i], gt[j].center);
      if (d <= r2 && d < best_d) {
        best_d = d;
        best = j;
      }
    }
    if (best == gt.size()) continue;
    const Box3D& box = gt[best];
    t.objectness[i] = 1.0;
    t.gt_index[i] = best;
    t.class_id[i] = static_cast<std::size_t>(box.class_id);
    const Vec3 off = box.center - base_positions[i];
    const std::size_t tmpl = nearest_size_template(box.size, cfg.size_templates);
    const Vec3 soff = box.size - cfg.size_templates[tmpl];
    t.size_class[i] = tmpl;
    for (std::size_t a = 0; a < 3; ++a) {
      center[i * 3 + a] = off[a];
      size[i * 3 + a] = soff[a];
    }
    if (cfg.yaw_bins > 0) {
      const double width = kTwoPi / static_cast<double>(cfg.yaw_bins);
      double a = std::fmod(box.yaw, kTwoPi);
      if (a < 0) a += kTwoPi;
      const auto bin = static_cast<std::size_t>(std::floor((a + width / 2) / width)) % cfg.yaw_bins;
      t.yaw_bin[i] = bin;
      yaw[i] = wrap_angle(box.yaw - yaw_bin_center(bin, cfg.yaw_bins));
    }
  }
  t.center_offset = Tensor::unchecked({k, 3}, std::move(center));
  t.size_offset = Tensor::unchecked({k, 3}, std::move(size));
  t.yaw_offset = Tensor::unchecked({k, 1}, std::move(yaw));
  return t;
}

DecoderTargets assign_decoder_targets(const StagePrediction& prediction, std::span<const Box3D> gt,
                                      const HeadConfig& cfg, double radius) {
  return assign_decoder_targets(prediction.base_positions, gt, cfg, radius);
}

std::vector<std::pair<std::string, double>> StageLoss::breakdown() const {
  std::vector<std::pair<std::string, double>> out{
      {"objectness", objectness.value().item()}, {"classification", classification.value().item()},
      {"center", center.value().item()},         {"size_class", size_class.value().item()},
      {"size_offset", size_offset.value().item()}};
  if (yaw_class.graph != nullptr) {
    out.emplace_back("yaw_class", yaw_class.value().item());
    out.emplace_back("yaw_offset", yaw_offset.value().item());
  }
  out.emplace_back("total", total.value().item());
  return out;
}

StageLoss stage_loss(Graph& g, const HeadOutput& out, const DecoderTargets& targets, const HeadConfig& cfg,
                     const LossWeights& w) {
  (void)g;
  const std::vector<double>& pos = targets.objectness;
  StageLoss l;
  l.objectness = focal_loss(out.objectness, targets.objectness, w.focal_alpha, w.focal_gamma);
  l.classification = cross_entropy_rows(out.class_logits, targets.class_id, pos);
  l.center = smooth_l1_rows(out.center_offsets, targets.center_offset, w.smooth_l1_beta, pos);
  l.size_class = cross_entropy_rows(out.size_logits, targets.size_class, pos);
  Var size_pred = cfg.class_aware_size ? select_col_group(out.size_offsets, targets.size_class, 3) : out.size_offsets;
  l.size_offset = smooth_l1_rows(size_pred, targets.size_offset, w.smooth_l1_beta, pos);
  l.total = add(add(add(add(scale(l.objectness, w.beta[0]), scale(l.classification, w.beta[1])),
                        scale(l.center, w.beta[2])),
                    scale(l.size_class, w.beta[3])),
                scale(l.size_offset, w.beta[4]));
  if (out.has_yaw()) {
    l.yaw_class = cross_entropy_rows(out.yaw_logits, targets.yaw_bin, pos);
    l.yaw_offset =
        smooth_l1_rows(select_col_group(out.yaw_offsets, targets.yaw_bin, 1), targets.yaw_offset, w.smooth_l1_beta, pos);
    l.total = add(add(l.total, scale(l.yaw_class, w.yaw_class)), scale(l.yaw_offset, w.yaw_offset));
  }
  return l;
}

Var total_loss(std::span<const Var> stage_losses, Var sampler) {
  if (stage_losses.empty()) throw ArgumentError("total_loss: need at least one stage");
  Var acc = stage_losses[0];
  for (std::size_t i = 1; i < stage_losses.size(); ++i) acc = add(acc, stage_losses[i]);
  return add(scale(acc, 1.0 / static_cast<double>(stage_losses.size())), sampler);
}

SamplerLoss sampler_loss(Graph& g, const SamplerOutput& out, const SamplerLabels& labels, const LossWeights& w) {
  (void)g;
  SamplerLoss l;
  l.objectness = focal_loss(out.objectness_logits, labels.objectness, w.focal_alpha, w.focal_gamma);
  l.center = smooth_l1_rows(out.center_offsets, labels.center_offsets, w.smooth_l1_beta, labels.objectness);
  l.total = add(scale(l.objectness, w.beta[0]), scale(l.center, w.beta[2]));
  return l;
}

}  // namespace gf3d
