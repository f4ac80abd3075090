#include "gf3d/train/model.h"

#include "gf3d/errors.h"

namespace gf3d {

Detector::Detector(const RunConfig& cfg)
    : cfg_(cfg),
      init_rng_(cfg.seed),
      backbone_(cfg_.backbone, store_, init_rng_, "backbone"),
      sampler_(SamplerHead::create(store_, cfg_.backbone.feature_width, "backbone", init_rng_)),
      decoder_(cfg_.decoder, cfg_.head, store_, init_rng_, "decoder", "backbone") {
  cfg_.validate();
}

ForwardResult Detector::forward(Graph& g, const Scene& scene, std::span<const std::vector<Box3D>> held_boxes) const {
  ForwardResult fr;
  const Tensor* extra = cfg_.backbone.input_feature_width > 0 ? &scene.features : nullptr;
  if (extra != nullptr && scene.feature_width() != cfg_.backbone.input_feature_width) {
    throw DimensionError("scene " + scene.id + " carries " + std::to_string(scene.feature_width()) +
                         " feature channels, model expects " + std::to_string(cfg_.backbone.input_feature_width));
  }
  fr.points = backbone_.forward(g, scene.points, extra);
  fr.sampler = sampler_.forward(g, fr.points);
  const std::size_t k = cfg_.sampling.candidates;
  switch (cfg_.sampling.method) {
    case SamplingMethod::fps: fr.candidates = sample_fps(fr.points, k, 0); break;
    case SamplingMethod::kps: fr.candidates = sample_kps(fr.points, fr.sampler.scores, k); break;
    case SamplingMethod::kps_nms:
      fr.candidates = sample_kps_nms(fr.points, fr.sampler.scores, fr.sampler.centers, k, cfg_.sampling.nms_radius);
      break;
  }
  fr.stages = decoder_.run(g, fr.candidates, fr.points, fr.sampler.centers, held_boxes);
  return fr;
}

LossReport Detector::loss(Graph& g, const ForwardResult& fr, const Scene& scene) const {
  const LossWeights& w = cfg_.loss.weights;
  const SamplerLabels labels = assign_kps_labels(fr.points.positions, scene.boxes, cfg_.sampling.positives_per_box);
  const SamplerLoss sl = sampler_loss(g, fr.sampler, labels, w);
  LossReport r;
  r.rows.push_back({"sampler", "objectness", sl.objectness.value().item()});
  r.rows.push_back({"sampler", "center", sl.center.value().item()});
  r.rows.push_back({"sampler", "total", sl.total.value().item()});
  std::vector<Var> totals;
  std::vector<std::pair<std::string, double>> stage_terms;
  for (const StagePrediction& sp : fr.stages) {
    const DecoderTargets t = assign_decoder_targets(sp, scene.boxes, cfg_.head, cfg_.loss.assign_radius);
    const StageLoss l = stage_loss(g, sp.head, t, cfg_.head, w);
    totals.push_back(l.total);
    const auto parts = l.breakdown();
    for (const auto& [name, v] : parts) r.rows.push_back({std::to_string(sp.stage), name, v});
    if (stage_terms.empty()) {
      stage_terms = parts;
    } else {
      for (std::size_t i = 0; i < parts.size(); ++i) stage_terms[i].second += parts[i].second;
    }
  }
  r.total = total_loss(totals, sl.total);
  r.rows.push_back({"all", "loss", r.total.value().item()});
  r.terms.emplace_back("loss", r.total.value().item());
  r.terms.emplace_back("sampler_objectness", sl.objectness.value().item());
  r.terms.emplace_back("sampler_center", sl.center.value().item());
  for (auto& [name, v] : stage_terms) {
    if (name == "total") name = "decoder";
    r.terms.emplace_back(name, v / static_cast<double>(fr.stages.size()));
  }
  return r;
}

DetectionResult stage_detections(const std::string& scene_id, const StagePrediction& stage) {
  DetectionResult r;
  r.scene_id = scene_id;
  r.boxes = stage.boxes;
  r.source_stage.assign(stage.boxes.size(), stage.stage);
  return r;
}

Detector::Detections Detector::detect(const Scene& scene) const {
  Graph g(false);
  return detect(forward(g, scene), scene.id);
}

Detector::Detections Detector::detect(const ForwardResult& fr, const std::string& scene_id) const {
  const IouMode mode = cfg_.gen.yaw ? IouMode::oriented : IouMode::axis_aligned;
  Detections out;
  std::vector<DetectionResult> raw;
  for (const StagePrediction& sp : fr.stages) {
    raw.push_back(stage_detections(scene_id, sp));
    out.stages.push_back(classwise_nms(raw.back(), cfg_.eval.nms_iou, mode));
  }
  out.ensemble = ensemble_stages(raw, cfg_.eval.nms_iou, mode);
  return out;
}

}  // namespace gf3d
