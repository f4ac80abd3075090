#pragma once

#include <map>
#include <string>
#include <vector>

#include "gf3d/backbone/backbone.h"
#include "gf3d/candidates/candidates.h"
#include "gf3d/decoder/decoder.h"
#include "gf3d/evalkit/evalkit.h"
#include "gf3d/heads/heads.h"
#include "gf3d/scenegen/scene.h"
#include "gf3d/train/config.h"

namespace gf3d {

struct ForwardResult {
  PointFeatures points;
  SamplerOutput sampler;
  CandidateSet candidates;
  std::vector<StagePrediction> stages;
};

struct LossReport {
  Var total;
  // Stage terms are averaged over stages; sampler terms are prefixed.
  std::vector<std::pair<std::string, double>> terms;
  // Unaveraged rows (stage, term, value); stage is "sampler", a decoder
  // stage index, or "all" for the combined loss.
  struct Row {
    std::string stage;
    std::string term;
    double value;
  };
  std::vector<Row> rows;
};

// Backbone, sampling head, candidate selection and decoder. Parameters of
// the first three sit in group "backbone", the decoder in group "decoder".
class Detector {
 public:
  explicit Detector(const RunConfig& cfg);
  Detector(const Detector&) = delete;
  Detector& operator=(const Detector&) = delete;

  // `held_boxes` as in Decoder::run.
  ForwardResult forward(Graph& g, const Scene& scene, std::span<const std::vector<Box3D>> held_boxes = {}) const;
  LossReport loss(Graph& g, const ForwardResult& fr, const Scene& scene) const;

  // Per-stage detections after class-wise NMS plus the stage ensemble.
  struct Detections {
    std::vector<DetectionResult> stages;
    DetectionResult ensemble;

    const DetectionResult& last() const { return stages.back(); }
    // The ensemble when enabled in the config, else the last stage.
    const DetectionResult& final(const EvalConfig& cfg) const { return cfg.ensemble ? ensemble : last(); }
  };
  Detections detect(const Scene& scene) const;
  Detections detect(const ForwardResult& fr, const std::string& scene_id) const;

  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  const RunConfig& config() const { return cfg_; }
  Decoder& decoder() { return decoder_; }

 private:
  RunConfig cfg_;
  ParameterStore store_;
  Rng init_rng_;
  Backbone backbone_;
  SamplerHead sampler_;
  Decoder decoder_;
};

// Stage predictions of one scene as evaluator inputs.
DetectionResult stage_detections(const std::string& scene_id, const StagePrediction& stage);

}  // namespace gf3d
