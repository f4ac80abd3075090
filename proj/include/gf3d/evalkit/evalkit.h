#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gf3d/geometry/geometry.h"

namespace gf3d {

struct DetectionResult {
  std::string scene_id;
  std::vector<Box3D> boxes;
  std::vector<std::size_t> source_stage;  // parallel to boxes
};

// Ground truth of one scene as seen by the evaluator.
struct GroundTruth {
  std::string scene_id;
  std::vector<Box3D> boxes;
};

// Pools every stage's boxes and runs class-wise NMS at the threshold.
DetectionResult ensemble_stages(std::span<const DetectionResult> stages, double iou_threshold,
                                IouMode mode = IouMode::axis_aligned);

// Class-wise NMS of a single result (the last-stage-only path).
DetectionResult classwise_nms(const DetectionResult& dets, double iou_threshold, IouMode mode = IouMode::axis_aligned);

struct MatchedDetection {
  double score = 0.0;
  bool true_positive = false;
};

// Detections of `class_id` in descending score order; each one claims the
// unmatched same-class GT with the highest IoU >= threshold.
std::vector<MatchedDetection> match_detections(const DetectionResult& dets, std::span<const Box3D> gt,
                                               double iou_threshold, int class_id,
                                               IouMode mode = IouMode::axis_aligned);

// All-points interpolated AP over a score-ordered TP/FP sequence.
// num_gt == 0 gives 1 with no detections, 0 otherwise.
double average_precision(std::span<const bool> tp_flags, std::size_t num_gt);

struct PrPoint {
  double recall;
  double precision;
};
std::vector<PrPoint> pr_curve(std::span<const bool> tp_flags, std::size_t num_gt);

struct ClassAp {
  int class_id = 0;
  std::size_t num_gt = 0;
  std::size_t num_det = 0;
  double ap = 0.0;
  std::vector<PrPoint> curve;
};

struct ThresholdReport {
  double iou_threshold = 0.0;
  std::vector<ClassAp> classes;
  double map = 0.0;
};

struct EvalReport {
  std::vector<ThresholdReport> thresholds;

  double map_at(double iou_threshold) const;
  // Stable textual form; byte-identical for identical inputs.
  std::string to_csv() const;
};

// Detections are pooled across scenes per class before building the PR
// curve; mAP is the unweighted mean over classes 0..num_classes-1.
EvalReport evaluate(std::span<const DetectionResult> results, std::span<const GroundTruth> gts,
                    std::span<const double> thresholds, std::size_t num_classes,
                    IouMode mode = IouMode::axis_aligned);

// Line format: scene_id class score cx cy cz l h w yaw
void write_detections(const std::filesystem::path& path, std::span<const DetectionResult> results);
std::vector<DetectionResult> read_detections(const std::filesystem::path& path);

void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
// One SVG per class: PR curves of every threshold.
void write_pr_svgs(const std::filesystem::path& dir, const EvalReport& report);

}  // namespace gf3d
