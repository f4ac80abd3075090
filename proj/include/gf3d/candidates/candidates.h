#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gf3d/backbone/backbone.h"
#include "gf3d/diffcore/nn.h"
#include "gf3d/geometry/geometry.h"

namespace gf3d {

enum class SamplingMethod { fps, kps, kps_nms };

std::string to_string(SamplingMethod m);
SamplingMethod parse_sampling_method(const std::string& s);

struct CandidateSet {
  std::vector<std::size_t> indices;
  PointSet positions;
  Var features;
  std::vector<double> objectness_scores;
  SamplingMethod method = SamplingMethod::kps;

  std::size_t size() const { return indices.size(); }
};

// Per-point sampler supervision.
struct SamplerLabels {
  std::vector<double> objectness;  // 1 for positives, else 0
  Tensor center_offsets;           // M x 3, (box center - point) for positives, zero otherwise
};

CandidateSet sample_fps(const PointFeatures& points, std::size_t count, std::size_t seed_index);

// A point is positive when it lies inside a GT box and is among the k points
// of that box closest to the box center. Overlapping boxes: positive for any
// box, offset toward the nearest such box center.
SamplerLabels assign_kps_labels(const PointSet& points, std::span<const Box3D> gt, std::size_t k);

// Top-`count` scores, ties by lower index.
CandidateSet sample_kps(const PointFeatures& points, std::span<const double> scores, std::size_t count);

// Greedy by score; each pick suppresses points whose predicted center lies
// within `radius` of the pick's predicted center. If fewer than `count`
// survive, the highest-scoring suppressed points fill the remaining slots.
CandidateSet sample_kps_nms(const PointFeatures& points, std::span<const double> scores,
                            std::span<const Vec3> predicted_centers, std::size_t count, double radius);

struct SamplerOutput {
  Var objectness_logits;  // M x 1
  Var center_offsets;     // M x 3
  std::vector<double> scores;
  PointSet centers;
};

// Shared 2-layer perceptron, then an objectness logit and a center offset
// per point.
struct SamplerHead {
  Mlp2 shared;
  Linear objectness;
  Linear center;

  static SamplerHead create(ParameterStore& store, std::size_t width, const std::string& group, Rng& rng);
  SamplerOutput forward(Graph& g, const PointFeatures& points) const;
};

}  // namespace gf3d
