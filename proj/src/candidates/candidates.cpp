#include "gf3d/candidates/candidates.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gf3d/errors.h"

namespace gf3d {

std::string to_string(SamplingMethod m) {
  switch (m) {
    case SamplingMethod::fps: return "fps";
    case SamplingMethod::kps: return "kps";
    case SamplingMethod::kps_nms: return "kps_nms";
  }
  return "?";
}

SamplingMethod parse_sampling_method(const std::string& s) {
  if (s == "fps") return SamplingMethod::fps;
  if (s == "kps") return SamplingMethod::kps;
  if (s == "kps_nms") return SamplingMethod::kps_nms;
  throw ArgumentError("unknown sampling method: " + s);
}

namespace {

CandidateSet make_set(const PointFeatures& points, std::vector<std::size_t> indices, std::vector<double> scores,
                      SamplingMethod method) {
  CandidateSet cs;
  cs.method = method;
  cs.positions.reserve(indices.size());
  for (std::size_t i : indices) cs.positions.push_back(points.positions[i]);
  if (points.has_features()) cs.features = gather_rows(points.features, indices);
  cs.indices = std::move(indices);
  cs.objectness_scores = std::move(scores);
  return cs;
}

void check_count(std::size_t count, std::size_t available) {
  if (count == 0 || count > available) {
    throw ArgumentError("candidate count " + std::to_string(count) + " not in [1, " + std::to_string(available) + "]");
  }
}

}  // namespace

CandidateSet sample_fps(const PointFeatures& points, std::size_t count, std::size_t seed_index) {
  check_count(count, points.positions.size());
  auto idx = farthest_point_sample(points.positions, count, seed_index);
  return make_set(points, std::move(idx), std::vector<double>(count, 1.0), SamplingMethod::fps);
}

SamplerLabels assign_kps_labels(const PointSet& points, std::span<const Box3D> gt, std::size_t k) {
  if (k == 0) throw ArgumentError("assign_kps_labels: k must be at least 1");
  const std::size_t m = points.size();
  SamplerLabels labels;
  labels.objectness.assign(m, 0.0);
  std::vector<double> offsets(m * 3, 0.0);
  std::vector<double> best_dist(m, std::numeric_limits<double>::infinity());
  for (const Box3D& box : gt) {
    std::vector<std::pair<double, std::size_t>> inside;
    for (std::size_t i = 0; i < m; ++i) {
      if (point_in_box(points[i], box)) inside.emplace_back(squared_distance(points[i], box.center), i);
    }
    const std::size_t take = std::min(k, inside.size());
    std::partial_sort(inside.begin(), inside.begin() + static_cast<std::ptrdiff_t>(take), inside.end());
    for (std::size_t t = 0; t < take; ++t) {
      const auto [d, i] = inside[t];
      labels.objectness[i] = 1.0;
      if (d < best_dist[i]) {
        best_dist[i] = d;
        const Vec3 off = box.center - points[i];
        offsets[i * 3 + 0] = off.x;
        offsets[i * 3 + 1] = off.y;
        offsets[i * 3 + 2] = off.z;
      }
    }
  }
  labels.center_offsets = Tensor::unchecked({m, 3}, std::move(offsets));
  return labels;
}

CandidateSet sample_kps(const PointFeatures& points, std::span<const double> scores, std::size_t count) {
  if (scores.size() != points.positions.size()) throw DimensionError("sample_kps: one score per point required");
  check_count(count, scores.size());
  auto order = order_by_score(scores);
  order.resize(count);
  std::vector<double> s;
  for (std::size_t i : order) s.push_back(scores[i]);
  return make_set(points, std::move(order), std::move(s), SamplingMethod::kps);
}

CandidateSet sample_kps_nms(const PointFeatures& points, std::span<const double> scores,
                            std::span<const Vec3> predicted_centers, std::size_t count, double radius) {
  const std::size_t m = points.positions.size();
  if (scores.size() != m || predicted_centers.size() != m) {
    throw DimensionError("sample_kps_nms: one score and predicted center per point required");
  }
  if (!(radius > 0)) throw ArgumentError("sample_kps_nms: radius must be positive");
  check_count(count, m);
  const auto order = order_by_score(scores);
  const double r2 = radius * radius;
  std::vector<char> suppressed(m, 0), chosen(m, 0);
  std::vector<std::size_t> picked;
  for (std::size_t i : order) {
    if (picked.size() == count) break;
    if (suppressed[i]) continue;
    picked.push_back(i);
    chosen[i] = 1;
    for (std::size_t j = 0; j < m; ++j) {
      if (!chosen[j] && squared_distance(predicted_centers[j], predicted_centers[i]) <= r2) suppressed[j] = 1;
    }
  }
  for (std::size_t i : order) {
    if (picked.size() == count) break;
    if (!chosen[i]) {
      picked.push_back(i);
      chosen[i] = 1;
    }
  }
  std::vector<double> s;
  for (std::size_t i : picked) s.push_back(scores[i]);
  return make_set(points, std::move(picked), std::move(s), SamplingMethod::kps_nms);
}

SamplerHead SamplerHead::create(ParameterStore& store, std::size_t width, const std::string& group, Rng& rng) {
  return SamplerHead{Mlp2::create(store, "sampler.shared", width, width, width, group, rng),
                     Linear::create(store, "sampler.objectness", width, 1, group, rng),
                     Linear::create(store, "sampler.center", width, 3, group, rng)};
}

SamplerOutput SamplerHead::forward(Graph& g, const PointFeatures& points) const {
  if (!points.has_features() || points.positions.empty()) throw ArgumentError("sampler head: no point features");
  Var h = shared(g, points.features);
  SamplerOutput out;
  out.objectness_logits = objectness(g, h);
  out.center_offsets = center(g, h);
  const auto& logits = out.objectness_logits.value().values();
  const auto& off = out.center_offsets.value().values();
  out.scores.reserve(logits.size());
  out.centers.reserve(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.scores.push_back(1.0 / (1.0 + std::exp(-logits[i])));
    out.centers.push_back(points.positions[i] + Vec3{off[i * 3], off[i * 3 + 1], off[i * 3 + 2]});
  }
  return out;
}

}  // namespace gf3d
