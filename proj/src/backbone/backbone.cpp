#include "gf3d/backbone/backbone.h"

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>

#include "gf3d/errors.h"

namespace gf3d {

void BackboneConfig::validate() const {
  for (std::size_t i = 0; i < 4; ++i) {
    if (stage_point_counts[i] == 0) throw ArgumentError("backbone: stage point counts must be positive");
    if (!(stage_radii[i] > 0)) throw ArgumentError("backbone: radii must be positive");
    if (i > 0 && stage_point_counts[i] >= stage_point_counts[i - 1]) {
      throw ArgumentError("backbone: stage point counts must be strictly decreasing");
    }
    if (i > 0 && stage_radii[i] <= stage_radii[i - 1]) throw ArgumentError("backbone: radii must be strictly increasing");
  }
  if (up_point_counts[0] >= up_point_counts[1]) throw ArgumentError("backbone: up point counts must be strictly increasing");
  if (up_point_counts[0] != stage_point_counts[2] || up_point_counts[1] != stage_point_counts[1]) {
    throw ArgumentError("backbone: up point counts must match the stage-3 and stage-2 resolutions");
  }
  if (feature_width < 2) throw ArgumentError("backbone: feature width must be at least 2");
  if (neighbors_per_ball == 0) throw ArgumentError("backbone: neighbors per ball must be positive");
}

BackboneConfig BackboneConfig::desk() { return BackboneConfig{}; }

BackboneConfig BackboneConfig::full_scale(std::size_t feature_width) {
  BackboneConfig c;
  c.stage_point_counts = {2048, 1024, 512, 256};
  c.stage_radii = {0.2, 0.4, 0.8, 1.2};
  c.up_point_counts = {512, 1024};
  c.feature_width = feature_width;
  c.neighbors_per_ball = 64;
  return c;
}

std::vector<std::size_t> ball_query(std::span<const Vec3> points, Vec3 center, double radius,
                                    std::size_t max_neighbors) {
  if (points.empty()) throw ArgumentError("ball_query: empty point set");
  if (!(radius > 0)) throw ArgumentError("ball_query: radius must be positive");
  if (max_neighbors == 0) throw ArgumentError("ball_query: max_neighbors must be positive");
  const double r2 = radius * radius;
  std::vector<std::pair<double, std::size_t>> found;
  std::size_t nearest = 0;
  double nearest_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double d = squared_distance(points[i], center);
    if (d <= r2) found.emplace_back(d, i);
    if (d < nearest_d) {
      nearest_d = d;
      nearest = i;
    }
  }
  std::vector<std::size_t> out;
  out.reserve(max_neighbors);
  if (found.empty()) {
    out.assign(max_neighbors, nearest);
    return out;
  }
  const std::size_t take = std::min(max_neighbors, found.size());
  std::partial_sort(found.begin(), found.begin() + static_cast<std::ptrdiff_t>(take), found.end());
  for (std::size_t i = 0; i < take; ++i) out.push_back(found[i].second);
  out.resize(max_neighbors, out.front());
  return out;
}

PointFeatures set_abstraction(Graph& g, const PointFeatures& input, const SetAbstractionLayer& layer,
                              std::size_t fps_seed_index) {
  const std::size_t n = input.positions.size();
  if (layer.point_count > n) {
    throw ArgumentError("set_abstraction: " + std::to_string(layer.point_count) + " centers requested from " +
                        std::to_string(n) + " points");
  }
  const auto centers = farthest_point_sample(input.positions, layer.point_count, fps_seed_index);
  const std::size_t s = layer.neighbors;
  std::vector<std::size_t> group_index;
  group_index.reserve(centers.size() * s);
  std::vector<double> rel;
  rel.reserve(centers.size() * s * 3);
  PointSet out_positions;
  out_positions.reserve(centers.size());
  const double inv_r = 1.0 / layer.radius;
  for (std::size_t c : centers) {
    const Vec3 ctr = input.positions[c];
    out_positions.push_back(ctr);
    for (std::size_t j : ball_query(input.positions, ctr, layer.radius, s)) {
      group_index.push_back(j);
      const Vec3 d = (input.positions[j] - ctr) * inv_r;
      rel.insert(rel.end(), {d.x, d.y, d.z});
    }
  }
  Var grouped = g.constant(Tensor::unchecked({group_index.size(), 3}, std::move(rel)));
  if (input.has_features()) {
    const Var parts[2] = {grouped, gather_rows(input.features, group_index)};
    grouped = concat_cols(parts);
  }
  std::vector<std::size_t> offsets(centers.size() + 1);
  for (std::size_t i = 0; i < offsets.size(); ++i) offsets[i] = i * s;
  Var pooled = segment_max(layer.mlp(g, grouped), offsets);
  return PointFeatures{std::move(out_positions), pooled};
}

InterpolationWeights three_nn_weights(std::span<const Vec3> coarse, std::span<const Vec3> fine) {
  if (coarse.empty()) throw ArgumentError("feature_propagation: empty coarse set");
  InterpolationWeights w;
  w.k = std::min<std::size_t>(3, coarse.size());
  w.index.reserve(fine.size() * w.k);
  w.weight.reserve(fine.size() * w.k);
  std::vector<std::pair<double, std::size_t>> d(coarse.size());
  for (const Vec3& p : fine) {
    for (std::size_t i = 0; i < coarse.size(); ++i) d[i] = {squared_distance(p, coarse[i]), i};
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(w.k), d.end());
    double norm = 0.0;
    for (std::size_t t = 0; t < w.k; ++t) norm += 1.0 / (std::sqrt(d[t].first) + 1e-8);
    for (std::size_t t = 0; t < w.k; ++t) {
      w.index.push_back(d[t].second);
      w.weight.push_back(1.0 / (std::sqrt(d[t].first) + 1e-8) / norm);
    }
  }
  return w;
}

PointFeatures feature_propagation(Graph& g, const PointFeatures& coarse, const PointSet& fine_positions,
                                  const PointFeatures* skip, const Mlp2& mlp) {
  if (!coarse.has_features()) throw ArgumentError("feature_propagation: coarse level has no features");
  const auto w = three_nn_weights(coarse.positions, fine_positions);
  Var interp = interpolate_rows(coarse.features, w.index, w.weight, w.k);
  if (skip != nullptr && skip->has_features()) {
    if (skip->positions.size() != fine_positions.size()) {
      throw DimensionError("feature_propagation: skip level has " + std::to_string(skip->positions.size()) +
                           " points, fine level " + std::to_string(fine_positions.size()));
    }
    const Var parts[2] = {interp, skip->features};
    interp = concat_cols(parts);
  }
  return PointFeatures{fine_positions, mlp(g, interp)};
}

Backbone::Backbone(const BackboneConfig& cfg, ParameterStore& store, Rng& rng, const std::string& group) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t c = cfg_.feature_width;
  const std::array<std::size_t, 4> widths{c / 2, c, c, c};
  std::size_t in = cfg_.input_feature_width;
  for (std::size_t i = 0; i < 4; ++i) {
    sa_[i].point_count = cfg_.stage_point_counts[i];
    sa_[i].radius = cfg_.stage_radii[i];
    sa_[i].neighbors = cfg_.neighbors_per_ball;
    sa_[i].mlp = Mlp2::create(store, "backbone.sa" + std::to_string(i + 1), in + 3, widths[i], widths[i], group, rng);
    in = widths[i];
  }
  fp_[0] = Mlp2::create(store, "backbone.fp1", widths[3] + widths[2], c, c, group, rng);
  fp_[1] = Mlp2::create(store, "backbone.fp2", c + widths[1], c, c, group, rng);
}

PointFeatures Backbone::forward(Graph& g, const PointSet& cloud, const Tensor* extra) const {
  if (cloud.size() < cfg_.stage_point_counts[0]) {
    throw ArgumentError("backbone: cloud of " + std::to_string(cloud.size()) + " points is smaller than the first stage (" +
                        std::to_string(cfg_.stage_point_counts[0]) + ")");
  }
  PointFeatures level0{cloud, Var{}};
  if (cfg_.input_feature_width > 0) {
    if (extra == nullptr || extra->rows() != cloud.size() || extra->cols() != cfg_.input_feature_width) {
      throw DimensionError("backbone: expected " + std::to_string(cfg_.input_feature_width) +
                           " input feature channels per point");
    }
    level0.features = g.constant(*extra);
  }
  PointFeatures l1 = set_abstraction(g, level0, sa_[0]);
  PointFeatures l2 = set_abstraction(g, l1, sa_[1]);
  PointFeatures l3 = set_abstraction(g, l2, sa_[2]);
  PointFeatures l4 = set_abstraction(g, l3, sa_[3]);
  PointFeatures u1 = feature_propagation(g, l4, l3.positions, &l3, fp_[0]);
  return feature_propagation(g, u1, l2.positions, &l2, fp_[1]);
}

}  // namespace gf3d
