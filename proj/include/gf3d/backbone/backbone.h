#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "gf3d/diffcore/graph.h"
#include "gf3d/diffcore/nn.h"
#include "gf3d/geometry/geometry.h"

namespace gf3d {

struct BackboneConfig {
  std::array<std::size_t, 4> stage_point_counts{512, 256, 128, 64};
  std::array<double, 4> stage_radii{0.1, 0.2, 0.4, 0.8};
  // Fine resolutions of the two propagation layers. They reuse the centers
  // of set-abstraction stages 3 and 2, so they must equal those counts.
  std::array<std::size_t, 2> up_point_counts{128, 256};
  std::size_t feature_width = 64;
  std::size_t neighbors_per_ball = 16;
  // Width of the optional per-point input features (0 = geometry only).
  std::size_t input_feature_width = 0;

  void validate() const;

  // Four-stage layout used at desk scale: 1024-point input, C = 64.
  static BackboneConfig desk();
  // 2048/1024/512/256 with radii 0.2/0.4/0.8/1.2, up-sampled to 512/1024.
  static BackboneConfig full_scale(std::size_t feature_width);
};

// Positions plus a feature matrix with one row per position. `features` may
// be unset (default Var) for the raw input cloud without extra channels.
struct PointFeatures {
  PointSet positions;
  Var features;

  bool has_features() const { return features.graph != nullptr; }
};

// Up to max_neighbors indices within radius, nearest first (ties by index).
// Short lists are padded with their first entry; an empty ball yields the
// nearest point repeated.
std::vector<std::size_t> ball_query(std::span<const Vec3> points, Vec3 center, double radius,
                                    std::size_t max_neighbors);

struct SetAbstractionLayer {
  std::size_t point_count = 0;
  double radius = 0.0;
  std::size_t neighbors = 0;
  Mlp2 mlp;
};

// FPS centers, ball-query groups of concat(relative xyz / radius, neighbor
// feature), shared perceptron, max-pool over each group.
PointFeatures set_abstraction(Graph& g, const PointFeatures& input, const SetAbstractionLayer& layer,
                              std::size_t fps_seed_index = 0);

// Inverse-distance (1 / (d + 1e-8)) interpolation from the 3 nearest coarse
// points, optional skip concat, shared perceptron.
PointFeatures feature_propagation(Graph& g, const PointFeatures& coarse, const PointSet& fine_positions,
                                  const PointFeatures* skip, const Mlp2& mlp);

// The interpolation weights alone; exposed for tests.
struct InterpolationWeights {
  std::vector<std::size_t> index;
  std::vector<double> weight;
  std::size_t k = 0;
};
InterpolationWeights three_nn_weights(std::span<const Vec3> coarse, std::span<const Vec3> fine);

class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, ParameterStore& store, Rng& rng, const std::string& group = "backbone");

  // Returns the features of the final (2x) resolution. `extra` holds optional
  // per-point input features, one row per cloud point.
  PointFeatures forward(Graph& g, const PointSet& cloud, const Tensor* extra = nullptr) const;

  const BackboneConfig& config() const { return cfg_; }

 private:
  BackboneConfig cfg_;
  std::array<SetAbstractionLayer, 4> sa_;
  std::array<Mlp2, 2> fp_;
};

}  // namespace gf3d
