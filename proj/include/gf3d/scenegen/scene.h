#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gf3d/diffcore/nn.h"
#include "gf3d/diffcore/tensor.h"
#include "gf3d/geometry/geometry.h"

namespace gf3d {

struct Scene {
  std::string id;
  PointSet points;
  Tensor features;  // N x W, empty when the scene carries no extra channels
  std::vector<Box3D> boxes;

  std::size_t feature_width() const { return features.empty() ? 0 : features.cols(); }
  friend bool operator==(const Scene&, const Scene&) = default;
};

struct Category {
  std::string name;
  Vec3 mean_size;
  double spread = 0.1;  // relative, uniform in [1 - spread, 1 + spread] per axis
};

struct GeneratorConfig {
  std::uint64_t seed = 0;
  Vec3 bounds_min{-1.5, 0.0, -1.5};
  Vec3 bounds_max{1.5, 1.2, 1.5};
  std::vector<Category> categories = default_categories();
  // Multiplies every category's mean size.
  double size_scale = 1.0;
  std::size_t min_boxes = 1;
  std::size_t max_boxes = 5;
  std::size_t points = 1024;
  double clutter = 0.1;
  double occlusion = 0.0;
  bool yaw = false;
  // Adds the height above the floor as a 1-wide point feature.
  bool height_feature = false;
  std::size_t max_attempts = 200;
  double max_pair_iou = 0.05;

  static std::vector<Category> default_categories();
  void validate() const;
};

// Deterministic in (cfg.seed, scene_seed). Throws GenerationError naming the
// seed when boxes cannot be placed.
Scene generate_scene(const GeneratorConfig& cfg, std::uint64_t scene_seed, const std::string& id = "");

// Throws ArgumentError when a scene breaks the generator guarantees: a box
// outside the bounds, fewer than 8 points inside a box, bad shapes.
void check_scene(const Scene& scene, const GeneratorConfig& cfg);

constexpr std::uint64_t kValSeedBase = 1000000;

struct SplitEntry {
  std::string split;
  std::string id;
  std::uint64_t seed = 0;
};

struct DatasetSplit {
  std::vector<Scene> train;
  std::vector<Scene> val;
  std::vector<SplitEntry> manifest;
};

// Train seeds 0.., validation seeds kValSeedBase...
DatasetSplit generate_split(const GeneratorConfig& cfg, std::size_t n_train, std::size_t n_val,
                            std::size_t threads = 1);

// <dir>/manifest.txt plus one <id>.scene per scene.
void write_split(const std::filesystem::path& dir, const DatasetSplit& split);
DatasetSplit read_split(const std::filesystem::path& dir);
std::vector<SplitEntry> read_manifest(const std::filesystem::path& path);

struct AugmentDraw {
  bool flip = false;
  double rotation = 0.0;  // radians about +y
  double scale = 1.0;
};

AugmentDraw draw_augmentation(Rng& rng);

// Mirror x (when flipping), rotate about +y, scale. With yaw disabled the
// rotated boxes are replaced by their axis-aligned bounds.
Scene augment(const Scene& scene, const AugmentDraw& draw, bool keep_yaw);
Scene augment(const Scene& scene, Rng& rng, bool keep_yaw);

// "GF3D" | u16 version | u64 N | u32 W | N*3 f64 | N*W f64 | u64 B | B * (7 f64 + u16)
void write_scene(const std::filesystem::path& path, const Scene& scene);
// The id is taken from the file stem.
Scene read_scene(const std::filesystem::path& path);

}  // namespace gf3d
