#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace gf3d {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  double& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }
  double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }
  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
  friend bool operator==(Vec3 a, Vec3 b) { return a.x == b.x && a.y == b.y && a.z == b.z; }
};

inline double squared_distance(Vec3 a, Vec3 b) {
  const Vec3 d = a - b;
  return d.x * d.x + d.y * d.y + d.z * d.z;
}
inline double distance(Vec3 a, Vec3 b) { return std::sqrt(squared_distance(a, b)); }

using PointSet = std::vector<Vec3>;

// Cuboid with y up. size = (l, h, w) measured along the box-frame x, y and z
// axes; yaw rotates the box frame about +y so that a local offset (x, z)
// maps to (x cos - z sin, x sin + z cos).
struct Box3D {
  Vec3 center;
  Vec3 size{1, 1, 1};
  double yaw = 0.0;
  int class_id = 0;
  double score = 1.0;

  double volume() const { return size.x * size.y * size.z; }
  friend bool operator==(const Box3D&, const Box3D&) = default;
};

// Throws ArgumentError unless every extent is positive and score is in [0, 1].
void validate_box(const Box3D& b);

enum class IouMode { axis_aligned, oriented };

// Box-frame offset -> world coordinates.
Vec3 box_to_world(const Box3D& b, Vec3 local);
// World coordinates -> box frame (un-rotated, relative to center).
Vec3 world_to_box(const Box3D& b, Vec3 p);

std::array<Vec3, 8> box_corners(const Box3D& b);

// Inclusive: points on a face count as inside. `margin` inflates every
// half-extent.
bool point_in_box(Vec3 p, const Box3D& b, double margin = 0.0);

// Axis-aligned mode ignores yaw. Oriented mode intersects the bird-view
// (x/z) footprints as convex polygons and multiplies by the vertical overlap.
double iou_3d(const Box3D& a, const Box3D& b, IouMode mode = IouMode::axis_aligned);

// First index is seed_index; each next index maximizes the distance to the
// chosen set, lowest index winning ties.
std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t count,
                                               std::size_t seed_index);

// Greedy NMS by descending score (ties: lower index first). A box is dropped
// iff its IoU with an already kept box is strictly greater than the
// threshold. Returns kept indices in descending score order.
std::vector<std::size_t> nms(std::span<const Box3D> boxes, double iou_threshold,
                             IouMode mode = IouMode::axis_aligned);

// Indices ordered by descending score, ties by ascending index.
std::vector<std::size_t> order_by_score(std::span<const double> scores);

}  // namespace gf3d
