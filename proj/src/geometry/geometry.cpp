#include "gf3d/geometry/geometry.h"

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>

#include "gf3d/errors.h"

namespace gf3d {

namespace {

struct Vec2 {
  double x, y;
};

double cross(Vec2 o, Vec2 a, Vec2 b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

double polygon_area(const std::vector<Vec2>& poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2 p = poly[i];
    const Vec2 q = poly[(i + 1) % poly.size()];
    a += p.x * q.y - q.x * p.y;
  }
  return std::abs(a) * 0.5;
}

// Footprint in the (x, z) plane, counter-clockwise.
std::vector<Vec2> footprint(const Box3D& b) {
  const double hl = b.size.x / 2, hw = b.size.z / 2;
  std::vector<Vec2> out;
  for (auto [sx, sz] : {std::pair{-1.0, -1.0}, {1.0, -1.0}, {1.0, 1.0}, {-1.0, 1.0}}) {
    const Vec3 w = box_to_world(b, {sx * hl, 0.0, sz * hw});
    out.push_back({w.x, w.z});
  }
  if (cross(out[0], out[1], out[2]) < 0) std::reverse(out.begin(), out.end());
  return out;
}

// Sutherland-Hodgman: clip `subject` by the convex counter-clockwise `clip`.
std::vector<Vec2> clip_polygon(std::vector<Vec2> subject, const std::vector<Vec2>& clip) {
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const Vec2 a = clip[e];
    const Vec2 b = clip[(e + 1) % clip.size()];
    std::vector<Vec2> input = std::move(subject);
    subject.clear();
    for (std::size_t i = 0; i < input.size(); ++i) {
      const Vec2 cur = input[i];
      const Vec2 prev = input[(i + input.size() - 1) % input.size()];
      const double dc = cross(a, b, cur);
      const double dp = cross(a, b, prev);
      if (dc >= 0) {
        if (dp < 0) {
          const double t = dp / (dp - dc);
          subject.push_back({prev.x + t * (cur.x - prev.x), prev.y + t * (cur.y - prev.y)});
        }
        subject.push_back(cur);
      } else if (dp >= 0) {
        const double t = dp / (dp - dc);
        subject.push_back({prev.x + t * (cur.x - prev.x), prev.y + t * (cur.y - prev.y)});
      }
    }
  }
  return subject;
}

double interval_overlap(double c1, double e1, double c2, double e2) {
  const double lo = std::max(c1 - e1 / 2, c2 - e2 / 2);
  const double hi = std::min(c1 + e1 / 2, c2 + e2 / 2);
  return std::max(0.0, hi - lo);
}

}  // namespace

void validate_box(const Box3D& b) {
  if (!(b.size.x > 0 && b.size.y > 0 && b.size.z > 0)) {
    throw ArgumentError("box size must be positive, got (" + std::to_string(b.size.x) + ", " +
                        std::to_string(b.size.y) + ", " + std::to_string(b.size.z) + ")");
  }
  if (!(b.score >= 0.0 && b.score <= 1.0)) throw ArgumentError("box score must lie in [0, 1]");
}

Vec3 box_to_world(const Box3D& b, Vec3 local) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  return {b.center.x + c * local.x - s * local.z, b.center.y + local.y, b.center.z + s * local.x + c * local.z};
}

Vec3 world_to_box(const Box3D& b, Vec3 p) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const Vec3 d = p - b.center;
  return {c * d.x + s * d.z, d.y, -s * d.x + c * d.z};
}

std::array<Vec3, 8> box_corners(const Box3D& b) {
  std::array<Vec3, 8> out;
  std::size_t i = 0;
  for (double sx : {-1.0, 1.0}) {
    for (double sy : {-1.0, 1.0}) {
      for (double sz : {-1.0, 1.0}) {
        out[i++] = box_to_world(b, {sx * b.size.x / 2, sy * b.size.y / 2, sz * b.size.z / 2});
      }
    }
  }
  return out;
}

bool point_in_box(Vec3 p, const Box3D& b, double margin) {
  const Vec3 l = world_to_box(b, p);
  return std::abs(l.x) <= b.size.x / 2 + margin && std::abs(l.y) <= b.size.y / 2 + margin &&
         std::abs(l.z) <= b.size.z / 2 + margin;
}

double iou_3d(const Box3D& a, const Box3D& b, IouMode mode) {
  validate_box(a);
  validate_box(b);
  const double dy = interval_overlap(a.center.y, a.size.y, b.center.y, b.size.y);
  double inter = 0.0;
  if (dy > 0) {
    if (mode == IouMode::axis_aligned) {
      inter = interval_overlap(a.center.x, a.size.x, b.center.x, b.size.x) *
              interval_overlap(a.center.z, a.size.z, b.center.z, b.size.z) * dy;
    } else {
      inter = polygon_area(clip_polygon(footprint(a), footprint(b))) * dy;
    }
  }
  const double uni = a.volume() + b.volume() - inter;
  if (uni <= 0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t count,
                                               std::size_t seed_index) {
  const std::size_t n = points.size();
  if (count == 0 || count > n) {
    throw ArgumentError("farthest_point_sample: count " + std::to_string(count) + " not in [1, " +
                        std::to_string(n) + "]");
  }
  if (seed_index >= n) throw ArgumentError("farthest_point_sample: seed index out of range");
  std::vector<std::size_t> out;
  out.reserve(count);
  std::vector<double> mind(n, std::numeric_limits<double>::infinity());
  std::size_t last = seed_index;
  out.push_back(last);
  mind[last] = -1.0;
  while (out.size() < count) {
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mind[i] < 0) continue;
      mind[i] = std::min(mind[i], squared_distance(points[i], points[last]));
      if (mind[i] > best_d) {
        best_d = mind[i];
        best = i;
      }
    }
    last = best;
    mind[last] = -1.0;
    out.push_back(last);
  }
  return out;
}

std::vector<std::size_t> order_by_score(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

std::vector<std::size_t> nms(std::span<const Box3D> boxes, double iou_threshold, IouMode mode) {
  if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) throw ArgumentError("nms: threshold must lie in [0, 1]");
  std::vector<double> scores(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) scores[i] = boxes[i].score;
  std::vector<std::size_t> kept;
  for (std::size_t i : order_by_score(scores)) {
    bool keep = true;
    for (std::size_t k : kept) {
      if (iou_3d(boxes[i], boxes[k], mode) > iou_threshold) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(i);
  }
  return kept;
}

}  // namespace gf3d
