#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "gf3d/geometry/geometry.h"

namespace gf3d::testing {

inline std::vector<std::size_t> fps_oracle(const std::vector<Vec3>& pts, std::size_t count, std::size_t seed) {
  std::vector<std::size_t> chosen{seed};
  while (chosen.size() < count) {
    double best = -1;
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
      double d = std::numeric_limits<double>::infinity();
      for (std::size_t c : chosen) d = std::min(d, squared_distance(pts[i], pts[c]));
      if (d > best) {
        best = d;
        best_i = i;
      }
    }
    chosen.push_back(best_i);
  }
  return chosen;
}

// Monte Carlo volume overlap over the joint bounding cube.
inline double iou_monte_carlo(const Box3D& a, const Box3D& b, std::size_t samples, std::uint64_t seed) {
  Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  for (const Box3D* bx : {&a, &b}) {
    for (Vec3 c : box_corners(*bx)) {
      for (std::size_t k = 0; k < 3; ++k) {
        lo[k] = std::min(lo[k], c[k]);
        hi[k] = std::max(hi[k], c[k]);
      }
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::size_t in_a = 0, in_b = 0, both = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    Vec3 p;
    for (std::size_t k = 0; k < 3; ++k) p[k] = lo[k] + (hi[k] - lo[k]) * u(rng);
    const bool ia = point_in_box(p, a), ib = point_in_box(p, b);
    in_a += ia;
    in_b += ib;
    both += ia && ib;
  }
  const double uni = static_cast<double>(in_a + in_b - both);
  return uni > 0 ? both / uni : 0.0;
}

inline std::vector<std::size_t> nms_oracle(const std::vector<Box3D>& boxes, double thr, IouMode mode) {
  std::vector<std::size_t> order(boxes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return boxes[x].score > boxes[y].score; });
  std::vector<bool> dead(boxes.size(), false);
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    if (dead[i]) continue;
    kept.push_back(i);
    for (std::size_t j : order) {
      if (!dead[j] && j != i && iou_3d(boxes[i], boxes[j], mode) > thr) dead[j] = true;
    }
  }
  return kept;
}

inline Box3D random_box(std::mt19937_64& rng, bool yaw) {
  std::uniform_real_distribution<double> c(-1, 1), s(0.2, 1.2), a(-3.2, 3.2), sc(0, 1);
  Box3D b;
  b.center = {c(rng), c(rng), c(rng)};
  b.size = {s(rng), s(rng), s(rng)};
  b.yaw = yaw ? a(rng) : 0.0;
  b.score = sc(rng);
  return b;
}

inline std::vector<Vec3> random_points(std::mt19937_64& rng, std::size_t n, double extent = 1.0) {
  std::uniform_real_distribution<double> u(-extent, extent);
  std::vector<Vec3> p(n);
  for (Vec3& v : p) v = {u(rng), u(rng), u(rng)};
  return p;
}

// Brute-force per-point labels: the k inside points nearest each center.
inline std::vector<double> kps_label_oracle(const std::vector<Vec3>& pts, const std::vector<Box3D>& gt, std::size_t k) {
  std::vector<double> lab(pts.size(), 0.0);
  for (const Box3D& b : gt) {
    std::vector<std::size_t> inside;
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (point_in_box(pts[i], b)) inside.push_back(i);
    std::stable_sort(inside.begin(), inside.end(), [&](std::size_t x, std::size_t y) {
      return squared_distance(pts[x], b.center) < squared_distance(pts[y], b.center);
    });
    for (std::size_t j = 0; j < std::min(k, inside.size()); ++j) lab[inside[j]] = 1.0;
  }
  return lab;
}

// Interval products on boxes whose coordinates are multiples of 1/64: every
// intermediate is exact, so the ratio is the correctly rounded true IoU.
inline double iou_intervals(const Box3D& a, const Box3D& b) {
  auto ticks = [](double v) { return static_cast<long long>(std::llround(v * 128.0)); };
  long long inter = 1;
  for (std::size_t k = 0; k < 3; ++k) {
    const long long lo = std::max(ticks(a.center[k] - a.size[k] / 2), ticks(b.center[k] - b.size[k] / 2));
    const long long hi = std::min(ticks(a.center[k] + a.size[k] / 2), ticks(b.center[k] + b.size[k] / 2));
    inter *= std::max(0LL, hi - lo);
  }
  const long long va = ticks(a.size.x) * ticks(a.size.y) * ticks(a.size.z);
  const long long vb = ticks(b.size.x) * ticks(b.size.y) * ticks(b.size.z);
  return static_cast<double>(inter) / static_cast<double>(va + vb - inter);
}

// Monte Carlo inside the smaller box: the covered fraction gives the
// intersection volume.
inline double iou_monte_carlo_inside(const Box3D& a, const Box3D& b, std::size_t samples, std::uint64_t seed) {
  const Box3D& small = a.volume() <= b.volume() ? a : b;
  const Box3D& other = &small == &a ? b : a;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::size_t hit = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    const Vec3 local{u(rng) * small.size.x, u(rng) * small.size.y, u(rng) * small.size.z};
    hit += point_in_box(box_to_world(small, local), other);
  }
  const double inter = small.volume() * static_cast<double>(hit) / static_cast<double>(samples);
  return inter / (a.volume() + b.volume() - inter);
}

}  // namespace gf3d::testing
