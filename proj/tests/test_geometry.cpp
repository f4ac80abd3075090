#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "gf3d/errors.h"
#include "gf3d/geometry/geometry.h"
#include "support/oracles.h"

using namespace gf3d;

namespace {

Box3D cube(Vec3 c, double edge, double score = 1.0) {
  Box3D b;
  b.center = c;
  b.size = {edge, edge, edge};
  b.score = score;
  return b;
}

}  // namespace

TEST_CASE("farthest point sampling") {
  const std::vector<Vec3> line{{0, 0, 0}, {1, 0, 0}, {10, 0, 0}};
  CHECK(farthest_point_sample(line, 2, 0) == std::vector<std::size_t>{0, 2});
  CHECK(farthest_point_sample(line, 1, 1) == std::vector<std::size_t>{1});
  auto all = farthest_point_sample(line, 3, 0);
  std::sort(all.begin(), all.end());
  CHECK(all == std::vector<std::size_t>{0, 1, 2});
  CHECK_THROWS_AS(farthest_point_sample(line, 4, 0), ArgumentError);
  CHECK_THROWS_AS(farthest_point_sample(line, 1, 3), ArgumentError);

  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng() % 64;
    auto pts = testing::random_points(rng, n);
    if (t % 5 == 0) pts[n - 1] = pts[0];  // duplicates exercise the tie rule
    const std::size_t count = 1 + rng() % n;
    const std::size_t seed = rng() % n;
    CHECK(farthest_point_sample(pts, count, seed) == testing::fps_oracle(pts, count, seed));
  }
}

TEST_CASE("iou basics") {
  const Box3D a = cube({0, 0, 0}, 2);
  CHECK(iou_3d(a, a) == 1.0);
  CHECK(iou_3d(a, cube({5, 0, 0}, 2)) == 0.0);
  CHECK(iou_3d(a, cube({1, 0, 0}, 2)) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(testing::iou_monte_carlo(a, cube({1, 0, 0}, 2), 1000000, 1) == doctest::Approx(1.0 / 3.0).epsilon(2e-3 * 3));

  Box3D bad = a;
  bad.size.y = 0;
  CHECK_THROWS_AS(iou_3d(a, bad), ArgumentError);
  CHECK_THROWS_AS(iou_3d(bad, a, IouMode::oriented), ArgumentError);
}

TEST_CASE("iou symmetry, scale invariance and oriented agreement") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 200; ++t) {
    Box3D a = testing::random_box(rng, true), b = testing::random_box(rng, true);
    for (IouMode m : {IouMode::axis_aligned, IouMode::oriented}) {
      const double ab = iou_3d(a, b, m);
      CHECK(ab >= 0.0);
      CHECK(ab <= 1.0);
      CHECK(ab == doctest::Approx(iou_3d(b, a, m)).epsilon(1e-12));
      CHECK(iou_3d(a, a, m) == doctest::Approx(1.0).epsilon(1e-12));
      Box3D as = a, bs = b;
      as.center = a.center * 3.7;
      as.size = a.size * 3.7;
      bs.center = b.center * 3.7;
      bs.size = b.size * 3.7;
      CHECK(std::abs(iou_3d(as, bs, m) - ab) <= 1e-12);
    }
    a.yaw = 0;
    b.yaw = 0;
    CHECK(iou_3d(a, b, IouMode::oriented) == doctest::Approx(iou_3d(a, b)).epsilon(1e-12));
  }
  for (int t = 0; t < 5; ++t) {
    Box3D a = testing::random_box(rng, true), b = a;
    b.center = b.center + Vec3{0.2, 0.1, -0.15};
    b.yaw += 0.6;
    CHECK(std::abs(iou_3d(a, b, IouMode::oriented) - testing::iou_monte_carlo(a, b, 400000, t)) < 5e-3);
  }
}

TEST_CASE("nms") {
  CHECK(nms({}, 0.25).empty());
  const std::vector<Box3D> one{cube({0, 0, 0}, 1)};
  CHECK(nms(one, 0.25) == std::vector<std::size_t>{0});
  const std::vector<Box3D> same{cube({0, 0, 0}, 1, 0.8), cube({0, 0, 0}, 1, 0.9)};
  CHECK(nms(same, 0.25) == std::vector<std::size_t>{1});
  const std::vector<Box3D> apart{cube({0, 0, 0}, 1, 0.8), cube({4, 0, 0}, 1, 0.9)};
  CHECK(nms(apart, 0.0) == std::vector<std::size_t>{1, 0});
  const std::vector<Box3D> tie{cube({0, 0, 0}, 1, 0.5), cube({0, 0, 0}, 1, 0.5)};
  CHECK(nms(tie, 0.25) == std::vector<std::size_t>{0});
  // IoU exactly at the threshold survives.
  const std::vector<Box3D> edge{cube({0, 0, 0}, 2, 0.9), cube({1, 0, 0}, 2, 0.8)};
  CHECK(nms(edge, iou_3d(edge[0], edge[1])).size() == 2);

  std::mt19937_64 rng(9);
  for (int t = 0; t < 100; ++t) {
    std::vector<Box3D> boxes(1 + rng() % 32);
    const bool yaw = t % 2;
    for (Box3D& b : boxes) b = testing::random_box(rng, yaw);
    const double thr = (rng() % 100) / 100.0;
    const IouMode m = yaw ? IouMode::oriented : IouMode::axis_aligned;
    const auto kept = nms(boxes, thr, m);
    CHECK(kept == testing::nms_oracle(boxes, thr, m));
    for (std::size_t i = 0; i < kept.size(); ++i)
      for (std::size_t j = i + 1; j < kept.size(); ++j) CHECK(iou_3d(boxes[kept[i]], boxes[kept[j]], m) <= thr);
  }
}

TEST_CASE("box corners") {
  Box3D b = cube({0, 0, 0}, 2);
  for (Vec3 c : box_corners(b)) {
    CHECK(std::abs(c.x) == 1.0);
    CHECK(std::abs(c.y) == 1.0);
    CHECK(std::abs(c.z) == 1.0);
  }
  b.size = {2, 2, 4};
  b.yaw = std::numbers::pi / 2;
  double max_x = 0, max_z = 0;
  for (Vec3 c : box_corners(b)) {
    max_x = std::max(max_x, std::abs(c.x));
    max_z = std::max(max_z, std::abs(c.z));
  }
  CHECK(max_x == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(max_z == doctest::Approx(1.0).epsilon(1e-12));

  Box3D r = b, s = b;
  r.yaw = 0;
  s.yaw = 2 * std::numbers::pi;
  const auto cr = box_corners(r), cs = box_corners(s);
  for (std::size_t i = 0; i < 8; ++i) CHECK(distance(cr[i], cs[i]) < 1e-12);
}

TEST_CASE("point in box") {
  Box3D b = cube({1, 2, 3}, 2);
  b.size.x = 3;
  CHECK(point_in_box({1, 2, 3}, b));
  CHECK(point_in_box({2.5, 2, 3}, b));
  CHECK_FALSE(point_in_box({2.5 + 1e-9, 2, 3}, b));

  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> ang(-3.2, 3.2), tr(-5, 5);
  for (int t = 0; t < 500; ++t) {
    Box3D box = testing::random_box(rng, true);
    Vec3 p = testing::random_points(rng, 1)[0];
    const double dy = ang(rng);
    const Vec3 shift{tr(rng), tr(rng), tr(rng)};
    auto move = [&](Vec3 v) {
      const double c = std::cos(dy), s = std::sin(dy);
      return Vec3{v.x * c - v.z * s, v.y, v.x * s + v.z * c} + shift;
    };
    Box3D moved = box;
    moved.center = move(box.center);
    moved.yaw = box.yaw + dy;
    const Vec3 local = world_to_box(box, p);
    const Vec3 local_moved = world_to_box(moved, move(p));
    CHECK(distance(local, local_moved) < 1e-9);
    // Skip points within rounding of a face.
    bool near_face = false;
    for (std::size_t k = 0; k < 3; ++k) near_face |= std::abs(std::abs(local[k]) - box.size[k] / 2) < 1e-9;
    if (!near_face) CHECK(point_in_box(p, box) == point_in_box(move(p), moved));
    CHECK(distance(box_to_world(box, local), p) < 1e-12);
  }
}
