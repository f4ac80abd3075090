#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "gf3d/errors.h"
#include "gf3d/evalkit/evalkit.h"
#include "support/eval_oracles.h"
#include "support/oracles.h"

using namespace gf3d;

namespace {

Box3D bx(Vec3 c, int cls, double score = 1.0, double edge = 1.0) {
  Box3D b;
  b.center = c;
  b.size = {edge, edge, edge};
  b.class_id = cls;
  b.score = score;
  return b;
}

std::filesystem::path scratch(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / "gf3d_tests";
  std::filesystem::create_directories(d);
  return d / name;
}

std::vector<bool> flags_of(const std::vector<MatchedDetection>& m) {
  std::vector<bool> f;
  for (const auto& x : m) f.push_back(x.true_positive);
  return f;
}

}  // namespace

TEST_CASE("ensemble") {
  DetectionResult a{"s", {bx({0, 0, 0}, 0, 0.7), bx({0.05, 0, 0}, 0, 0.6), bx({0, 0, 0}, 1, 0.5)}, {0, 0, 0}};
  const DetectionResult one[] = {a};
  auto single = ensemble_stages(one, 0.25);
  auto direct = classwise_nms(a, 0.25);
  CHECK(single.boxes == direct.boxes);
  CHECK(single.boxes.size() == 2);

  DetectionResult b{"s", {bx({0, 0, 0}, 0, 0.9)}, {1}};
  const DetectionResult both[] = {a, b};
  auto e = ensemble_stages(both, 0.25);
  CHECK(e.boxes[0].score == 0.9);
  CHECK(e.source_stage[0] == 1);
  CHECK(e.boxes.size() == 2);

  DetectionResult other{"t", {}, {}};
  const DetectionResult mixed[] = {a, other};
  CHECK_THROWS_AS(ensemble_stages(mixed, 0.25), DataError);

  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    std::vector<DetectionResult> stages(1 + rng() % 4);
    for (std::size_t s = 0; s < stages.size(); ++s) {
      stages[s].scene_id = "x";
      for (int i = 0; i < 8; ++i) {
        Box3D b = testing::random_box(rng, false);
        b.class_id = static_cast<int>(rng() % 3);
        stages[s].boxes.push_back(b);
        stages[s].source_stage.push_back(s);
      }
    }
    auto out = ensemble_stages(stages, 0.25);
    for (std::size_t i = 0; i < out.boxes.size(); ++i)
      for (std::size_t j = i + 1; j < out.boxes.size(); ++j)
        if (out.boxes[i].class_id == out.boxes[j].class_id) CHECK(iou_3d(out.boxes[i], out.boxes[j]) <= 0.25);
  }
}

TEST_CASE("matching") {
  const std::vector<Box3D> gt{bx({0, 0, 0}, 0)};
  DetectionResult exact{"s", {bx({0, 0, 0}, 0, 0.5)}, {0}};
  CHECK(flags_of(match_detections(exact, gt, 0.5, 0)) == std::vector<bool>{true});
  DetectionResult two{"s", {bx({0.1, 0, 0}, 0, 0.4), bx({0, 0, 0}, 0, 0.8)}, {0, 0}};
  auto m = match_detections(two, gt, 0.25, 0);
  CHECK(flags_of(m) == std::vector<bool>{true, false});
  CHECK(m[0].score == 0.8);
  DetectionResult wrong{"s", {bx({0, 0, 0}, 1, 0.9)}, {0}};
  CHECK(match_detections(wrong, gt, 0.25, 0).empty());
  CHECK_THROWS_AS(match_detections(exact, gt, 0.0, 0), ArgumentError);
  CHECK_THROWS_AS(match_detections(exact, gt, 1.5, 0), ArgumentError);

  std::mt19937_64 rng(5);
  for (int t = 0; t < 200; ++t) {
    std::vector<Box3D> g(rng() % 6), d(rng() % 17);
    for (Box3D& b : g) {
      b = testing::random_box(rng, false);
      b.class_id = static_cast<int>(rng() % 2);
    }
    for (Box3D& b : d) {
      b = testing::random_box(rng, false);
      b.class_id = static_cast<int>(rng() % 2);
    }
    const double thr = 0.05 + (rng() % 90) / 100.0;
    DetectionResult r{"s", d, std::vector<std::size_t>(d.size(), 0)};
    for (int c = 0; c < 2; ++c) CHECK(flags_of(match_detections(r, g, thr, c)) == testing::match_oracle(d, g, thr, c));
  }
}

TEST_CASE("average precision") {
  CHECK(average_precision({}, 2) == 0.0);
  bool tft[] = {true, false, true};
  CHECK(average_precision(tft, 2) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  bool tt[] = {true, true};
  CHECK(average_precision(tt, 2) == 1.0);
  CHECK(average_precision({}, 0) == 1.0);
  CHECK(average_precision(tt, 0) == 0.0);

  std::mt19937_64 rng(7);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = rng() % 17;
    std::vector<bool> flags(n);
    std::size_t tp = 0;
    for (std::size_t i = 0; i < n; ++i) tp += (flags[i] = rng() % 2);
    const std::size_t num_gt = tp + rng() % 3;
    std::unique_ptr<bool[]> buf(new bool[n + 1]);
    for (std::size_t i = 0; i < n; ++i) buf[i] = flags[i];
    CHECK(average_precision(std::span<const bool>(buf.get(), n), num_gt) ==
          doctest::Approx(testing::ap_oracle(flags, num_gt)).epsilon(1e-12));
  }
}

TEST_CASE("evaluate") {
  const std::vector<GroundTruth> gts{{"a", {bx({0, 0, 0}, 0), bx({3, 0, 0}, 1)}}, {"b", {bx({0, 0, 3}, 1)}}};
  const double thr[] = {0.25, 0.5};
  std::vector<DetectionResult> perfect{{"a", gts[0].boxes, {0, 0}}, {"b", gts[1].boxes, {0}}};
  auto r = evaluate(perfect, gts, thr, 2);
  CHECK(r.map_at(0.25) == 1.0);
  CHECK(r.map_at(0.5) == 1.0);
  CHECK(evaluate({}, gts, thr, 2).map_at(0.25) == 0.0);

  std::vector<DetectionResult> unknown{{"zzz", {}, {}}};
  CHECK_THROWS_AS(evaluate(unknown, gts, thr, 2), DataError);

  std::mt19937_64 rng(9);
  for (int t = 0; t < 30; ++t) {
    std::vector<DetectionResult> dets;
    for (const auto& g : gts) {
      DetectionResult d{g.scene_id, {}, {}};
      for (int i = 0; i < 6; ++i) {
        Box3D b = g.boxes[rng() % g.boxes.size()];
        b.center = b.center + testing::random_points(rng, 1, 0.5)[0];
        b.score = (1 + rng() % 999) / 1000.0;
        b.class_id = static_cast<int>(rng() % 2);
        d.boxes.push_back(b);
        d.source_stage.push_back(0);
      }
      dets.push_back(d);
    }
    auto rep = evaluate(dets, gts, thr, 2);
    CHECK(rep.map_at(0.5) <= rep.map_at(0.25));
    auto squashed = dets;
    for (auto& d : squashed)
      for (Box3D& b : d.boxes) b.score = std::pow(b.score, 3.0);
    CHECK(evaluate(squashed, gts, thr, 2).to_csv() == rep.to_csv());
  }
}

TEST_CASE("detection files") {
  std::vector<DetectionResult> dets{{"s0", {bx({0.1, 0.2, 0.3}, 2, 0.123456789)}, {0}}, {"s1", {}, {}}};
  dets[0].boxes[0].yaw = -1.25;
  const auto path = scratch("dets.txt");
  write_detections(path, dets);
  auto back = read_detections(path);
  REQUIRE(back.size() == 1);
  CHECK(back[0].boxes == dets[0].boxes);

  {
    std::ofstream f(path);
    f << "# scene_id class score cx cy cz l h w yaw\n";
    f << "s0 0 0.5 0 0 0 1 1 1 0\n";
    f << "s0 0 0.5 0 0 zero 1 1 1 0\n";
  }
  try {
    read_detections(path);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 65);
  }
  {
    std::ofstream f(path);
    f << "s0 0 1.5 0 0 0 1 1 1 0\n";
  }
  CHECK_THROWS(read_detections(path));
}

TEST_CASE("report outputs") {
  const std::vector<GroundTruth> gts{{"a", {bx({0, 0, 0}, 0)}}};
  std::vector<DetectionResult> d{{"a", {bx({0, 0, 0}, 0, 0.5)}, {0}}};
  const double thr[] = {0.25};
  auto r = evaluate(d, gts, thr, 2);
  CHECK(r.to_csv() ==
        "iou_threshold,class,num_gt,num_det,ap\n0.25,0,1,1,1.000000\n0.25,1,0,0,1.000000\n0.25,mAP,,,1.000000\n");
  const auto dir = scratch("pr");
  std::filesystem::remove_all(dir);
  write_pr_svgs(dir, r);
  CHECK(std::filesystem::exists(dir / "pr_class0.svg"));
  CHECK(std::filesystem::exists(dir / "pr_class1.svg"));
}
