#include "gf3d/evalkit/evalkit.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "gf3d/errors.h"

namespace gf3d {

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

DetectionResult classwise_nms(const DetectionResult& dets, double iou_threshold, IouMode mode) {
  std::set<int> classes;
  for (const Box3D& b : dets.boxes) classes.insert(b.class_id);
  std::vector<std::size_t> kept;
  for (int c : classes) {
    std::vector<std::size_t> members;
    std::vector<Box3D> boxes;
    for (std::size_t i = 0; i < dets.boxes.size(); ++i) {
      if (dets.boxes[i].class_id == c) {
        members.push_back(i);
        boxes.push_back(dets.boxes[i]);
      }
    }
    for (std::size_t k : nms(boxes, iou_threshold, mode)) kept.push_back(members[k]);
  }
  std::vector<double> scores;
  for (std::size_t i : kept) scores.push_back(dets.boxes[i].score);
  DetectionResult out;
  out.scene_id = dets.scene_id;
  for (std::size_t o : order_by_score(scores)) {
    const std::size_t i = kept[o];
    out.boxes.push_back(dets.boxes[i]);
    out.source_stage.push_back(i < dets.source_stage.size() ? dets.source_stage[i] : 0);
  }
  return out;
}

DetectionResult ensemble_stages(std::span<const DetectionResult> stages, double iou_threshold, IouMode mode) {
  if (stages.empty()) throw ArgumentError("ensemble_stages: need at least one stage");
  DetectionResult pooled;
  pooled.scene_id = stages[0].scene_id;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    if (stages[s].scene_id != pooled.scene_id) throw DataError("ensemble_stages: stages come from different scenes");
    for (std::size_t i = 0; i < stages[s].boxes.size(); ++i) {
      pooled.boxes.push_back(stages[s].boxes[i]);
      pooled.source_stage.push_back(i < stages[s].source_stage.size() ? stages[s].source_stage[i] : s);
    }
  }
  return classwise_nms(pooled, iou_threshold, mode);
}

std::vector<MatchedDetection> match_detections(const DetectionResult& dets, std::span<const Box3D> gt,
                                               double iou_threshold, int class_id, IouMode mode) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw ArgumentError("match_detections: threshold must lie in (0, 1]");
  std::vector<std::size_t> members;
  std::vector<double> scores;
  for (std::size_t i = 0; i < dets.boxes.size(); ++i) {
    if (dets.boxes[i].class_id == class_id) {
      members.push_back(i);
      scores.push_back(dets.boxes[i].score);
    }
  }
  std::vector<char> used(gt.size(), 0);
  std::vector<MatchedDetection> out;
  for (std::size_t o : order_by_score(scores)) {
    const Box3D& d = dets.boxes[members[o]];
    std::size_t best = gt.size();
    double best_iou = -1.0;
    for (std::size_t j = 0; j < gt.size(); ++j) {
      if (used[j] || gt[j].class_id != class_id) continue;
      const double iou = iou_3d(d, gt[j], mode);
      if (iou >= iou_threshold && iou > best_iou) {
        best_iou = iou;
        best = j;
      }
    }
    if (best < gt.size()) used[best] = 1;
    out.push_back({d.score, best < gt.size()});
  }
  return out;
}

std::vector<PrPoint> pr_curve(std::span<const bool> tp_flags, std::size_t num_gt) {
  std::vector<PrPoint> out;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < tp_flags.size(); ++i) {
    if (tp_flags[i]) ++tp;
    const double recall = num_gt ? static_cast<double>(tp) / static_cast<double>(num_gt) : 0.0;
    out.push_back({recall, static_cast<double>(tp) / static_cast<double>(i + 1)});
  }
  return out;
}

double average_precision(std::span<const bool> tp_flags, std::size_t num_gt) {
  if (num_gt == 0) return tp_flags.empty() ? 1.0 : 0.0;
  const auto curve = pr_curve(tp_flags, num_gt);
  // Precision envelope from the right, then sum over recall steps.
  std::vector<double> env(curve.size());
  double run = 0.0;
  for (std::size_t i = curve.size(); i-- > 0;) {
    run = std::max(run, curve[i].precision);
    env[i] = run;
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (curve[i].recall > prev_recall) {
      ap += (curve[i].recall - prev_recall) * env[i];
      prev_recall = curve[i].recall;
    }
  }
  return ap;
}

double EvalReport::map_at(double iou_threshold) const {
  for (const auto& t : thresholds) {
    if (t.iou_threshold == iou_threshold) return t.map;
  }
  throw ArgumentError("no report for IoU threshold " + fmt("%.2f", iou_threshold));
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "iou_threshold,class,num_gt,num_det,ap\n";
  for (const auto& t : thresholds) {
    const std::string thr = fmt("%.2f", t.iou_threshold);
    for (const auto& c : t.classes) {
      os << thr << ',' << c.class_id << ',' << c.num_gt << ',' << c.num_det << ',' << fmt("%.6f", c.ap) << '\n';
    }
    os << thr << ",mAP,,," << fmt("%.6f", t.map) << '\n';
  }
  return os.str();
}

EvalReport evaluate(std::span<const DetectionResult> results, std::span<const GroundTruth> gts,
                    std::span<const double> thresholds, std::size_t num_classes, IouMode mode) {
  std::unordered_map<std::string, std::size_t> scene_index;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    if (!scene_index.emplace(gts[i].scene_id, i).second) throw DataError("duplicate ground-truth scene: " + gts[i].scene_id);
  }
  std::vector<const DetectionResult*> by_scene(gts.size(), nullptr);
  for (const auto& r : results) {
    auto it = scene_index.find(r.scene_id);
    if (it == scene_index.end()) throw DataError("detections reference unknown scene: " + r.scene_id);
    if (by_scene[it->second] != nullptr) throw DataError("duplicate detections for scene: " + r.scene_id);
    by_scene[it->second] = &r;
  }
  const DetectionResult empty;
  EvalReport report;
  for (double thr : thresholds) {
    ThresholdReport tr;
    tr.iou_threshold = thr;
    double total = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
      const int cls = static_cast<int>(c);
      ClassAp ca;
      ca.class_id = cls;
      std::vector<MatchedDetection> pooled;
      for (std::size_t s = 0; s < gts.size(); ++s) {
        for (const Box3D& b : gts[s].boxes) ca.num_gt += b.class_id == cls;
        const DetectionResult& d = by_scene[s] ? *by_scene[s] : empty;
        auto m = match_detections(d, gts[s].boxes, thr, cls, mode);
        pooled.insert(pooled.end(), m.begin(), m.end());
      }
      std::stable_sort(pooled.begin(), pooled.end(),
                       [](const MatchedDetection& a, const MatchedDetection& b) { return a.score > b.score; });
      std::vector<bool> flags;
      for (const auto& m : pooled) flags.push_back(m.true_positive);
      std::vector<char> raw(flags.begin(), flags.end());
      std::span<const bool> fs(reinterpret_cast<const bool*>(raw.data()), raw.size());
      ca.num_det = flags.size();
      ca.ap = average_precision(fs, ca.num_gt);
      ca.curve = pr_curve(fs, ca.num_gt);
      total += ca.ap;
      tr.classes.push_back(std::move(ca));
    }
    tr.map = num_classes ? total / static_cast<double>(num_classes) : 0.0;
    report.thresholds.push_back(std::move(tr));
  }
  return report;
}

void write_detections(const std::filesystem::path& path, std::span<const DetectionResult> results) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open detections file for writing: " + path.string());
  out << "# scene_id class score cx cy cz l h w yaw\n";
  char buf[512];
  for (const auto& r : results) {
    for (const Box3D& b : r.boxes) {
      std::snprintf(buf, sizeof buf, "%s %d %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", r.scene_id.c_str(),
                    b.class_id, b.score, b.center.x, b.center.y, b.center.z, b.size.x, b.size.y, b.size.z, b.yaw);
      out << buf;
    }
  }
}

std::vector<DetectionResult> read_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open detections file: " + path.string());
  std::vector<DetectionResult> out;
  std::unordered_map<std::string, std::size_t> index;
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    const std::uint64_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string scene;
    Box3D b;
    if (!(ls >> scene >> b.class_id >> b.score >> b.center.x >> b.center.y >> b.center.z >> b.size.x >> b.size.y >>
          b.size.z >> b.yaw)) {
      throw FormatError("malformed detection record", line_start);
    }
    std::string extra;
    if (ls >> extra) throw FormatError("trailing fields in detection record", line_start);
    try {
      validate_box(b);
    } catch (const ArgumentError& e) {
      throw FormatError(std::string("invalid detection box: ") + e.what(), line_start);
    }
    auto [it, fresh] = index.emplace(scene, out.size());
    if (fresh) out.push_back(DetectionResult{scene, {}, {}});
    out[it->second].boxes.push_back(b);
    out[it->second].source_stage.push_back(0);
  }
  return out;
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open report for writing: " + path.string());
  out << report.to_csv();
}

void write_pr_svgs(const std::filesystem::path& dir, const EvalReport& report) {
  std::filesystem::create_directories(dir);
  if (report.thresholds.empty()) return;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  const double w = 360, h = 360, m = 40;
  for (std::size_t c = 0; c < report.thresholds[0].classes.size(); ++c) {
    std::ofstream out(dir / ("pr_class" + std::to_string(report.thresholds[0].classes[c].class_id) + ".svg"));
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w + 2 * m << "\" height=\"" << h + 2 * m << "\">\n";
    out << "<rect x=\"" << m << "\" y=\"" << m << "\" width=\"" << w << "\" height=\"" << h
        << "\" fill=\"none\" stroke=\"#444\"/>\n";
    out << "<text x=\"" << m + w / 2 << "\" y=\"" << h + 2 * m - 8 << "\" text-anchor=\"middle\">recall</text>\n";
    out << "<text x=\"12\" y=\"" << m + h / 2 << "\" transform=\"rotate(-90 12 " << m + h / 2
        << ")\" text-anchor=\"middle\">precision</text>\n";
    for (std::size_t t = 0; t < report.thresholds.size(); ++t) {
      const ClassAp& ca = report.thresholds[t].classes[c];
      out << "<polyline fill=\"none\" stroke=\"" << kColors[t % 5] << "\" points=\"";
      for (const PrPoint& p : ca.curve) out << m + p.recall * w << ',' << m + (1.0 - p.precision) * h << ' ';
      out << "\"/>\n";
      out << "<text x=\"" << m + 8 << "\" y=\"" << m + 16 + 16 * static_cast<double>(t) << "\" fill=\"" << kColors[t % 5]
          << "\">IoU " << fmt("%.2f", report.thresholds[t].iou_threshold) << " AP " << fmt("%.4f", ca.ap) << "</text>\n";
    }
    out << "</svg>\n";
  }
}

}  // namespace gf3d
