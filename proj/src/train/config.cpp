#include "gf3d/train/config.h"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "gf3d/errors.h"

namespace gf3d {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ArgumentError(key + ": not a number: '" + v + "'");
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ArgumentError(key + ": not a non-negative integer: '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ArgumentError(key + ": expected true or false, got '" + v + "'");
}

std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_double(key, item));
  }
  return out;
}

template <class Seq>
std::string join(const Seq& xs) {
  std::string out;
  for (auto x : xs) {
    if (!out.empty()) out += ",";
    if constexpr (std::is_floating_point_v<decltype(x)>) {
      out += fmt_double(x);
    } else {
      out += std::to_string(x);
    }
  }
  return out;
}

template <std::size_t N, class T>
void assign_fixed(const std::string& key, const std::string& v, std::array<T, N>& dst) {
  const auto xs = parse_list(key, v);
  if (xs.size() != N) throw ArgumentError(key + ": expected " + std::to_string(N) + " values");
  for (std::size_t i = 0; i < N; ++i) dst[i] = static_cast<T>(xs[i]);
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define GF3D_DOUBLE(k, member) \
  Field { k, [](const RunConfig& c) { return fmt_double(c.member); }, \
          [](RunConfig& c, const std::string& v) { c.member = parse_double(k, v); } }
#define GF3D_UINT(k, member) \
  Field { k, [](const RunConfig& c) { return std::to_string(c.member); }, \
          [](RunConfig& c, const std::string& v) { c.member = static_cast<decltype(c.member)>(parse_uint(k, v)); } }
#define GF3D_BOOL(k, member) \
  Field { k, [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }, \
          [](RunConfig& c, const std::string& v) { c.member = parse_bool(k, v); } }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      GF3D_UINT("seed", seed),
      GF3D_UINT("epochs", epochs),
      GF3D_UINT("trials", trials),
      GF3D_UINT("threads", threads),
      GF3D_DOUBLE("base_lr", base_lr),
      GF3D_DOUBLE("decoder_lr_factor", decoder_lr_factor),
      GF3D_DOUBLE("weight_decay", weight_decay),
      GF3D_DOUBLE("adam_beta1", adam_beta1),
      GF3D_DOUBLE("adam_beta2", adam_beta2),
      GF3D_DOUBLE("adam_eps", adam_eps),
      Field{"lr_milestones", [](const RunConfig& c) { return join(c.lr_milestones); },
            [](RunConfig& c, const std::string& v) { c.lr_milestones = parse_list("lr_milestones", v); }},
      GF3D_DOUBLE("grad_clip_norm", grad_clip_norm),

      GF3D_UINT("data.train_scenes", data.train_scenes),
      GF3D_UINT("data.val_scenes", data.val_scenes),
      GF3D_BOOL("data.augment", data.augment),

      GF3D_UINT("gen.seed", gen.seed),
      GF3D_UINT("gen.points", gen.points),
      GF3D_UINT("gen.min_boxes", gen.min_boxes),
      GF3D_UINT("gen.max_boxes", gen.max_boxes),
      GF3D_DOUBLE("gen.clutter", gen.clutter),
      GF3D_DOUBLE("gen.occlusion", gen.occlusion),
      GF3D_BOOL("gen.yaw", gen.yaw),
      GF3D_BOOL("gen.height_feature", gen.height_feature),
      GF3D_DOUBLE("gen.max_pair_iou", gen.max_pair_iou),
      GF3D_DOUBLE("gen.size_scale", gen.size_scale),

      GF3D_UINT("backbone.width", backbone.feature_width),
      GF3D_UINT("backbone.neighbors", backbone.neighbors_per_ball),
      Field{"backbone.stage_points", [](const RunConfig& c) { return join(c.backbone.stage_point_counts); },
            [](RunConfig& c, const std::string& v) {
              assign_fixed("backbone.stage_points", v, c.backbone.stage_point_counts);
            }},
      Field{"backbone.stage_radii", [](const RunConfig& c) { return join(c.backbone.stage_radii); },
            [](RunConfig& c, const std::string& v) { assign_fixed("backbone.stage_radii", v, c.backbone.stage_radii); }},
      Field{"backbone.up_points", [](const RunConfig& c) { return join(c.backbone.up_point_counts); },
            [](RunConfig& c, const std::string& v) { assign_fixed("backbone.up_points", v, c.backbone.up_point_counts); }},

      GF3D_UINT("decoder.layers", decoder.layers),
      GF3D_UINT("decoder.heads", decoder.heads),
      GF3D_UINT("decoder.ffn_multiplier", decoder.ffn_multiplier),
      Field{"decoder.encoding", [](const RunConfig& c) { return to_string(c.decoder.encoding); },
            [](RunConfig& c, const std::string& v) { c.decoder.encoding = parse_encoding_mode(v); }},
      Field{"decoder.aggregation", [](const RunConfig& c) { return to_string(c.decoder.aggregation); },
            [](RunConfig& c, const std::string& v) { c.decoder.aggregation = parse_aggregation(v); }},
      GF3D_DOUBLE("decoder.vote_threshold", decoder.vote_threshold),

      Field{"sampling.method", [](const RunConfig& c) { return to_string(c.sampling.method); },
            [](RunConfig& c, const std::string& v) { c.sampling.method = parse_sampling_method(v); }},
      GF3D_UINT("sampling.candidates", sampling.candidates),
      GF3D_UINT("sampling.positives_per_box", sampling.positives_per_box),
      GF3D_DOUBLE("sampling.nms_radius", sampling.nms_radius),

      GF3D_BOOL("head.class_aware_size", head.class_aware_size),
      GF3D_UINT("head.yaw_bins", head.yaw_bins),

      GF3D_DOUBLE("loss.objectness", loss.weights.beta[0]),
      GF3D_DOUBLE("loss.classification", loss.weights.beta[1]),
      GF3D_DOUBLE("loss.center", loss.weights.beta[2]),
      GF3D_DOUBLE("loss.size_class", loss.weights.beta[3]),
      GF3D_DOUBLE("loss.size_offset", loss.weights.beta[4]),
      GF3D_DOUBLE("loss.yaw_class", loss.weights.yaw_class),
      GF3D_DOUBLE("loss.yaw_offset", loss.weights.yaw_offset),
      GF3D_DOUBLE("loss.focal_alpha", loss.weights.focal_alpha),
      GF3D_DOUBLE("loss.focal_gamma", loss.weights.focal_gamma),
      GF3D_DOUBLE("loss.smooth_l1_beta", loss.weights.smooth_l1_beta),
      GF3D_DOUBLE("loss.assign_radius", loss.assign_radius),

      Field{"eval.iou_thresholds", [](const RunConfig& c) { return join(c.eval.iou_thresholds); },
            [](RunConfig& c, const std::string& v) { c.eval.iou_thresholds = parse_list("eval.iou_thresholds", v); }},
      GF3D_BOOL("eval.ensemble", eval.ensemble),
      GF3D_DOUBLE("eval.nms_iou", eval.nms_iou),
      GF3D_UINT("eval.every", eval.every),
  };
  return f;
}

#undef GF3D_DOUBLE
#undef GF3D_UINT
#undef GF3D_BOOL

const Field& field(const std::string& key) {
  for (const Field& f : fields()) {
    if (f.key == key) return f;
  }
  throw ArgumentError("unknown config key: " + key);
}

}  // namespace

void RunConfig::finalize() {
  decoder.width = backbone.feature_width;
  backbone.input_feature_width = gen.height_feature ? 1 : 0;
  head.num_classes = gen.categories.size();
  head.size_templates.clear();
  Vec3 mean{0, 0, 0};
  for (const Category& c : gen.categories) {
    head.size_templates.push_back(c.mean_size * gen.size_scale);
    mean = mean + head.size_templates.back() * (1.0 / static_cast<double>(gen.categories.size()));
  }
  decoder.default_size = mean;
  validate();
}

void RunConfig::validate() const {
  if (!(base_lr > 0)) throw ArgumentError("base_lr must be positive");
  if (!(decoder_lr_factor > 0)) throw ArgumentError("decoder_lr_factor must be positive");
  if (!(weight_decay >= 0)) throw ArgumentError("weight_decay must be non-negative");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1)) {
    throw ArgumentError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0)) throw ArgumentError("adam_eps must be positive");
  double prev = 0.0;
  for (double m : lr_milestones) {
    if (!(m > prev && m < 1.0)) throw ArgumentError("lr_milestones must be strictly increasing in (0, 1)");
    prev = m;
  }
  if (!(grad_clip_norm > 0)) throw ArgumentError("grad_clip_norm must be positive");
  if (trials == 0) throw ArgumentError("trials must be positive");
  gen.validate();
  backbone.validate();
  decoder.validate();
  head.validate();
  if (decoder.width != backbone.feature_width) throw ArgumentError("decoder width must equal the backbone width");
  if (gen.points < backbone.stage_point_counts[0]) throw ArgumentError("gen.points below the first stage point count");
  if (sampling.candidates == 0 || sampling.candidates > backbone.up_point_counts[1]) {
    throw ArgumentError("sampling.candidates must lie in [1, backbone.up_points[1]]");
  }
  if (sampling.positives_per_box == 0) throw ArgumentError("sampling.positives_per_box must be positive");
  if (!(sampling.nms_radius > 0)) throw ArgumentError("sampling.nms_radius must be positive");
  if (!(loss.assign_radius > 0)) throw ArgumentError("loss.assign_radius must be positive");
  if (eval.iou_thresholds.empty()) throw ArgumentError("eval.iou_thresholds must be nonempty");
  for (double t : eval.iou_thresholds) {
    if (!(t > 0 && t <= 1)) throw ArgumentError("eval.iou_thresholds must lie in (0, 1]");
  }
  if (!(eval.nms_iou >= 0 && eval.nms_iou <= 1)) throw ArgumentError("eval.nms_iou must lie in [0, 1]");
}

void RunConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, trim(value)); }

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const Field& f : fields()) out.push_back(f.key);
    return out;
  }();
  return k;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const Field& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
  return out;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg = desk();
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ArgumentError("config line " + std::to_string(line_no) + ": expected key = value");
    try {
      cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw ArgumentError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  cfg.finalize();
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

RunConfig RunConfig::desk() {
  RunConfig cfg;
  cfg.finalize();
  return cfg;
}

}  // namespace gf3d
