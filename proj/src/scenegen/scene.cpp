#include "gf3d/scenegen/scene.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "gf3d/errors.h"
#include "gf3d/parallel.h"

namespace gf3d {

namespace {

constexpr std::size_t kMinBoxPoints = 8;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// The five sampled faces (no bottom) as (axis fixed, sign, area).
struct Face {
  int axis;
  double sign;
  double area;
};

std::array<Face, 5> faces_of(const Vec3& s) {
  return {{{0, 1, s.y * s.z}, {0, -1, s.y * s.z}, {2, 1, s.x * s.y}, {2, -1, s.x * s.y}, {1, 1, s.x * s.z}}};
}

Vec3 sample_surface(const Box3D& b, Rng& rng) {
  const auto faces = faces_of(b.size);
  double total = 0;
  for (const Face& f : faces) total += f.area;
  double u = uniform(rng, 0.0, total);
  std::size_t k = 0;
  while (k + 1 < faces.size() && u >= faces[k].area) {
    u -= faces[k].area;
    ++k;
  }
  const Face& f = faces[k];
  Vec3 local{uniform(rng, -0.5, 0.5) * b.size.x, uniform(rng, -0.5, 0.5) * b.size.y,
             uniform(rng, -0.5, 0.5) * b.size.z};
  local[static_cast<std::size_t>(f.axis)] = 0.5 * f.sign * b.size[static_cast<std::size_t>(f.axis)];
  return box_to_world(b, local);
}

double surface_area(const Vec3& s) {
  double a = 0;
  for (const Face& f : faces_of(s)) a += f.area;
  return a;
}

// Half extents of the axis-aligned footprint of a yawed box.
Vec3 footprint_half(const Box3D& b) {
  const double c = std::abs(std::cos(b.yaw)), s = std::abs(std::sin(b.yaw));
  return {0.5 * (b.size.x * c + b.size.z * s), 0.5 * b.size.y, 0.5 * (b.size.x * s + b.size.z * c)};
}

// ---- binary io ----

class Writer {
 public:
  template <class T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    bytes_.append(buf, sizeof(T));
  }
  void raw(const char* p, std::size_t n) { bytes_.append(p, n); }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}
  template <class T>
  T get(const char* what) {
    if (bytes_.size() - pos_ < sizeof(T)) throw FormatError(std::string("truncated scene file: missing ") + what, pos_);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::uint64_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const char* peek() const { return bytes_.data() + pos_; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  std::string bytes_;
  std::uint64_t pos_ = 0;
};

constexpr char kMagic[4] = {'G', 'F', '3', 'D'};
constexpr std::uint16_t kVersion = 1;

}  // namespace

std::vector<Category> GeneratorConfig::default_categories() {
  return {{"table", {0.40, 0.26, 0.40}, 0.1},
          {"chair", {0.26, 0.34, 0.26}, 0.1},
          {"cabinet", {0.46, 0.36, 0.22}, 0.1},
          {"crate", {0.20, 0.20, 0.20}, 0.1}};
}

void GeneratorConfig::validate() const {
  if (categories.empty()) throw ArgumentError("generator: need at least one category");
  for (const Category& c : categories) {
    if (!(c.mean_size.x > 0 && c.mean_size.y > 0 && c.mean_size.z > 0)) {
      throw ArgumentError("generator: category '" + c.name + "' needs a positive size");
    }
    if (!(c.spread >= 0 && c.spread < 1)) throw ArgumentError("generator: spread must lie in [0, 1)");
  }
  if (!(size_scale > 0)) throw ArgumentError("generator: size_scale must be positive");
  if (!(clutter >= 0 && clutter <= 1)) throw ArgumentError("generator: clutter must lie in [0, 1]");
  if (!(occlusion >= 0 && occlusion < 1)) throw ArgumentError("generator: occlusion must lie in [0, 1)");
  if (min_boxes > max_boxes) throw ArgumentError("generator: min_boxes exceeds max_boxes");
  if (points < kMinBoxPoints * std::max<std::size_t>(max_boxes, 1) * 2) {
    throw ArgumentError("generator: too few points for the box count");
  }
  for (std::size_t a = 0; a < 3; ++a) {
    if (!(bounds_max[a] > bounds_min[a])) throw ArgumentError("generator: empty scene bounds");
  }
  if (max_attempts == 0) throw ArgumentError("generator: max_attempts must be positive");
}

Scene generate_scene(const GeneratorConfig& cfg, std::uint64_t scene_seed, const std::string& id) {
  cfg.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(scene_seed), static_cast<std::uint32_t>(scene_seed >> 32)};
  Rng rng(seq);
  Scene scene;
  scene.id = id.empty() ? "scene_" + std::to_string(scene_seed) : id;
  const IouMode mode = cfg.yaw ? IouMode::oriented : IouMode::axis_aligned;

  const std::size_t count =
      std::uniform_int_distribution<std::size_t>(cfg.min_boxes, cfg.max_boxes)(rng);
  for (std::size_t n = 0; n < count; ++n) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
      Box3D b;
      b.class_id = static_cast<int>(std::uniform_int_distribution<std::size_t>(0, cfg.categories.size() - 1)(rng));
      const Category& cat = cfg.categories[static_cast<std::size_t>(b.class_id)];
      for (std::size_t a = 0; a < 3; ++a) b.size[a] = cat.mean_size[a] * cfg.size_scale * (1.0 + uniform(rng, -cat.spread, cat.spread));
      b.yaw = cfg.yaw ? uniform(rng, -std::numbers::pi, std::numbers::pi) : 0.0;
      const Vec3 half = footprint_half(b);
      if (2 * half.x > cfg.bounds_max.x - cfg.bounds_min.x || 2 * half.z > cfg.bounds_max.z - cfg.bounds_min.z ||
          2 * half.y > cfg.bounds_max.y - cfg.bounds_min.y) {
        continue;
      }
      b.center = {uniform(rng, cfg.bounds_min.x + half.x, cfg.bounds_max.x - half.x), cfg.bounds_min.y + half.y,
                  uniform(rng, cfg.bounds_min.z + half.z, cfg.bounds_max.z - half.z)};
      placed = std::all_of(scene.boxes.begin(), scene.boxes.end(),
                           [&](const Box3D& o) { return iou_3d(b, o, mode) < cfg.max_pair_iou; });
      if (placed) scene.boxes.push_back(b);
    }
    if (!placed) {
      throw GenerationError("could not place box " + std::to_string(n + 1) + " of " + std::to_string(count) +
                            " for scene seed " + std::to_string(scene_seed) + " (generator seed " +
                            std::to_string(cfg.seed) + ")");
    }
  }

  // Surface budget shared by area, each draw kept with probability 1 - occlusion.
  const auto budget = static_cast<std::size_t>(std::llround(static_cast<double>(cfg.points) * (1.0 - cfg.clutter)));
  double total_area = 0;
  for (const Box3D& b : scene.boxes) total_area += surface_area(b.size);
  std::bernoulli_distribution keep(1.0 - cfg.occlusion);
  for (const Box3D& b : scene.boxes) {
    const auto draws = static_cast<std::size_t>(static_cast<double>(budget) * surface_area(b.size) / total_area);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < draws; ++i) {
      const Vec3 p = sample_surface(b, rng);
      if (keep(rng)) {
        scene.points.push_back(p);
        ++kept;
      }
    }
    for (; kept < kMinBoxPoints; ++kept) scene.points.push_back(sample_surface(b, rng));
  }
  if (scene.points.size() > cfg.points) {
    throw GenerationError("surface points exceed the point budget for scene seed " + std::to_string(scene_seed));
  }
  while (scene.points.size() < cfg.points) {
    scene.points.push_back({uniform(rng, cfg.bounds_min.x, cfg.bounds_max.x), uniform(rng, cfg.bounds_min.y, cfg.bounds_max.y),
                            uniform(rng, cfg.bounds_min.z, cfg.bounds_max.z)});
  }
  // Fisher-Yates with our own draws; std::shuffle is implementation-specific.
  for (std::size_t i = scene.points.size(); i > 1; --i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    std::swap(scene.points[i - 1], scene.points[j]);
  }
  if (cfg.height_feature) {
    std::vector<double> f;
    f.reserve(scene.points.size());
    for (const Vec3& p : scene.points) f.push_back(p.y - cfg.bounds_min.y);
    scene.features = Tensor::unchecked({scene.points.size(), 1}, std::move(f));
  }
  return scene;
}

void check_scene(const Scene& scene, const GeneratorConfig& cfg) {
  if (!scene.features.empty() && scene.features.rows() != scene.points.size()) {
    throw ArgumentError("scene " + scene.id + ": feature rows do not match the point count");
  }
  for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
    const Box3D& b = scene.boxes[i];
    validate_box(b);
    const Vec3 half = footprint_half(b);
    for (std::size_t a = 0; a < 3; ++a) {
      if (b.center[a] + half[a] < cfg.bounds_min[a] || b.center[a] - half[a] > cfg.bounds_max[a]) {
        throw ArgumentError("scene " + scene.id + ": box " + std::to_string(i) + " lies outside the bounds");
      }
    }
    const auto inside = std::count_if(scene.points.begin(), scene.points.end(),
                                      [&](const Vec3& p) { return point_in_box(p, b, 1e-9); });
    if (static_cast<std::size_t>(inside) < kMinBoxPoints) {
      throw ArgumentError("scene " + scene.id + ": box " + std::to_string(i) + " holds only " + std::to_string(inside) +
                          " points");
    }
  }
}

DatasetSplit generate_split(const GeneratorConfig& cfg, std::size_t n_train, std::size_t n_val, std::size_t threads) {
  if (n_train > kValSeedBase) throw ArgumentError("generate_split: at most 1000000 training scenes");
  DatasetSplit out;
  auto make_ids = [&](const std::string& split, std::size_t n, std::uint64_t base) {
    for (std::size_t i = 0; i < n; ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%s_%06zu", split.c_str(), i);
      out.manifest.push_back({split, buf, base + i});
    }
  };
  make_ids("train", n_train, 0);
  make_ids("val", n_val, kValSeedBase);
  std::vector<Scene> scenes(out.manifest.size());
  parallel_for(scenes.size(), threads, [&](std::size_t i) {
    scenes[i] = generate_scene(cfg, out.manifest[i].seed, out.manifest[i].id);
  });
  out.train.assign(std::make_move_iterator(scenes.begin()), std::make_move_iterator(scenes.begin() + n_train));
  out.val.assign(std::make_move_iterator(scenes.begin() + n_train), std::make_move_iterator(scenes.end()));
  return out;
}

void write_split(const std::filesystem::path& dir, const DatasetSplit& split) {
  std::filesystem::create_directories(dir);
  std::ofstream m(dir / "manifest.txt", std::ios::binary | std::ios::trunc);
  if (!m) throw std::runtime_error("cannot write manifest in " + dir.string());
  m << "# split id seed\n";
  for (const SplitEntry& e : split.manifest) m << e.split << ' ' << e.id << ' ' << e.seed << '\n';
  for (const auto* list : {&split.train, &split.val}) {
    for (const Scene& s : *list) write_scene(dir / (s.id + ".scene"), s);
  }
}

std::vector<SplitEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path.string());
  std::vector<SplitEntry> out;
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    const std::uint64_t start = offset;
    offset += line.size() + 1;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    SplitEntry e;
    if (!(ls >> e.split >> e.id >> e.seed) || (e.split != "train" && e.split != "val")) {
      throw FormatError("malformed manifest line", start);
    }
    out.push_back(e);
  }
  return out;
}

DatasetSplit read_split(const std::filesystem::path& dir) {
  DatasetSplit out;
  out.manifest = read_manifest(dir / "manifest.txt");
  for (const SplitEntry& e : out.manifest) {
    Scene s = read_scene(dir / (e.id + ".scene"));
    (e.split == "train" ? out.train : out.val).push_back(std::move(s));
  }
  return out;
}

AugmentDraw draw_augmentation(Rng& rng) {
  AugmentDraw d;
  d.flip = std::bernoulli_distribution(0.5)(rng);
  const double limit = 5.0 * std::numbers::pi / 180.0;
  d.rotation = uniform(rng, -limit, limit);
  d.scale = uniform(rng, 0.9, 1.1);
  return d;
}

Scene augment(const Scene& scene, const AugmentDraw& draw, bool keep_yaw) {
  const double c = std::cos(draw.rotation), s = std::sin(draw.rotation);
  auto move = [&](Vec3 p) {
    if (draw.flip) p.x = -p.x;
    return Vec3{(p.x * c - p.z * s) * draw.scale, p.y * draw.scale, (p.x * s + p.z * c) * draw.scale};
  };
  Scene out = scene;
  for (Vec3& p : out.points) p = move(p);
  for (Box3D& b : out.boxes) {
    b.center = move(b.center);
    b.size = b.size * draw.scale;
    b.yaw = (draw.flip ? -b.yaw : b.yaw) + draw.rotation;
    if (!keep_yaw) {
      const Vec3 half = footprint_half(b);
      b.size = half * 2.0;
      b.yaw = 0.0;
    }
  }
  if (!out.features.empty() && draw.scale != 1.0) {
    // Height channels scale with the cloud.
    std::vector<double> f = out.features.values();
    for (double& v : f) v *= draw.scale;
    out.features = Tensor::unchecked(out.features.shape(), std::move(f));
  }
  return out;
}

Scene augment(const Scene& scene, Rng& rng, bool keep_yaw) { return augment(scene, draw_augmentation(rng), keep_yaw); }

void write_scene(const std::filesystem::path& path, const Scene& scene) {
  const std::size_t w = scene.feature_width();
  if (w != 0 && scene.features.rows() != scene.points.size()) {
    throw DimensionError("write_scene: feature rows do not match the point count");
  }
  Writer out;
  out.raw(kMagic, 4);
  out.put<std::uint16_t>(kVersion);
  out.put<std::uint64_t>(scene.points.size());
  out.put<std::uint32_t>(static_cast<std::uint32_t>(w));
  for (const Vec3& p : scene.points) {
    out.put(p.x);
    out.put(p.y);
    out.put(p.z);
  }
  for (double v : scene.features.values()) out.put(v);
  out.put<std::uint64_t>(scene.boxes.size());
  for (const Box3D& b : scene.boxes) {
    for (double v : {b.center.x, b.center.y, b.center.z, b.size.x, b.size.y, b.size.z, b.yaw}) out.put(v);
    out.put<std::uint16_t>(static_cast<std::uint16_t>(b.class_id));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write scene file: " + path.string());
  f.write(out.bytes().data(), static_cast<std::streamsize>(out.bytes().size()));
}

Scene read_scene(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open scene file: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  Reader in(ss.str());
  if (in.remaining() < 4 || std::memcmp(in.peek(), kMagic, 4) != 0) throw FormatError("bad scene magic", 0);
  in.skip(4);
  const std::uint64_t version_at = in.pos();
  if (in.get<std::uint16_t>("version") != kVersion) throw FormatError("unsupported scene version", version_at);
  Scene scene;
  scene.id = path.stem().string();
  const auto n = in.get<std::uint64_t>("point count");
  const auto w = in.get<std::uint32_t>("feature width");
  if (n > in.remaining() / (8 * (3 + static_cast<std::uint64_t>(w)))) {
    throw FormatError("point block larger than the file", in.pos());
  }
  scene.points.resize(n);
  for (Vec3& p : scene.points) {
    p.x = in.get<double>("point");
    p.y = in.get<double>("point");
    p.z = in.get<double>("point");
  }
  if (w > 0) {
    std::vector<double> feat(n * w);
    for (double& v : feat) v = in.get<double>("feature");
    scene.features = Tensor::unchecked({n, w}, std::move(feat));
  }
  const auto b = in.get<std::uint64_t>("box count");
  if (b > in.remaining() / (7 * 8 + 2)) throw FormatError("box block larger than the file", in.pos());
  scene.boxes.resize(b);
  for (Box3D& box : scene.boxes) {
    const std::uint64_t at = in.pos();
    double v[7];
    for (double& x : v) x = in.get<double>("box");
    box.center = {v[0], v[1], v[2]};
    box.size = {v[3], v[4], v[5]};
    box.yaw = v[6];
    box.class_id = in.get<std::uint16_t>("box class");
    if (!(box.size.x > 0 && box.size.y > 0 && box.size.z > 0)) throw FormatError("box with non-positive size", at);
  }
  if (in.remaining() != 0) throw FormatError("trailing bytes after box block", in.pos());
  return scene;
}

}  // namespace gf3d
