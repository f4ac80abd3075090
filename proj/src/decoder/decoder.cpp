#include "gf3d/decoder/decoder.h"

#include <cmath>
#include <limits>

#include "gf3d/errors.h"

namespace gf3d {

std::string to_string(EncodingMode m) {
  switch (m) {
    case EncodingMode::iterative_center_size: return "iterative_center_size";
    case EncodingMode::iterative_center: return "iterative_center";
    case EncodingMode::fixed: return "fixed";
    case EncodingMode::none: return "none";
  }
  return "?";
}

EncodingMode parse_encoding_mode(const std::string& s) {
  if (s == "iterative_center_size") return EncodingMode::iterative_center_size;
  if (s == "iterative_center") return EncodingMode::iterative_center;
  if (s == "fixed") return EncodingMode::fixed;
  if (s == "none") return EncodingMode::none;
  throw ArgumentError("unknown encoding mode: " + s);
}

std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::cross_attention: return "cross_attention";
    case Aggregation::roi_max: return "roi_max";
    case Aggregation::roi_average: return "roi_average";
    case Aggregation::vote: return "vote";
  }
  return "?";
}

Aggregation parse_aggregation(const std::string& s) {
  if (s == "cross_attention") return Aggregation::cross_attention;
  if (s == "roi_max") return Aggregation::roi_max;
  if (s == "roi_average") return Aggregation::roi_average;
  if (s == "vote") return Aggregation::vote;
  throw ArgumentError("unknown aggregation: " + s);
}

AttentionParams AttentionParams::create(ParameterStore& store, const std::string& name, std::size_t width,
                                        std::size_t heads, const std::string& group, Rng& rng) {
  if (heads == 0 || width % heads != 0) {
    throw ArgumentError("attention: width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                        " heads");
  }
  AttentionParams p;
  p.query = Linear::create(store, name + ".query", width, width, group, rng);
  p.key = Linear::create(store, name + ".key", width, width, group, rng);
  p.value = Linear::create(store, name + ".value", width, width, group, rng);
  p.out = Linear::create(store, name + ".out", width, width, group, rng);
  p.heads = heads;
  return p;
}

AttentionResult attention(Graph& g, Var queries, Var keys, Var values, const AttentionParams& p, bool keep_weights) {
  const std::size_t c = p.width();
  if (queries.cols() != c || keys.cols() != c || values.cols() != c) {
    throw DimensionError("attention: inputs " + shape_string(queries.shape()) + ", " + shape_string(keys.shape()) + ", " +
                         shape_string(values.shape()) + " do not match width " + std::to_string(c));
  }
  if (keys.rows() != values.rows()) throw DimensionError("attention: keys and values differ in element count");
  const std::size_t d = c / p.heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Var q = p.query(g, queries);
  Var k = p.key(g, keys);
  Var v = p.value(g, values);
  AttentionResult res;
  std::vector<Var> heads;
  heads.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    Var logits = scale(matmul_nt(slice_cols(q, h * d, d), slice_cols(k, h * d, d)), inv_sqrt_d);
    Var a = softmax(logits, 1);
    if (keep_weights) res.weights.push_back(a.value());
    heads.push_back(p.heads == 1 ? matmul(a, v) : matmul(a, slice_cols(v, h * d, d)));
  }
  Var merged = p.heads == 1 ? heads[0] : concat_cols(heads);
  res.output = p.out(g, merged);
  return res;
}

FeedForward FeedForward::create(ParameterStore& store, const std::string& name, std::size_t width,
                                std::size_t multiplier, const std::string& group, Rng& rng) {
  return FeedForward{Linear::create(store, name + ".expand", width, width * multiplier, group, rng),
                     Linear::create(store, name + ".project", width * multiplier, width, group, rng),
                     LayerNorm::create(store, name + ".norm", width, group)};
}

Var FeedForward::operator()(Graph& g, Var x) const { return norm(g, add(x, project(g, relu(expand(g, x))))); }

void DecoderConfig::validate() const {
  if (heads == 0 || width % heads != 0) throw ArgumentError("decoder: width must be divisible by heads");
  if (ffn_multiplier == 0) throw ArgumentError("decoder: ffn multiplier must be positive");
  if (!(vote_threshold > 0)) throw ArgumentError("decoder: vote threshold must be positive");
  if (!(default_size.x > 0 && default_size.y > 0 && default_size.z > 0)) {
    throw ArgumentError("decoder: default size must be positive");
  }
}

Tensor box_parameters(std::span<const Box3D> boxes) {
  std::vector<double> d;
  d.reserve(boxes.size() * 6);
  for (const Box3D& b : boxes) d.insert(d.end(), {b.center.x, b.center.y, b.center.z, b.size.x, b.size.y, b.size.z});
  return Tensor::unchecked({boxes.size(), 6}, std::move(d));
}

namespace {

Tensor point_parameters(const PointSet& pts) {
  std::vector<double> d;
  d.reserve(pts.size() * 3);
  for (const Vec3& p : pts) d.insert(d.end(), {p.x, p.y, p.z});
  return Tensor::unchecked({pts.size(), 3}, std::move(d));
}

std::optional<Var> box_encoding(Graph& g, const DecoderState& s, const DecoderStageParams& p, EncodingMode mode) {
  if (mode == EncodingMode::none) return std::nullopt;
  return p.box_encoding(g, g.constant(box_parameters(s.boxes)));
}

}  // namespace

Var self_attention_block(Graph& g, const DecoderState& state, const DecoderStageParams& p, EncodingMode mode) {
  Var o = state.objects;
  Var q = o;
  if (auto pos = box_encoding(g, state, p, mode)) q = add(o, *pos);
  Var a = attention(g, q, q, o, p.self_attn).output;
  return p.self_norm(g, add(o, a));
}

Var cross_attention_block(Graph& g, const DecoderState& state, const DecoderStageParams& p, EncodingMode mode,
                          std::vector<Tensor>* weights) {
  Var o = state.objects;
  Var q = o;
  Var k = state.points;
  if (auto pos = box_encoding(g, state, p, mode)) {
    q = add(o, *pos);
    k = add(state.points, p.point_encoding(g, g.constant(point_parameters(state.point_positions))));
  }
  AttentionResult r = attention(g, q, k, state.points, p.cross_attn, weights != nullptr);
  if (weights != nullptr) *weights = std::move(r.weights);
  return p.cross_norm(g, add(o, r.output));
}

Var roi_pool_aggregate(Graph& g, const DecoderState& state, Aggregation pooling) {
  (void)g;
  if (pooling != Aggregation::roi_max && pooling != Aggregation::roi_average) {
    throw ArgumentError("roi_pool_aggregate: pooling must be max or average");
  }
  const PointSet& pts = state.point_positions;
  std::vector<std::size_t> index;
  std::vector<std::size_t> offsets{0};
  for (const Box3D& b : state.boxes) {
    std::size_t nearest = 0;
    double nearest_d = std::numeric_limits<double>::infinity();
    const std::size_t before = index.size();
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (point_in_box(pts[j], b)) index.push_back(j);
      const double d = squared_distance(pts[j], b.center);
      if (d < nearest_d) {
        nearest_d = d;
        nearest = j;
      }
    }
    if (index.size() == before) index.push_back(nearest);
    offsets.push_back(index.size());
  }
  Var grouped = gather_rows(state.points, index);
  return pooling == Aggregation::roi_max ? segment_max(grouped, offsets) : segment_mean(grouped, offsets);
}

Var vote_aggregate(Graph& g, const DecoderState& state, std::span<const Vec3> vote_centers, double threshold,
                   const Mlp2& mlp) {
  if (!(threshold > 0)) throw ArgumentError("vote_aggregate: threshold must be positive");
  const PointSet& pts = state.point_positions;
  if (vote_centers.size() != pts.size()) throw DimensionError("vote_aggregate: one vote per point required");
  const double t2 = threshold * threshold;
  std::vector<std::size_t> index;
  std::vector<double> rel;
  std::vector<std::size_t> offsets{0};
  for (const Box3D& b : state.boxes) {
    std::size_t nearest = 0;
    double nearest_d = std::numeric_limits<double>::infinity();
    const std::size_t before = index.size();
    for (std::size_t j = 0; j < pts.size(); ++j) {
      const double d = squared_distance(vote_centers[j], b.center);
      if (d <= t2) index.push_back(j);
      if (d < nearest_d) {
        nearest_d = d;
        nearest = j;
      }
    }
    if (index.size() == before) index.push_back(nearest);
    for (std::size_t t = before; t < index.size(); ++t) {
      const Vec3 r = (pts[index[t]] - b.center) * (1.0 / threshold);
      rel.insert(rel.end(), {r.x, r.y, r.z});
    }
    offsets.push_back(index.size());
  }
  const Var parts[2] = {g.constant(Tensor::unchecked({index.size(), 3}, std::move(rel))), gather_rows(state.points, index)};
  return segment_max(mlp(g, concat_cols(parts)), offsets);
}

Decoder::Decoder(const DecoderConfig& cfg, const HeadConfig& head_cfg, ParameterStore& store, Rng& rng,
                 const std::string& group, const std::string& proposal_group)
    : cfg_(cfg), head_cfg_(head_cfg) {
  cfg_.validate();
  head_cfg_.validate();
  const std::size_t c = cfg_.width;
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string n = "decoder.stage" + std::to_string(l);
    DecoderStageParams s;
    s.self_attn = AttentionParams::create(store, n + ".self_attn", c, cfg_.heads, group, rng);
    s.self_norm = LayerNorm::create(store, n + ".self_norm", c, group);
    if (cfg_.aggregation == Aggregation::cross_attention) {
      s.cross_attn = AttentionParams::create(store, n + ".cross_attn", c, cfg_.heads, group, rng);
    }
    s.cross_norm = LayerNorm::create(store, n + ".cross_norm", c, group);
    s.ffn = FeedForward::create(store, n + ".ffn", c, cfg_.ffn_multiplier, group, rng);
    s.box_encoding = Linear::create(store, n + ".box_encoding", 6, c, group, rng);
    s.point_encoding = Linear::create(store, n + ".point_encoding", 3, c, group, rng);
    if (cfg_.aggregation == Aggregation::vote) s.vote_mlp = Mlp2::create(store, n + ".vote_mlp", c + 3, c, c, group, rng);
    s.head = DetectionHead::create(store, n + ".head", c, head_cfg_, group, rng);
    stages_.push_back(std::move(s));
  }
  if (cfg_.layers == 0) proposal_ = DetectionHead::create(store, "proposal.head", c, head_cfg_, proposal_group, rng);
}

DecoderState Decoder::initial_state(const CandidateSet& candidates, const PointFeatures& points) const {
  if (!candidates.features.graph || !points.has_features()) throw ArgumentError("decoder: candidates and points need features");
  if (candidates.features.cols() != cfg_.width || points.features.cols() != cfg_.width) {
    throw DimensionError("decoder: feature width does not match model width " + std::to_string(cfg_.width));
  }
  DecoderState s;
  s.objects = candidates.features;
  s.points = points.features;
  s.point_positions = points.positions;
  s.base_positions = candidates.positions;
  s.boxes.reserve(candidates.size());
  for (const Vec3& p : candidates.positions) {
    Box3D b;
    b.center = p;
    b.size = cfg_.default_size;
    s.boxes.push_back(b);
  }
  return s;
}

std::pair<StagePrediction, DecoderState> Decoder::stage(Graph& g, const DecoderState& state, std::size_t index,
                                                        std::span<const Vec3> vote_centers) const {
  const DecoderStageParams& p = stages_.at(index);
  DecoderState cur = state;
  cur.objects = self_attention_block(g, cur, p, cfg_.encoding);
  StagePrediction pred;
  pred.stage = index;
  switch (cfg_.aggregation) {
    case Aggregation::cross_attention:
      cur.objects = cross_attention_block(g, cur, p, cfg_.encoding, cfg_.record_attention ? &pred.attention : nullptr);
      break;
    case Aggregation::roi_max:
    case Aggregation::roi_average:
      cur.objects = p.cross_norm(g, add(cur.objects, roi_pool_aggregate(g, cur, cfg_.aggregation)));
      break;
    case Aggregation::vote:
      cur.objects =
          p.cross_norm(g, add(cur.objects, vote_aggregate(g, cur, vote_centers, cfg_.vote_threshold, p.vote_mlp)));
      break;
  }
  cur.objects = p.ffn(g, cur.objects);
  pred.head = p.head.forward(g, cur.objects);
  pred.boxes = decode_boxes(pred.head, cur.base_positions, head_cfg_);
  pred.base_positions = cur.base_positions;
  pred.input_boxes = state.boxes;

  DecoderState next = cur;
  next.stage = state.stage + 1;
  switch (cfg_.encoding) {
    case EncodingMode::iterative_center_size:
      for (std::size_t i = 0; i < next.boxes.size(); ++i) {
        next.boxes[i].center = pred.boxes[i].center;
        next.boxes[i].size = pred.boxes[i].size;
      }
      break;
    case EncodingMode::iterative_center:
      for (std::size_t i = 0; i < next.boxes.size(); ++i) next.boxes[i].center = pred.boxes[i].center;
      break;
    case EncodingMode::fixed:
    case EncodingMode::none:
      break;
  }
  return {std::move(pred), std::move(next)};
}

std::vector<StagePrediction> Decoder::run(Graph& g, const CandidateSet& candidates, const PointFeatures& points,
                                          std::span<const Vec3> vote_centers,
                                          std::span<const std::vector<Box3D>> held_boxes) const {
  DecoderState state = initial_state(candidates, points);
  std::vector<StagePrediction> out;
  if (cfg_.layers == 0) {
    StagePrediction pred;
    pred.head = proposal_.forward(g, state.objects);
    pred.boxes = decode_boxes(pred.head, state.base_positions, head_cfg_);
    pred.base_positions = state.base_positions;
    out.push_back(std::move(pred));
    return out;
  }
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    if (l < held_boxes.size() && !held_boxes[l].empty()) {
      if (held_boxes[l].size() != state.boxes.size()) throw DimensionError("decoder: held boxes do not match candidates");
      state.boxes = held_boxes[l];
    }
    auto [pred, next] = stage(g, state, l, vote_centers);
    out.push_back(std::move(pred));
    state = std::move(next);
  }
  return out;
}

std::uint64_t flops_per_stage(std::uint64_t m, std::uint64_t k, std::uint64_t c, std::uint64_t h) {
  if (m == 0 || k == 0 || c == 0 || h == 0) throw ArgumentError("flops_per_stage: arguments must be positive");
  const std::uint64_t self_att = 4 * k * c * c + 2 * k * k * c;
  const std::uint64_t cross_att = 2 * k * c * c + 2 * m * c * c + 2 * k * m * c;
  const std::uint64_t ffn = 8 * k * c * c;
  return self_att + cross_att + ffn;
}

}  // namespace gf3d
