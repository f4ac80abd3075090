#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gf3d/backbone/backbone.h"
#include "gf3d/candidates/candidates.h"
#include "gf3d/diffcore/nn.h"
#include "gf3d/heads/heads.h"

namespace gf3d {

// Which box parameterization feeds the spatial encodings.
//   iterative_center_size: (x,y,z,l,h,w) of the previous stage's boxes
//   iterative_center:      previous centers, sizes pinned to the default
//   fixed:                 the initial candidate boxes at every stage
//   none:                  no spatial encodings at all
enum class EncodingMode { iterative_center_size, iterative_center, fixed, none };

// How a stage gathers point information for its objects.
enum class Aggregation { cross_attention, roi_max, roi_average, vote };

std::string to_string(EncodingMode m);
EncodingMode parse_encoding_mode(const std::string& s);
std::string to_string(Aggregation a);
Aggregation parse_aggregation(const std::string& s);

// Multi-head attention projections. The per-head maps Q_h, U_h, V_h are the
// column blocks of q/k/v; the per-head output maps W_h are the row blocks of
// `out`, so concatenating heads and applying `out` sums W_h over heads.
struct AttentionParams {
  Linear query, key, value, out;
  std::size_t heads = 1;

  static AttentionParams create(ParameterStore& store, const std::string& name, std::size_t width,
                                std::size_t heads, const std::string& group, Rng& rng);
  std::size_t width() const { return query.in(); }
};

struct AttentionResult {
  Var output;
  std::vector<Tensor> weights;  // per head, Kq x Ke; filled when requested
};

// Softmax over elements of (Q_h q)^T (U_h k) / sqrt(C/H), weighted sum of
// V_h v, heads combined through the output map.
AttentionResult attention(Graph& g, Var queries, Var keys, Var values, const AttentionParams& p,
                          bool keep_weights = false);
inline AttentionResult attention(Graph& g, Var queries, Var elements, const AttentionParams& p,
                                 bool keep_weights = false) {
  return attention(g, queries, elements, elements, p, keep_weights);
}

struct FeedForward {
  Linear expand;
  Linear project;
  LayerNorm norm;

  static FeedForward create(ParameterStore& store, const std::string& name, std::size_t width, std::size_t multiplier,
                            const std::string& group, Rng& rng);
  // LN(x + W2 relu(W1 x))
  Var operator()(Graph& g, Var x) const;
};

struct DecoderConfig {
  std::size_t layers = 3;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t ffn_multiplier = 4;
  EncodingMode encoding = EncodingMode::iterative_center_size;
  Aggregation aggregation = Aggregation::cross_attention;
  double vote_threshold = 0.3;
  // Size used for the boxes of the first stage (no prediction exists yet).
  Vec3 default_size{0.3, 0.3, 0.3};
  bool record_attention = false;

  void validate() const;
};

struct DecoderState {
  std::size_t stage = 0;
  Var objects;                 // K x C
  std::vector<Box3D> boxes;    // current estimates, feed the spatial encoding
  Var points;                  // M x C, constant across stages
  PointSet point_positions;
  PointSet base_positions;     // candidate positions; box centers are predicted relative to them
};

struct DecoderStageParams {
  AttentionParams self_attn;
  LayerNorm self_norm;
  AttentionParams cross_attn;
  LayerNorm cross_norm;
  FeedForward ffn;
  Linear box_encoding;    // (x,y,z,l,h,w) -> C
  Linear point_encoding;  // (x,y,z) -> C
  Mlp2 vote_mlp;          // vote aggregation only
  DetectionHead head;
};

// Box parameterization vectors (K x 6) fed to the box encoding.
Tensor box_parameters(std::span<const Box3D> boxes);

Var self_attention_block(Graph& g, const DecoderState& state, const DecoderStageParams& p, EncodingMode mode);
// Returns the updated object features; per-head weights go to `weights` when non-null.
Var cross_attention_block(Graph& g, const DecoderState& state, const DecoderStageParams& p, EncodingMode mode,
                          std::vector<Tensor>* weights);

// Pools the features of points inside each object's current box. An empty box
// takes the feature of the point nearest its center.
Var roi_pool_aggregate(Graph& g, const DecoderState& state, Aggregation pooling);
// Groups points whose voted center lies within `threshold` of an object's
// current center; 2-layer perceptron then max-pool. An empty group takes the
// point whose vote is nearest.
Var vote_aggregate(Graph& g, const DecoderState& state, std::span<const Vec3> vote_centers, double threshold,
                   const Mlp2& mlp);

class Decoder {
 public:
  Decoder(const DecoderConfig& cfg, const HeadConfig& head_cfg, ParameterStore& store, Rng& rng,
          const std::string& group = "decoder", const std::string& proposal_group = "backbone");

  DecoderState initial_state(const CandidateSet& candidates, const PointFeatures& points) const;

  // One stage: self-attention, point aggregation, FFN, head. Returns the
  // prediction and the state handed to the next stage.
  std::pair<StagePrediction, DecoderState> stage(Graph& g, const DecoderState& state, std::size_t index,
                                                 std::span<const Vec3> vote_centers) const;

  // `layers` predictions, or a single proposal-head prediction when layers == 0.
  // Non-empty entries of `held_boxes` replace the box estimates entering that
  // stage (replaying a recorded pass; the box feedback carries no gradient).
  std::vector<StagePrediction> run(Graph& g, const CandidateSet& candidates, const PointFeatures& points,
                                   std::span<const Vec3> vote_centers = {},
                                   std::span<const std::vector<Box3D>> held_boxes = {}) const;

  const DecoderConfig& config() const { return cfg_; }
  const HeadConfig& head_config() const { return head_cfg_; }
  std::vector<DecoderStageParams>& stages() { return stages_; }
  DetectionHead& proposal_head() { return proposal_; }

 private:
  DecoderConfig cfg_;
  HeadConfig head_cfg_;
  std::vector<DecoderStageParams> stages_;
  DetectionHead proposal_;
};

// Multiply-add count of one decoder stage:
// self 4KC^2 + 2K^2C, cross 2KC^2 + 2MC^2 + 2KMC, FFN 8KC^2.
std::uint64_t flops_per_stage(std::uint64_t m, std::uint64_t k, std::uint64_t c, std::uint64_t h);

}  // namespace gf3d
