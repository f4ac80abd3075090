#pragma once

#include <random>
#include <vector>

#include "gf3d/decoder/decoder.h"
#include "support/oracles.h"

namespace gf3d::testing {

inline HeadConfig toy_head(std::size_t classes = 2) {
  HeadConfig h;
  h.num_classes = classes;
  for (std::size_t c = 0; c < classes; ++c) {
    const double s = 0.3 + 0.2 * static_cast<double>(c);
    h.size_templates.push_back({s, s * 0.8, s * 1.1});
  }
  return h;
}

inline Tensor random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> d(rows * cols);
  for (double& v : d) v = u(rng);
  return Tensor({rows, cols}, std::move(d));
}

// Candidate and point inputs for a decoder of width c.
struct ToyInputs {
  PointSet candidate_positions;
  Tensor candidate_features;
  PointSet point_positions;
  Tensor point_features;

  CandidateSet candidates(Graph& g) const {
    CandidateSet cs;
    for (std::size_t i = 0; i < candidate_positions.size(); ++i) cs.indices.push_back(i);
    cs.positions = candidate_positions;
    cs.features = g.constant(candidate_features);
    cs.objectness_scores.assign(candidate_positions.size(), 1.0);
    return cs;
  }
  PointFeatures points(Graph& g) const {
    PointFeatures pf;
    pf.positions = point_positions;
    pf.features = g.constant(point_features);
    return pf;
  }
};

inline ToyInputs toy_inputs(std::mt19937_64& rng, std::size_t k, std::size_t m, std::size_t c) {
  ToyInputs t;
  t.point_positions = random_points(rng, m);
  t.point_features = random_matrix(rng, m, c);
  for (std::size_t i = 0; i < k; ++i) t.candidate_positions.push_back(t.point_positions[i]);
  t.candidate_features = t.point_features.rows() >= k ? random_matrix(rng, k, c) : Tensor();
  return t;
}

}  // namespace gf3d::testing
