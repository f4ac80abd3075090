#include <doctest.h>

#include <cmath>
#include <random>

#include "gf3d/decoder/decoder.h"
#include "gf3d/errors.h"
#include "support/gradcheck.h"
#include "support/op_cases.h"
#include "support/toy.h"

using namespace gf3d;

namespace {

DecoderConfig toy_decoder(std::size_t width, std::size_t heads, std::size_t layers) {
  DecoderConfig d;
  d.width = width;
  d.heads = heads;
  d.layers = layers;
  return d;
}

void set_identity(Linear& l) {
  const std::size_t n = l.in();
  l.zero();
  for (std::size_t i = 0; i < n; ++i) l.weight->value.mutable_data()[i * n + i] = 1.0;
}

Tensor rows_of(const Tensor& t, const std::vector<std::size_t>& order) {
  std::vector<double> d;
  for (std::size_t r : order)
    for (std::size_t c = 0; c < t.cols(); ++c) d.push_back(t.at(r, c));
  return Tensor({order.size(), t.cols()}, d);
}

}  // namespace

TEST_CASE("attention against a dense reference") {
  Rng rng(1);
  ParameterStore store;
  auto p = AttentionParams::create(store, "a", 2, 1, "g", rng);
  set_identity(p.query);
  set_identity(p.key);
  set_identity(p.value);
  set_identity(p.out);
  const Tensor q = Tensor::matrix({{1, 0.5}, {-0.3, 2}});
  const Tensor e = Tensor::matrix({{0.2, -1}, {1.5, 0.7}});
  Graph g(false);
  auto r = attention(g, g.constant(q), g.constant(e), p, true);
  for (std::size_t i = 0; i < 2; ++i) {
    double l0 = (q.at(i, 0) * e.at(0, 0) + q.at(i, 1) * e.at(0, 1)) / std::sqrt(2.0);
    double l1 = (q.at(i, 0) * e.at(1, 0) + q.at(i, 1) * e.at(1, 1)) / std::sqrt(2.0);
    const double w0 = 1 / (1 + std::exp(l1 - l0));
    CHECK(r.weights[0].at(i, 0) == doctest::Approx(w0).epsilon(1e-12));
    for (std::size_t c = 0; c < 2; ++c)
      CHECK(r.output.value().at(i, c) == doctest::Approx(w0 * e.at(0, c) + (1 - w0) * e.at(1, c)).epsilon(1e-12));
  }

  // One element: the output ignores the logits.
  ParameterStore s2;
  auto p2 = AttentionParams::create(s2, "b", 4, 2, "g", rng);
  const Tensor one = Tensor::matrix({{0.1, 0.2, -0.3, 0.4}});
  std::mt19937_64 r3(3), r4(4);
  auto a = attention(g, g.constant(testing::random_matrix(r3, 3, 4)), g.constant(one), p2).output.value();
  auto b = attention(g, g.constant(testing::random_matrix(r4, 3, 4)), g.constant(one), p2).output.value();
  CHECK(a == b);

  // Identical keys split the weight evenly.
  auto w = attention(g, g.constant(one), g.constant(Tensor::matrix({{1, 1, 1, 1}, {1, 1, 1, 1}})), p2, true);
  for (const Tensor& h : w.weights) {
    CHECK(h.at(0, 0) == doctest::Approx(0.5));
    CHECK(h.at(0, 1) == doctest::Approx(0.5));
  }
  CHECK_THROWS_AS(attention(g, g.constant(one), g.constant(Tensor::matrix({{1, 2}})), p2), DimensionError);
  CHECK_THROWS_AS(AttentionParams::create(s2, "c", 5, 2, "g", rng), ArgumentError);
}

TEST_CASE("blocks") {
  Rng rng(2);
  ParameterStore store;
  const auto head = testing::toy_head();
  Decoder dec(toy_decoder(8, 2, 1), head, store, rng);
  std::mt19937_64 prng(5);
  auto in = testing::toy_inputs(prng, 3, 10, 8);
  Graph g(false);
  auto state = dec.initial_state(in.candidates(g), in.points(g));
  auto& p = dec.stages()[0];

  auto single = in;
  single.candidate_positions.resize(1);
  single.candidate_features = testing::random_matrix(prng, 1, 8);
  auto s1 = dec.initial_state(single.candidates(g), single.points(g));
  CHECK(self_attention_block(g, s1, p, EncodingMode::iterative_center_size).value().all_finite());

  Linear saved = p.self_attn.out;
  Tensor w = saved.weight->value, b = saved.bias->value;
  p.self_attn.out.zero();
  Graph gz(false);
  auto zstate = dec.initial_state(in.candidates(gz), in.points(gz));
  const Tensor zeroed = self_attention_block(gz, zstate, p, EncodingMode::iterative_center_size).value();
  const Tensor ln = p.self_norm(gz, zstate.objects).value();
  CHECK(zeroed == ln);
  p.self_attn.out.weight->value = w;
  p.self_attn.out.bias->value = b;

  // Equal point features: every candidate gets the same aggregate.
  auto flat = in;
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t c = 0; c < 8; ++c) flat.point_features.mutable_data()[r * 8 + c] = 0.1 * static_cast<double>(c);
  auto sf = dec.initial_state(flat.candidates(g), flat.points(g));
  sf.objects = g.constant(Tensor({3, 8}));
  p.cross_norm.gamma->value = Tensor::full({8}, 1.0);
  const Tensor agg = cross_attention_block(g, sf, p, EncodingMode::iterative_center_size, nullptr).value();
  for (std::size_t c = 0; c < 8; ++c) {
    CHECK(agg.at(0, c) == doctest::Approx(agg.at(1, c)).epsilon(1e-12));
    CHECK(agg.at(0, c) == doctest::Approx(agg.at(2, c)).epsilon(1e-12));
  }

  std::vector<Tensor> weights;
  cross_attention_block(g, state, p, EncodingMode::iterative_center_size, &weights);
  CHECK(weights.size() == 2);
  for (const Tensor& t : weights)
    for (std::size_t r = 0; r < t.rows(); ++r) {
      double s = 0;
      for (std::size_t c = 0; c < t.cols(); ++c) s += t.at(r, c);
      CHECK(std::abs(s - 1) <= 1e-9);
    }

  // FFN: zero projection leaves layer_norm(input).
  FeedForward ffn = p.ffn;
  CHECK(ffn(g, state.objects).value().shape() == Shape{3, 8});
  ffn.project.zero();
  Graph gf(false);
  Var x = gf.constant(state.objects.value());
  const Tensor fz = ffn(gf, x).value();
  const Tensor fl = ffn.norm(gf, x).value();
  CHECK(fz == fl);
}

TEST_CASE("ffn gradient") {
  Rng rng(3);
  ParameterStore store;
  auto ffn = FeedForward::create(store, "f", 4, 4, "g", rng);
  std::mt19937_64 prng(1);
  auto r = testing::grad_check([&](Graph& g, const std::vector<Var>& x) { return testing::probe(ffn(g, x[0])); },
                               {testing::random_matrix(prng, 3, 4)}, &store, 1e-6, 1e-5);
  CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("decoder stage outputs and permutations") {
  Rng rng(4);
  ParameterStore store;
  const auto head = testing::toy_head();
  Decoder dec(toy_decoder(8, 2, 3), head, store, rng);
  std::mt19937_64 prng(6);
  auto in = testing::toy_inputs(prng, 4, 12, 8);
  Graph g(false);
  auto preds = dec.run(g, in.candidates(g), in.points(g));
  CHECK(preds.size() == 3);
  for (const auto& p : preds) {
    CHECK(p.boxes.size() == 4);
    CHECK(p.head.class_logits.value().shape() == Shape{4, 2});
    CHECK(p.head.objectness.value().shape() == Shape{4, 1});
    for (const Box3D& b : p.boxes) CHECK_NOTHROW(validate_box(b));
  }

  const std::vector<std::size_t> perm{2, 0, 3, 1};
  auto pin = in;
  for (std::size_t i = 0; i < 4; ++i) pin.candidate_positions[i] = in.candidate_positions[perm[i]];
  pin.candidate_features = rows_of(in.candidate_features, perm);
  Graph g2(false);
  auto pp = dec.run(g2, pin.candidates(g2), pin.points(g2));
  for (std::size_t l = 0; l < 3; ++l) {
    const Tensor want = rows_of(preds[l].head.class_logits.value(), perm);
    const Tensor& got = pp[l].head.class_logits.value();
    for (std::size_t i = 0; i < want.numel(); ++i) CHECK(std::abs(want[i] - got[i]) < 1e-12);
  }

  std::vector<std::size_t> pts(12);
  for (std::size_t i = 0; i < 12; ++i) pts[i] = (i * 5) % 12;
  auto qin = in;
  for (std::size_t i = 0; i < 12; ++i) qin.point_positions[i] = in.point_positions[pts[i]];
  qin.point_features = rows_of(in.point_features, pts);
  Graph g3(false);
  auto qp = dec.run(g3, qin.candidates(g3), qin.points(g3));
  for (std::size_t l = 0; l < 3; ++l) {
    const Tensor& a = preds[l].head.center_offsets.value();
    const Tensor& b = qp[l].head.center_offsets.value();
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-9);
  }
}

TEST_CASE("encoding none ignores box estimates") {
  Rng rng(5);
  ParameterStore store;
  auto cfg = toy_decoder(8, 2, 2);
  cfg.encoding = EncodingMode::none;
  Decoder dec(cfg, testing::toy_head(), store, rng);
  for (auto& s : dec.stages()) {
    s.box_encoding.zero();
    s.point_encoding.zero();
  }
  std::mt19937_64 prng(2);
  auto in = testing::toy_inputs(prng, 3, 9, 8);
  Graph g(false);
  auto state = dec.initial_state(in.candidates(g), in.points(g));
  const Tensor a = dec.stage(g, state, 0, {}).first.head.size_logits.value();
  for (Box3D& b : state.boxes) {
    b.center = b.center + Vec3{3, -2, 1};
    b.size = {2, 3, 4};
  }
  const Tensor b = dec.stage(g, state, 0, {}).first.head.size_logits.value();
  CHECK(a == b);
}

TEST_CASE("zero layers uses the proposal head") {
  Rng rng(6);
  ParameterStore store;
  Decoder dec(toy_decoder(8, 2, 0), testing::toy_head(), store, rng);
  std::mt19937_64 prng(3);
  auto in = testing::toy_inputs(prng, 3, 9, 8);
  Graph g(false);
  auto preds = dec.run(g, in.candidates(g), in.points(g));
  CHECK(preds.size() == 1);
  const Tensor direct = dec.proposal_head().forward(g, g.constant(in.candidate_features)).class_logits.value();
  CHECK(preds[0].head.class_logits.value() == direct);
}

TEST_CASE("roi pooling") {
  Graph g(false);
  DecoderState s;
  s.point_positions = {{0, 0, 0}, {0.1, 0, 0}, {5, 5, 5}};
  s.points = g.constant(Tensor::matrix({{1}, {3}, {10}}));
  Box3D b;
  b.size = {1, 1, 1};
  s.boxes = {b};
  CHECK(roi_pool_aggregate(g, s, Aggregation::roi_max).value().item() == 3.0);
  CHECK(roi_pool_aggregate(g, s, Aggregation::roi_average).value().item() == 2.0);
  Box3D empty = b;
  empty.center = {4.4, 4.4, 4.4};
  empty.size = {0.1, 0.1, 0.1};
  s.boxes = {empty};
  CHECK(roi_pool_aggregate(g, s, Aggregation::roi_max).value().item() == 10.0);

  std::mt19937_64 rng(8);
  for (int t = 0; t < 20; ++t) {
    DecoderState r;
    r.point_positions = testing::random_points(rng, 30);
    r.points = g.constant(testing::random_matrix(rng, 30, 3));
    for (int i = 0; i < 4; ++i) r.boxes.push_back(testing::random_box(rng, t % 2));
    const Tensor got = roi_pool_aggregate(g, r, Aggregation::roi_max).value();
    for (std::size_t i = 0; i < 4; ++i) {
      std::vector<double> best(3, -1e300);
      bool any = false;
      for (std::size_t j = 0; j < 30; ++j) {
        if (!point_in_box(r.point_positions[j], r.boxes[i])) continue;
        any = true;
        for (std::size_t c = 0; c < 3; ++c) best[c] = std::max(best[c], r.points.value().at(j, c));
      }
      if (!any) continue;
      for (std::size_t c = 0; c < 3; ++c) CHECK(got.at(i, c) == best[c]);
    }
  }
}

TEST_CASE("vote aggregation") {
  Rng rng(7);
  ParameterStore store;
  Mlp2 mlp = Mlp2::create(store, "v", 3 + 2, 4, 2, "g", rng);
  Graph g(false);
  DecoderState s;
  s.point_positions = {{0, 0, 0}, {1, 0, 0}};
  s.points = g.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  Box3D b;
  s.boxes = {b};
  const std::vector<Vec3> votes{{0.1, 0, 0}, {2, 0, 0}};
  const Tensor one = vote_aggregate(g, s, votes, 0.3, mlp).value();
  const Tensor direct = mlp(g, g.constant(Tensor::matrix({{0, 0, 0, 1, 2}}))).value();
  CHECK(one == direct);
  const std::vector<Vec3> far{{4, 0, 0}, {3, 0, 0}};
  const Tensor fallback = vote_aggregate(g, s, far, 0.3, mlp).value();
  const Tensor nearest = mlp(g, g.constant(Tensor::matrix({{1 / 0.3, 0, 0, 3, 4}}))).value();
  for (std::size_t i = 0; i < 2; ++i) CHECK(fallback[i] == doctest::Approx(nearest[i]).epsilon(1e-12));
  CHECK_THROWS_AS(vote_aggregate(g, s, votes, 0.0, mlp), ArgumentError);
}

TEST_CASE("flops per stage") {
  // 4 + 2 + 2 + 2 + 2 + 8 at unit sizes.
  CHECK(flops_per_stage(1, 1, 1, 1) == 20);
  const auto c_sq = [](std::uint64_t m, std::uint64_t k, std::uint64_t c) { return 14 * k * c * c + 2 * m * c * c; };
  const auto lin = [](std::uint64_t m, std::uint64_t k, std::uint64_t c) { return 2 * k * k * c + 2 * k * m * c; };
  CHECK(flops_per_stage(64, 16, 32, 4) - lin(64, 16, 32) == 4 * (flops_per_stage(64, 16, 16, 4) - lin(64, 16, 16)));
  CHECK(flops_per_stage(64, 16, 32, 4) == c_sq(64, 16, 32) + lin(64, 16, 32));
  CHECK_THROWS_AS(flops_per_stage(0, 1, 1, 1), ArgumentError);
}

TEST_CASE("decoder loss gradient on a toy") {
  for (EncodingMode mode : {EncodingMode::fixed, EncodingMode::none}) {
    Rng rng(8);
    ParameterStore store;
    auto cfg = toy_decoder(8, 2, 2);
    cfg.encoding = mode;
    const auto head = testing::toy_head();
    Decoder dec(cfg, head, store, rng);
    std::mt19937_64 prng(9);
    auto in = testing::toy_inputs(prng, 2, 8, 8);
    Box3D gt;
    gt.center = in.candidate_positions[0] + Vec3{0.05, -0.02, 0.03};
    gt.size = {0.4, 0.3, 0.5};
    gt.class_id = 1;
    const std::vector<Box3D> gts{gt};
    LossWeights lw;
    auto r = testing::grad_check(
        [&](Graph& g, const std::vector<Var>&) {
          auto preds = dec.run(g, in.candidates(g), in.points(g));
          std::vector<Var> losses;
          for (const auto& p : preds)
            losses.push_back(stage_loss(g, p.head, assign_decoder_targets(p, gts, head, 0.3), head, lw).total);
          return total_loss(losses, g.constant(Tensor::scalar(0)));
        },
        {}, &store, 1e-6, 1e-5);
    CAPTURE(to_string(mode));
    CAPTURE(r.worst);
    CHECK(r.max_rel_error < 1e-3);
  }
}
