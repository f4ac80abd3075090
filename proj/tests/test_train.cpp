#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "gf3d/diffcore/checkpoint.h"
#include "gf3d/errors.h"
#include "gf3d/train/config.h"
#include "gf3d/train/model.h"
#include "gf3d/train/optim.h"
#include "gf3d/train/trainer.h"
#include "support/toy_run.h"

using namespace gf3d;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / "gf3d_tests" / name;
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("adamw") {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor::vector({1.0, -2.0}), "g");
  p.zero_grad();
  AdamW decay({0.9, 0.999, 1e-8, 0.5});
  Parameter* ps[] = {&p};
  decay.step(ps, {{"g", 0.1}});
  CHECK(p.value[0] == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(p.value[1] == doctest::Approx(-1.9).epsilon(1e-15));

  Parameter& q = store.add("q", Tensor::vector({0.5, 0.5}), "g");
  q.grad = {3.0, -0.2};
  AdamW plain({0.9, 0.999, 1e-8, 0.0});
  Parameter* qs[] = {&q};
  plain.step(qs, {{"g", 0.01}});
  CHECK(q.value[0] == doctest::Approx(0.49).epsilon(1e-7));
  CHECK(q.value[1] == doctest::Approx(0.51).epsilon(1e-6));
  CHECK(plain.steps() == 1);

  Parameter& z = store.add("z", Tensor::vector({0.25}), "g");
  z.zero_grad();
  Parameter* zs[] = {&z};
  plain.step(zs, {{"g", 0.1}});
  CHECK(z.value[0] == 0.25);

  z.grad = {std::numeric_limits<double>::quiet_NaN()};
  try {
    plain.step(zs, {{"g", 0.1}});
    FAIL("expected a training error");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("z") != std::string::npos);
  }
  z.zero_grad();
  CHECK_THROWS_AS(plain.step(zs, {{"other", 0.1}}), ArgumentError);
}

TEST_CASE("learning rate schedule") {
  LrSchedule s;
  CHECK(lr_at(0, 400, s).backbone == 0.006);
  CHECK(lr_at(279, 400, s).backbone == 0.006);
  CHECK(lr_at(280, 400, s).backbone == doctest::Approx(0.0006).epsilon(1e-15));
  CHECK(lr_at(340, 400, s).backbone == doctest::Approx(0.00006).epsilon(1e-15));
  for (std::size_t e = 0; e < 400; e += 7) {
    const auto r = lr_at(e, 400, s);
    CHECK(r.decoder / r.backbone == doctest::Approx(0.1).epsilon(1e-15));
  }
}

TEST_CASE("gradient clipping") {
  ParameterStore store;
  Parameter& a = store.add("a", Tensor::vector({0, 0}), "g");
  a.grad = {1.2, 1.6};
  Parameter* ps[] = {&a};
  CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(2.0));
  CHECK(a.grad[0] == doctest::Approx(0.6));
  CHECK(a.grad[1] == doctest::Approx(0.8));
  CHECK(clip_grad_norm(ps, 5.0) == doctest::Approx(1.0));
  CHECK(a.grad[0] == doctest::Approx(0.6));
  for (int t = 0; t < 20; ++t) {
    a.grad = {std::sin(t) * 10, std::cos(3 * t) * 7};
    clip_grad_norm(ps, 0.5);
    CHECK(std::hypot(a.grad[0], a.grad[1]) <= 0.5 + 1e-12);
  }
}

TEST_CASE("run config text") {
  RunConfig c = RunConfig::desk();
  c.finalize();
  const RunConfig back = RunConfig::parse(c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(c.get("loss.objectness") == "0.5");
  CHECK(c.get("adam_beta2") == "0.999");
  CHECK(c.get("lr_milestones") == "0.7,0.85");
  CHECK(c.get("sampling.positives_per_box") == "4");
  CHECK(c.get("sampling.nms_radius") == "0.05");
  CHECK(c.get("eval.nms_iou") == "0.25");
  CHECK(c.get("decoder.vote_threshold") == "0.3");
  CHECK_THROWS_AS(c.set("no.such.key", "1"), ArgumentError);
  CHECK_THROWS_AS(c.set("epochs", "many"), ArgumentError);

  try {
    RunConfig::parse("epochs = 3\n# fine\nbase_lr = oops\n");
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  RunConfig bad = RunConfig::desk();
  bad.set("lr_milestones", "0.9,0.5");
  CHECK_THROWS_AS(bad.finalize(), ArgumentError);
}

TEST_CASE("zero epochs writes the initialization") {
  RunConfig cfg = testing::toy_run();
  cfg.epochs = 0;
  Detector model(cfg);
  const auto dir = scratch("zero");
  const Dataset data = generate_dataset(cfg);
  train(model, data, {dir, false, false, 1, {}});
  Detector fresh(cfg);
  load_parameters(dir / "model.ckpt", fresh.parameters());
  for (std::size_t i = 0; i < model.parameters().all().size(); ++i)
    CHECK(model.parameters().all()[i]->value == fresh.parameters().all()[i]->value);
}

TEST_CASE("training is deterministic and logs every term") {
  RunConfig cfg = testing::toy_run();
  const Dataset data = generate_dataset(cfg);
  const auto a = scratch("det_a"), b = scratch("det_b");
  {
    Detector m(cfg);
    train(m, data, {a, true, true, 1, {}});
  }
  {
    Detector m(cfg);
    train(m, data, {b, true, true, 2, {}});
  }
  for (const char* f : {"model.ckpt", "metrics.csv", "steps.csv", "config.txt"}) {
    CAPTURE(f);
    CHECK(slurp(a / f) == slurp(b / f));
  }
  const std::string steps = slurp(a / "steps.csv");
  CHECK(steps.rfind("step,epoch,stage,term,value\n", 0) == 0);
  CHECK(steps.find(",sampler,objectness,") != std::string::npos);
  CHECK(steps.find(",1,size_offset,") != std::string::npos);
  CHECK(steps.find(",all,loss,") != std::string::npos);
  const std::string metrics = slurp(a / "metrics.csv");
  CHECK(metrics.rfind("epoch,split,map@0.25,map@0.5,loss,", 0) == 0);
  CHECK(metrics.find("\n1,val,") != std::string::npos);
}

TEST_CASE("ablation expansion") {
  CHECK(ablation_key("layers") == "decoder.layers");
  CHECK(ablation_key("encoding") == "decoder.encoding");
  CHECK(ablation_key("base_lr") == "base_lr");
  CHECK_THROWS_AS(ablation_key("bogus"), ArgumentError);
  CHECK(expand_values("0..3") == std::vector<std::string>{"0", "1", "2", "3"});
  CHECK(expand_values("fixed,none") == std::vector<std::string>{"fixed", "none"});
}
