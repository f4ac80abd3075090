#include "gf3d/train/trainer.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "gf3d/diffcore/checkpoint.h"
#include "gf3d/errors.h"
#include "gf3d/parallel.h"

namespace gf3d {

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

struct Snapshot {
  std::vector<Tensor> values;

  void take(const ParameterStore& store) {
    values.clear();
    for (const Parameter* p : store.all()) values.push_back(p->value);
  }
  void restore(ParameterStore& store) const {
    const auto params = store.all();
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
  }
};

}  // namespace

Dataset generate_dataset(const RunConfig& cfg) {
  DatasetSplit split = generate_split(cfg.gen, cfg.data.train_scenes, cfg.data.val_scenes, std::max<std::size_t>(1, cfg.threads));
  return {std::move(split.train), std::move(split.val)};
}

Dataset load_dataset(const RunConfig& cfg, const std::filesystem::path& dir) {
  if (!dir.empty() && std::filesystem::exists(dir / "manifest.txt")) {
    DatasetSplit split = read_split(dir);
    return {std::move(split.train), std::move(split.val)};
  }
  return generate_dataset(cfg);
}

std::vector<GroundTruth> ground_truth(std::span<const Scene> scenes) {
  std::vector<GroundTruth> out;
  for (const Scene& s : scenes) out.push_back({s.id, s.boxes});
  return out;
}

std::vector<Detector::Detections> detect_all(const Detector& model, std::span<const Scene> scenes, std::size_t threads) {
  std::vector<Detector::Detections> out(scenes.size());
  parallel_for(scenes.size(), threads, [&](std::size_t i) { out[i] = model.detect(scenes[i]); });
  return out;
}

EvalReport evaluate_detections(std::span<const Detector::Detections> dets, std::span<const Scene> scenes,
                               const RunConfig& cfg, DetectionSource source) {
  std::vector<DetectionResult> results;
  for (const auto& d : dets) {
    switch (source) {
      case DetectionSource::configured: results.push_back(d.final(cfg.eval)); break;
      case DetectionSource::ensemble: results.push_back(d.ensemble); break;
      case DetectionSource::last_stage: results.push_back(d.last()); break;
    }
  }
  const auto gts = ground_truth(scenes);
  return evaluate(results, gts, cfg.eval.iou_thresholds, cfg.head.num_classes,
                  cfg.gen.yaw ? IouMode::oriented : IouMode::axis_aligned);
}

EvalReport evaluate_model(const Detector& model, std::span<const Scene> scenes, std::size_t threads,
                          DetectionSource source) {
  const auto dets = detect_all(model, scenes, threads);
  return evaluate_detections(dets, scenes, model.config(), source);
}

std::string metrics_csv(const std::vector<EpochMetrics>& history, const std::vector<double>& thresholds) {
  std::ostringstream os;
  os << "epoch,split";
  for (double t : thresholds) os << ",map@" << num(t);
  std::vector<std::string> names;
  for (const auto& m : history) {
    if (!m.terms.empty()) {
      for (const auto& [n, v] : m.terms) names.push_back(n);
      break;
    }
  }
  for (const auto& n : names) os << ',' << n;
  os << '\n';
  for (const auto& m : history) {
    os << m.epoch << ',' << m.split;
    for (std::size_t i = 0; i < thresholds.size(); ++i) os << ',' << (m.has_map ? num(m.map[i]) : "");
    for (std::size_t i = 0; i < names.size(); ++i) os << ',' << (i < m.terms.size() ? num(m.terms[i].second) : "");
    os << '\n';
  }
  return os.str();
}

TrainResult train(Detector& model, const Dataset& data, const TrainOptions& options) {
  const RunConfig& cfg = model.config();
  if (data.train.empty() && cfg.epochs > 0) throw ArgumentError("train: empty training split");
  ParameterStore& store = model.parameters();
  const auto params = store.all();
  AdamW opt({cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay});
  const LrSchedule schedule{cfg.base_lr, cfg.decoder_lr_factor, cfg.lr_milestones};
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const bool write = !options.out_dir.empty();
  if (write) {
    std::filesystem::create_directories(options.out_dir);
    write_text(options.out_dir / "config.txt", cfg.to_text());
  }
  auto log = [&](const std::string& s) {
    if (options.log) options.log(s);
  };

  TrainResult result;
  Snapshot last_good;
  last_good.take(store);
  std::vector<std::size_t> order(data.train.size());
  std::ostringstream steps;
  steps << "step,epoch,stage,term,value\n";

  auto evaluate_split = [&](std::size_t epoch, const std::string& split, std::span<const Scene> scenes) {
    const EvalReport r = evaluate_model(model, scenes, options.eval_threads);
    EpochMetrics m;
    m.epoch = epoch;
    m.split = split;
    m.has_map = true;
    for (const auto& t : r.thresholds) m.map.push_back(t.map);
    std::string line = "epoch " + std::to_string(epoch) + " " + split;
    for (std::size_t i = 0; i < m.map.size(); ++i) line += " mAP@" + num(cfg.eval.iou_thresholds[i]) + "=" + num(m.map[i]);
    log(line);
    return m;
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto rates = lr_at(epoch, cfg.epochs, schedule).by_group();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.split = "train";
    for (std::size_t idx : order) {
      const Scene scene = cfg.data.augment ? augment(data.train[idx], rng, cfg.gen.yaw) : data.train[idx];
      Graph g;
      const ForwardResult fr = model.forward(g, scene);
      const LossReport lr = model.loss(g, fr, scene);
      const double loss = lr.total.value().item();
      if (!std::isfinite(loss)) {
        if (write) {
          last_good.restore(store);
          save_parameters(options.out_dir / "last_good.ckpt", store);
        }
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " on scene " + scene.id);
      }
      store.zero_grad();
      g.backward(lr.total);
      clip_grad_norm(params, cfg.grad_clip_norm);
      try {
        opt.step(params, rates);
      } catch (const TrainingError&) {
        if (write) {
          last_good.restore(store);
          save_parameters(options.out_dir / "last_good.ckpt", store);
        }
        throw;
      }
      for (const auto& row : lr.rows) {
        steps << result.step_losses.size() << ',' << epoch << ',' << row.stage << ',' << row.term << ',' << num(row.value)
              << '\n';
      }
      result.step_losses.push_back(loss);
      if (em.terms.empty()) {
        em.terms = lr.terms;
      } else {
        for (std::size_t i = 0; i < lr.terms.size(); ++i) em.terms[i].second += lr.terms[i].second;
      }
    }
    for (auto& t : em.terms) t.second /= static_cast<double>(order.size());
    result.epoch_losses.push_back(em.terms.empty() ? 0.0 : em.terms[0].second);
    last_good.take(store);

    const bool last = epoch + 1 == cfg.epochs;
    const bool eval_now = last || (cfg.eval.every > 0 && (epoch + 1) % cfg.eval.every == 0);
    if (eval_now && options.eval_train) {
      EpochMetrics m = evaluate_split(epoch, "train", data.train);
      em.has_map = true;
      em.map = m.map;
    }
    log("epoch " + std::to_string(epoch) + " loss " + num(result.epoch_losses.back()));
    result.history.push_back(std::move(em));
    if (eval_now && options.eval_val && !data.val.empty()) result.history.push_back(evaluate_split(epoch, "val", data.val));
  }
  if (write) {
    save_parameters(options.out_dir / "model.ckpt", store);
    write_text(options.out_dir / "metrics.csv", metrics_csv(result.history, cfg.eval.iou_thresholds));
    write_text(options.out_dir / "steps.csv", steps.str());
  }
  return result;
}

std::string ablation_key(const std::string& axis) {
  if (axis == "sampling") return "sampling.method";
  if (axis == "encoding") return "decoder.encoding";
  if (axis == "layers") return "decoder.layers";
  if (axis == "aggregation") return "decoder.aggregation";
  if (axis == "ensemble") return "eval.ensemble";
  if (axis == "positives") return "sampling.positives_per_box";
  for (const auto& k : RunConfig::keys()) {
    if (k == axis) return k;
  }
  throw ArgumentError("unknown ablation axis: " + axis);
}

std::vector<std::string> expand_values(const std::string& spec) {
  std::vector<std::string> out;
  const auto dots = spec.find("..");
  if (dots != std::string::npos) {
    const long lo = std::stol(spec.substr(0, dots));
    const long hi = std::stol(spec.substr(dots + 2));
    if (hi < lo) throw ArgumentError("empty range: " + spec);
    for (long v = lo; v <= hi; ++v) out.push_back(std::to_string(v));
    return out;
  }
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) throw ArgumentError("no values in: " + spec);
  return out;
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const std::string& axis,
                                      const std::vector<std::string>& values, const std::vector<std::uint64_t>& seeds,
                                      const Dataset& data, std::size_t threads) {
  const std::string key = ablation_key(axis);
  const bool ensemble_axis = key == "eval.ensemble";
  struct Trial {
    std::string value;
    std::uint64_t seed;
  };
  std::vector<Trial> trials;
  if (ensemble_axis) {
    for (std::uint64_t s : seeds) trials.push_back({"", s});
  } else {
    for (const auto& v : values) {
      for (std::uint64_t s : seeds) trials.push_back({v, s});
    }
  }
  std::vector<std::vector<AblationRow>> rows(trials.size());
  parallel_for(trials.size(), threads, [&](std::size_t i) {
    RunConfig cfg = base;
    cfg.seed = trials[i].seed;
    if (!ensemble_axis) cfg.set(key, trials[i].value);
    cfg.finalize();
    Detector model(cfg);
    TrainOptions opts;
    opts.eval_train = false;
    opts.eval_val = false;
    train(model, data, opts);
    const auto dets = detect_all(model, data.val, 1);
    auto row = [&](const std::string& value, DetectionSource src) {
      AblationRow r{axis, value, trials[i].seed, {}};
      for (const auto& t : evaluate_detections(dets, data.val, cfg, src).thresholds) r.map.push_back(t.map);
      return r;
    };
    if (ensemble_axis) {
      for (const auto& v : values) {
        const bool on = v == "true" || v == "1" || v == "on";
        rows[i].push_back(row(v, on ? DetectionSource::ensemble : DetectionSource::last_stage));
      }
    } else {
      rows[i].push_back(row(trials[i].value, DetectionSource::configured));
    }
  });
  std::vector<AblationRow> out;
  if (ensemble_axis) {
    for (std::size_t v = 0; v < values.size(); ++v) {
      for (const auto& r : rows) out.push_back(r[v]);
    }
  } else {
    for (auto& r : rows) out.push_back(std::move(r[0]));
  }
  return out;
}

std::string ablation_csv(const std::vector<AblationRow>& rows, const std::vector<double>& thresholds) {
  std::ostringstream os;
  os << "axis,value,seed";
  for (double t : thresholds) os << ",map@" << num(t);
  os << '\n';
  for (const auto& r : rows) {
    os << r.axis << ',' << r.value << ',' << r.seed;
    for (double m : r.map) os << ',' << num(m);
    os << '\n';
  }
  return os.str();
}

}  // namespace gf3d
