// gf3d command-line entry point.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "gf3d/diffcore/checkpoint.h"
#include "gf3d/errors.h"
#include "gf3d/evalkit/evalkit.h"
#include "gf3d/scenegen/scene.h"
#include "gf3d/train/config.h"
#include "gf3d/train/model.h"
#include "gf3d/train/trainer.h"
#include "plot.h"

namespace fs = std::filesystem;
using namespace gf3d;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  long long seed = -1;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Run config (key = value lines)")->check(CLI::ExistingFile);
  app->add_option("--set", c.overrides, "Override a config entry, key=value");
  app->add_option("--seed", c.seed, "Seed (model/training; dataset seed for gen)");
}

RunConfig build_config(const Common& c, const std::string& fallback = "") {
  RunConfig cfg = !c.config.empty()              ? RunConfig::load(c.config)
                  : (!fallback.empty() && fs::exists(fallback)) ? RunConfig::load(fallback)
                                                              : RunConfig::desk();
  for (const std::string& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ArgumentError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.finalize();
  return cfg;
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

std::vector<Scene> select_split(const Dataset& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "val") return d.val;
  std::vector<Scene> all = d.train;
  all.insert(all.end(), d.val.begin(), d.val.end());
  return all;
}

fs::path default_config_for(const std::string& checkpoint) {
  return checkpoint.empty() ? fs::path() : fs::path(checkpoint).parent_path() / "config.txt";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Group-free 3D object detection: data, training and evaluation"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  // gen
  Common gen_c;
  std::string gen_out;
  long long gen_train = -1, gen_val = -1;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset split");
  add_common(gen, gen_c);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--train", gen_train, "Training scenes (default from config)");
  gen->add_option("--val", gen_val, "Validation scenes (default from config)");

  // train
  Common train_c;
  std::string train_out, train_data;
  std::size_t train_trials = 1;
  auto* tr = app.add_subcommand("train", "Train a detector");
  add_common(tr, train_c);
  tr->add_option("--out", train_out, "Run directory")->required();
  tr->add_option("--data", train_data, "Dataset directory (generated from the config when absent)");
  tr->add_option("--trials", train_trials, "Independent trials with consecutive seeds")->check(CLI::PositiveNumber);

  // eval
  Common eval_c;
  std::string eval_dets, eval_ckpt, eval_data, eval_out, eval_split = "val";
  std::vector<double> eval_iou;
  std::size_t eval_classes = 0;
  auto* ev = app.add_subcommand("eval", "Evaluate detections against ground truth");
  add_common(ev, eval_c);
  ev->add_option("--detections", eval_dets, "Detections file")->check(CLI::ExistingFile);
  ev->add_option("--checkpoint", eval_ckpt, "Model checkpoint (detect first)")->check(CLI::ExistingFile);
  ev->add_option("--data", eval_data, "Dataset directory with manifest")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--split", eval_split, "train, val or all")->check(CLI::IsMember({"train", "val", "all"}));
  ev->add_option("--out", eval_out, "Report directory")->required();
  ev->add_option("--iou", eval_iou, "IoU thresholds")->delimiter(',');
  ev->add_option("--classes", eval_classes, "Number of classes (default from config)");

  // detect
  Common det_c;
  std::string det_ckpt, det_scene, det_out;
  auto* det = app.add_subcommand("detect", "Run a trained model on one scene");
  add_common(det, det_c);
  det->add_option("--checkpoint", det_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  det->add_option("--scene", det_scene, "Scene file")->required()->check(CLI::ExistingFile);
  det->add_option("--out", det_out, "Detections file")->required();

  // ablate
  Common abl_c;
  std::string abl_axis, abl_values, abl_out, abl_data;
  std::size_t abl_trials = 5, abl_threads = 1;
  auto* abl = app.add_subcommand("ablate", "Sweep one setting over several seeds");
  add_common(abl, abl_c);
  abl->add_option("--axis", abl_axis, "sampling, encoding, layers, aggregation, ensemble, positives or a config key")
      ->required();
  abl->add_option("values", abl_values, "Values, e.g. 0..6 or fps,kps,kps_nms")->required();
  abl->add_option("--trials", abl_trials, "Seeds per value")->check(CLI::PositiveNumber);
  abl->add_option("--threads", abl_threads, "Parallel trials")->check(CLI::PositiveNumber);
  abl->add_option("--data", abl_data, "Dataset directory (generated when absent)");
  abl->add_option("--out", abl_out, "Output CSV")->required();

  // inspect
  Common ins_c;
  std::string ins_ckpt, ins_scene, ins_out;
  auto* ins = app.add_subcommand("inspect", "Dump cross-attention weights as CSV");
  add_common(ins, ins_c);
  ins->add_option("--checkpoint", ins_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  ins->add_option("--scene", ins_scene, "Scene file")->required()->check(CLI::ExistingFile);
  ins->add_option("--out", ins_out, "Output CSV")->required();

  // plot
  std::string plot_csv, plot_x, plot_out, plot_filter;
  std::vector<std::string> plot_y;
  auto* pl = app.add_subcommand("plot", "Plot CSV columns as SVG curves");
  pl->add_option("--csv", plot_csv, "Input CSV")->required()->check(CLI::ExistingFile);
  pl->add_option("--x", plot_x, "X column")->required();
  pl->add_option("--y", plot_y, "Y columns")->required()->delimiter(',');
  pl->add_option("--where", plot_filter, "Keep rows with column=value");
  pl->add_option("--out", plot_out, "Output SVG")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      RunConfig cfg = build_config(gen_c);
      if (gen_c.seed >= 0) cfg.gen.seed = static_cast<std::uint64_t>(gen_c.seed);
      if (gen_train >= 0) cfg.data.train_scenes = static_cast<std::size_t>(gen_train);
      if (gen_val >= 0) cfg.data.val_scenes = static_cast<std::size_t>(gen_val);
      const DatasetSplit split = generate_split(cfg.gen, cfg.data.train_scenes, cfg.data.val_scenes, cfg.threads);
      write_split(gen_out, split);
      write_file(fs::path(gen_out) / "config.txt", cfg.to_text());
      std::printf("wrote %zu train and %zu val scenes to %s\n", split.train.size(), split.val.size(), gen_out.c_str());
    } else if (*tr) {
      RunConfig cfg = build_config(train_c);
      if (train_c.seed >= 0) cfg.seed = static_cast<std::uint64_t>(train_c.seed);
      const Dataset data = load_dataset(cfg, train_data);
      for (std::size_t t = 0; t < train_trials; ++t) {
        RunConfig run = cfg;
        run.seed = cfg.seed + t;
        Detector model(run);
        TrainOptions opts;
        opts.out_dir = train_trials == 1 ? fs::path(train_out) : fs::path(train_out) / ("trial" + std::to_string(t));
        opts.eval_threads = std::max<std::size_t>(1, run.threads);
        opts.log = [](const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); };
        train(model, data, opts);
      }
    } else if (*ev) {
      if (eval_dets.empty() == eval_ckpt.empty()) throw UsageError("eval needs exactly one of --detections or --checkpoint");
      RunConfig cfg = build_config(eval_c, default_config_for(eval_ckpt).string());
      if (!eval_iou.empty()) cfg.eval.iou_thresholds = eval_iou;
      if (eval_classes > 0) cfg.head.num_classes = eval_classes;
      const DatasetSplit split = read_split(eval_data);
      const std::vector<Scene> scenes = select_split({split.train, split.val}, eval_split);
      fs::create_directories(eval_out);
      std::vector<DetectionResult> results;
      if (!eval_dets.empty()) {
        results = read_detections(eval_dets);
      } else {
        Detector model(cfg);
        load_parameters(eval_ckpt, model.parameters());
        for (const auto& d : detect_all(model, scenes, std::max<std::size_t>(1, cfg.threads))) {
          results.push_back(d.final(cfg.eval));
        }
        write_detections(fs::path(eval_out) / "detections.txt", results);
      }
      const auto gts = ground_truth(scenes);
      const EvalReport report = evaluate(results, gts, cfg.eval.iou_thresholds, cfg.head.num_classes,
                                         cfg.gen.yaw ? IouMode::oriented : IouMode::axis_aligned);
      write_report_csv(fs::path(eval_out) / "report.csv", report);
      write_pr_svgs(fs::path(eval_out) / "pr", report);
      for (const auto& t : report.thresholds) std::printf("mAP@%.2f %.6f\n", t.iou_threshold, t.map);
    } else if (*det) {
      const RunConfig cfg = build_config(det_c, default_config_for(det_ckpt).string());
      Detector model(cfg);
      load_parameters(det_ckpt, model.parameters());
      const Scene scene = read_scene(det_scene);
      const DetectionResult r = model.detect(scene).final(cfg.eval);
      write_detections(det_out, std::span<const DetectionResult>(&r, 1));
      std::printf("%zu detections\n", r.boxes.size());
    } else if (*abl) {
      RunConfig cfg = build_config(abl_c);
      const std::uint64_t first = abl_c.seed >= 0 ? static_cast<std::uint64_t>(abl_c.seed) : cfg.seed;
      std::vector<std::uint64_t> seeds;
      for (std::size_t t = 0; t < abl_trials; ++t) seeds.push_back(first + t);
      const Dataset data = load_dataset(cfg, abl_data);
      const auto rows = run_ablation(cfg, abl_axis, expand_values(abl_values), seeds, data, abl_threads);
      write_file(abl_out, ablation_csv(rows, cfg.eval.iou_thresholds));
      std::printf("%zu rows written to %s\n", rows.size(), abl_out.c_str());
    } else if (*ins) {
      RunConfig cfg = build_config(ins_c, default_config_for(ins_ckpt).string());
      cfg.decoder.record_attention = true;
      Detector model(cfg);
      load_parameters(ins_ckpt, model.parameters());
      const Scene scene = read_scene(ins_scene);
      Graph g(false);
      const ForwardResult fr = model.forward(g, scene);
      std::ostringstream os;
      os << "stage,head,candidate,point,px,py,pz,weight\n";
      char buf[256];
      for (const StagePrediction& sp : fr.stages) {
        for (std::size_t h = 0; h < sp.attention.size(); ++h) {
          const Tensor& w = sp.attention[h];
          for (std::size_t k = 0; k < w.rows(); ++k) {
            for (std::size_t m = 0; m < w.cols(); ++m) {
              const Vec3& p = fr.points.positions[m];
              std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%zu,%.6f,%.6f,%.6f,%.9g\n", sp.stage, h, k, m, p.x, p.y, p.z,
                            w.at(k, m));
              os << buf;
            }
          }
        }
      }
      write_file(ins_out, os.str());
    } else if (*pl) {
      std::ifstream in(plot_csv);
      std::ostringstream ss;
      ss << in.rdbuf();
      write_file(plot_out, plot_svg(ss.str(), plot_x, plot_y, plot_filter));
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n%s", e.what(), app.help().c_str());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
