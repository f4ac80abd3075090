#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "gf3d/evalkit/evalkit.h"
#include "gf3d/scenegen/scene.h"
#include "gf3d/train/config.h"
#include "gf3d/train/model.h"
#include "gf3d/train/optim.h"

namespace gf3d {

struct Dataset {
  std::vector<Scene> train;
  std::vector<Scene> val;
};

// Reads <dir> when it holds a manifest, otherwise generates the split the
// config describes.
Dataset load_dataset(const RunConfig& cfg, const std::filesystem::path& dir = {});
Dataset generate_dataset(const RunConfig& cfg);

enum class DetectionSource { configured, ensemble, last_stage };

std::vector<Detector::Detections> detect_all(const Detector& model, std::span<const Scene> scenes,
                                             std::size_t threads);
EvalReport evaluate_detections(std::span<const Detector::Detections> dets, std::span<const Scene> scenes,
                               const RunConfig& cfg, DetectionSource source = DetectionSource::configured);
EvalReport evaluate_model(const Detector& model, std::span<const Scene> scenes, std::size_t threads,
                          DetectionSource source = DetectionSource::configured);

std::vector<GroundTruth> ground_truth(std::span<const Scene> scenes);

struct EpochMetrics {
  std::size_t epoch = 0;
  std::string split;
  bool has_map = false;
  std::vector<double> map;  // one per eval threshold
  std::vector<std::pair<std::string, double>> terms;  // mean over the epoch's steps
};

struct TrainOptions {
  // Empty: nothing is written.
  std::filesystem::path out_dir;
  bool eval_train = true;
  bool eval_val = true;
  std::size_t eval_threads = 1;
  std::function<void(const std::string&)> log;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;
};

// Per step: augment, forward, loss, backward, clip, AdamW. A non-finite loss
// writes last_good.ckpt (parameters after the last finite epoch) and throws
// TrainingError. A finished run writes model.ckpt, metrics.csv, steps.csv
// and config.txt into out_dir.
TrainResult train(Detector& model, const Dataset& data, const TrainOptions& options = {});

std::string metrics_csv(const std::vector<EpochMetrics>& history, const std::vector<double>& thresholds);

struct AblationRow {
  std::string axis;
  std::string value;
  std::uint64_t seed = 0;
  std::vector<double> map;  // one per eval threshold
};

// Maps a short axis name (sampling, encoding, layers, aggregation, ensemble,
// positives) to its config key; any config key is accepted verbatim.
std::string ablation_key(const std::string& axis);

// One training trial per (value, seed); trials run on `threads` workers. The
// ensemble axis trains once per seed and evaluates both settings.
std::vector<AblationRow> run_ablation(const RunConfig& base, const std::string& axis,
                                      const std::vector<std::string>& values, const std::vector<std::uint64_t>& seeds,
                                      const Dataset& data, std::size_t threads);

std::string ablation_csv(const std::vector<AblationRow>& rows, const std::vector<double>& thresholds);

// Expands "0..6" into 0,1,...,6; other specs are comma-separated lists.
std::vector<std::string> expand_values(const std::string& spec);

}  // namespace gf3d
