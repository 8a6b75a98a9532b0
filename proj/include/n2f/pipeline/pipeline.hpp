#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "n2f/eval/metrics.hpp"
#include "n2f/learner/online_learner.hpp"
#include "n2f/synth/synth_world.hpp"

namespace n2f {

// ---- synthetic data generation ------------------------------------------

// Named benchmark presets: "shift" (canonical 200-frame appearance-shift
// sequence) and "pretrain" (100-frame family-A-only scene).
SceneSpec make_benchmark(const std::string& name, std::uint64_t seed);

// FNV-1a over the bytes of every regular file under dir, ordered by relative
// path. Used to assert bit-identical exports.
std::string directory_digest(const std::string& dir);

// ---- offline pretraining --------------------------------------------------

struct PretrainOptions {
  std::vector<std::string> sequence_dirs;
  std::string out_params_path;
  int epochs = 2;
  std::uint64_t seed = 0;  // initialization + batch sampling
  double lr = 0.05;
  double momentum = 0.9;
  int batch_frames = 4;
  double max_range = kDefaultMaxRange;
  RansacConfig ransac;
  LabelingConfig labeling;
  // Scene seeds reserved for evaluation; any training sequence generated from
  // one of these is refused.
  std::vector<std::uint64_t> eval_seeds;
};

struct PretrainResult {
  std::vector<double> epoch_mean_loss;
  int frames_used = 0;
  int frames_skipped = 0;  // plane failures / unlabeled frames
};

// Trains the full network (encoder + decoder) on geometry-generated labels of
// the given sequences and saves the parameters.
PretrainResult pretrain(const PretrainOptions& opts);

// ---- replay ----------------------------------------------------------------

enum class RunMode { Online, Frozen };

struct ReplayOptions {
  std::string sequence_dir;
  std::string params_path;
  std::string out_dir;
  RunMode mode = RunMode::Online;
  double max_range = kDefaultMaxRange;
  RansacConfig ransac;
  LabelingConfig labeling;
  OnlineConfig online;
  bool write_overlays = true;
  bool write_predictions = true;
};

struct ReplayResult {
  int frames = 0;
  bool has_gt = false;
  std::uint64_t params_digest_before = 0;
  std::uint64_t params_digest_after = 0;
  std::optional<MetricReport> report_all;
  std::optional<MetricReport> report_far;
};

// Runs the near-to-far loop over an ingested sequence and writes the run
// artifacts (run_log.txt, pred/, conf/, overlays, metrics CSVs when ground
// truth exists, params_final.bin, run_config.json).
ReplayResult replay(const ReplayOptions& opts);

// JSON round trip for ReplayOptions; the written default config carries every
// documented default.
void write_run_config(const ReplayOptions& opts, const std::string& path);
ReplayOptions read_run_config(const std::string& path);

// ---- evaluation -------------------------------------------------------------

struct EvalOptions {
  std::string pred_dir;   // 8-bit label PNGs
  std::string conf_dir;   // optional 16-bit confidence PNGs (value / 65535)
  std::string gt_dir;     // 8-bit label PNGs
  std::string depth_dir;  // required for region "far"
  std::string region = "all";
  double max_range = kDefaultMaxRange;
  std::string out_csv;  // optional
};

MetricReport evaluate_dirs(const EvalOptions& opts);

// Reads each run's metrics_<region>.csv and emits the paired comparison.
RunComparison compare_run_dirs(const std::string& run_a, const std::string& run_b,
                               const std::string& region, const std::string& out_csv);

// ---- gradient verification --------------------------------------------------

struct GradcheckOptions {
  std::uint64_t seed = 0;
  double fd_step = 1e-4;
  double tolerance = 1e-3;
  // Test hook: offset added to one analytic gradient entry to prove the check
  // can fail.
  double corrupt = 0.0;
};

struct GradcheckTensor {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckTensor> tensors;
  bool pass = false;
};

// Central finite differences against the analytic gradients of every
// parameter tensor on a seeded 8x8 instance.
GradcheckReport gradcheck(const GradcheckOptions& opts);

// Prediction mask alpha-blended on the input: obstacle red, free-space blue,
// Unknown left untinted.
RgbImage overlay_labels(const RgbImage& rgb, const ImageX8& label_values, double alpha = 0.45);

}  // namespace n2f
