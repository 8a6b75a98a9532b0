#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "n2f/core/error.hpp"
#include "n2f/pipeline/pipeline.hpp"

namespace fs = std::filesystem;
using namespace n2f;

namespace {

// Output locations must point into an existing directory; nothing is created
// above the target itself.
void require_parent_exists(const std::string& path) {
  const fs::path parent = fs::absolute(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    throw DataError("parent directory does not exist: " + parent.string());
  }
}

struct SynthGenArgs {
  std::string benchmark = "shift";
  std::string scene_path;
  std::uint64_t seed = 7;
  std::string out_dir;
};

int run_synth_gen(const SynthGenArgs& args) {
  require_parent_exists(args.out_dir);
  SceneSpec spec;
  if (!args.scene_path.empty()) {
    spec = load_scene(args.scene_path);
  } else {
    spec = make_benchmark(args.benchmark, args.seed);
  }
  export_sequence(spec, args.out_dir);
  std::printf("frames=%zu digest=%s\n", spec.camera_path.size(),
              directory_digest(args.out_dir).c_str());
  return 0;
}

struct PretrainArgs {
  PretrainOptions opts;
};

int run_pretrain(const PretrainArgs& args) {
  require_parent_exists(args.opts.out_params_path);
  const PretrainResult result = pretrain(args.opts);
  std::printf("frames_used=%d frames_skipped=%d\n", result.frames_used, result.frames_skipped);
  for (std::size_t e = 0; e < result.epoch_mean_loss.size(); ++e) {
    std::printf("epoch=%zu mean_loss=%.6f\n", e + 1, result.epoch_mean_loss[e]);
  }
  std::printf("final_loss=%.6f params=%s\n",
              result.epoch_mean_loss.empty() ? 0.0 : result.epoch_mean_loss.back(),
              args.opts.out_params_path.c_str());
  return 0;
}

int run_replay(const ReplayOptions& opts) {
  require_parent_exists(opts.out_dir);
  const ReplayResult result = replay(opts);
  std::printf("frames=%d params_digest_before=%016llx params_digest_after=%016llx\n",
              result.frames, static_cast<unsigned long long>(result.params_digest_before),
              static_cast<unsigned long long>(result.params_digest_after));
  if (result.report_all) {
    std::printf("aggregate all: miou=%.4f ap=%.4f accuracy=%.4f\n",
                result.report_all->aggregate.miou, result.report_all->aggregate.ap,
                result.report_all->aggregate.accuracy);
    std::printf("aggregate far: miou=%.4f ap=%.4f accuracy=%.4f\n",
                result.report_far->aggregate.miou, result.report_far->aggregate.ap,
                result.report_far->aggregate.accuracy);
  } else {
    std::printf("no ground truth in sequence; metrics skipped\n");
  }
  return 0;
}

int run_gradcheck(std::uint64_t seed, double corrupt) {
  GradcheckOptions opts;
  opts.seed = seed;
  opts.corrupt = corrupt;
  const GradcheckReport report = gradcheck(opts);
  for (const GradcheckTensor& t : report.tensors) {
    std::printf("%-10s max_rel_err=%.3e\n", t.name.c_str(), t.max_rel_err);
  }
  std::printf("gradcheck %s (tolerance %.1e)\n", report.pass ? "PASS" : "FAIL", opts.tolerance);
  if (!report.pass) {
    throw Error(ErrorKind::Check, "gradient check failed");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"n2f: near-to-far self-supervised obstacle/free-space segmentation"};
  app.require_subcommand(1);

  // synth-gen ---------------------------------------------------------------
  SynthGenArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth-gen", "Render a synthetic RGB-D sequence to disk");
  synth->add_option("--benchmark", synth_args.benchmark, "Preset: shift or pretrain")
      ->capture_default_str();
  synth->add_option("--scene", synth_args.scene_path, "Scene spec JSON (overrides --benchmark)");
  synth->add_option("--seed", synth_args.seed, "Scene seed")->capture_default_str();
  synth->add_option("--out", synth_args.out_dir, "Output sequence directory")->required();

  // pretrain ----------------------------------------------------------------
  PretrainArgs pre_args;
  CLI::App* pre = app.add_subcommand("pretrain", "Train the full network offline on "
                                                 "geometry-generated labels");
  pre->add_option("--seq", pre_args.opts.sequence_dirs, "Training sequence directory (repeatable)")
      ->required();
  pre->add_option("--out", pre_args.opts.out_params_path, "Output parameter file")->required();
  pre->add_option("--epochs", pre_args.opts.epochs)->capture_default_str();
  pre->add_option("--seed", pre_args.opts.seed, "Init + sampling seed")->capture_default_str();
  pre->add_option("--lr", pre_args.opts.lr)->capture_default_str();
  pre->add_option("--momentum", pre_args.opts.momentum)->capture_default_str();
  pre->add_option("--batch-frames", pre_args.opts.batch_frames)->capture_default_str();
  pre->add_option("--max-range", pre_args.opts.max_range)->capture_default_str();
  pre->add_option("--eval-seed", pre_args.opts.eval_seeds,
                  "Scene seed reserved for evaluation (repeatable); training sequences "
                  "generated from one of these are refused")
      ->required();

  // replay --------------------------------------------------------------------
  ReplayOptions replay_defaults;
  std::string replay_config_path;
  std::string replay_mode = "online";
  std::string default_config_out;
  ReplayOptions replay_flags;  // values captured by flags
  CLI::App* rep = app.add_subcommand("replay", "Run the near-to-far loop over a sequence");
  rep->add_option("--config", replay_config_path, "Run config JSON; flags override its values");
  rep->add_option("--write-default-config", default_config_out,
                  "Write a config with every default and exit");
  auto* opt_seq = rep->add_option("--seq", replay_flags.sequence_dir, "Sequence directory");
  auto* opt_params = rep->add_option("--params", replay_flags.params_path, "Parameter file");
  auto* opt_out = rep->add_option("--out", replay_flags.out_dir, "Run output directory");
  auto* opt_mode = rep->add_option("--mode", replay_mode, "online or frozen")
                       ->check(CLI::IsMember({"online", "frozen"}))
                       ->capture_default_str();
  auto* opt_range = rep->add_option("--max-range", replay_flags.max_range,
                                    "Depth validity cutoff, meters")
                        ->capture_default_str();
  auto* opt_r_iter = rep->add_option("--ransac-iterations", replay_flags.ransac.iterations)
                         ->capture_default_str();
  auto* opt_r_tau = rep->add_option("--ransac-tau", replay_flags.ransac.inlier_tau)
                        ->capture_default_str();
  auto* opt_r_min = rep->add_option("--ransac-min-inliers", replay_flags.ransac.min_inliers)
                        ->capture_default_str();
  auto* opt_r_cone = rep->add_option("--ransac-cone-deg", replay_flags.ransac.normal_cone_deg)
                         ->capture_default_str();
  auto* opt_r_seed = rep->add_option("--ransac-seed", replay_flags.ransac.rng_seed)
                         ->capture_default_str();
  auto* opt_h_obst = rep->add_option("--h-obstacle", replay_flags.labeling.h_obstacle,
                                     "Obstacle height threshold, meters")
                         ->capture_default_str();
  auto* opt_window = rep->add_option("--window", replay_flags.online.window_frames,
                                     "Sliding window size N")
                         ->capture_default_str();
  auto* opt_steps = rep->add_option("--steps-per-frame", replay_flags.online.steps_per_frame)
                        ->capture_default_str();
  auto* opt_batch = rep->add_option("--batch-frames", replay_flags.online.batch_frames)
                        ->capture_default_str();
  auto* opt_lr = rep->add_option("--lr", replay_flags.online.lr)->capture_default_str();
  auto* opt_mom = rep->add_option("--momentum", replay_flags.online.momentum)
                      ->capture_default_str();
  auto* opt_dec = rep->add_flag("--train-all-layers",
                                "Update the encoder online too (default: decoder only)");
  auto* opt_infer_k = rep->add_option("--infer-every-k", replay_flags.online.infer_every_k,
                                      "Update + fresh inference every k-th frame")
                          ->capture_default_str();
  auto* opt_oseed = rep->add_option("--online-seed", replay_flags.online.rng_seed)
                        ->capture_default_str();
  auto* opt_no_overlays = rep->add_flag("--no-overlays", "Skip overlay PNGs");
  auto* opt_no_pred = rep->add_flag("--no-predictions", "Skip pred/ and conf/ PNGs");

  // eval ------------------------------------------------------------------------
  EvalOptions eval_opts;
  std::string eval_run_a, eval_run_b, eval_out;
  CLI::App* ev = app.add_subcommand("eval", "Metrics against ground truth, or compare two runs");
  ev->add_option("--pred", eval_opts.pred_dir, "Prediction label PNG directory");
  ev->add_option("--conf", eval_opts.conf_dir, "Confidence PNG directory (optional)");
  ev->add_option("--gt", eval_opts.gt_dir, "Ground-truth label PNG directory");
  ev->add_option("--depth", eval_opts.depth_dir, "Depth PNG directory (needed for --region far)");
  ev->add_option("--region", eval_opts.region, "all or far")
      ->check(CLI::IsMember({"all", "far"}))
      ->capture_default_str();
  ev->add_option("--max-range", eval_opts.max_range)->capture_default_str();
  ev->add_option("--out", eval_out, "Output CSV path");
  ev->add_option("--run-a", eval_run_a, "Baseline run directory (comparison mode)");
  ev->add_option("--run-b", eval_run_b, "Candidate run directory (comparison mode)");

  // gradcheck ---------------------------------------------------------------------
  std::uint64_t grad_seed = 0;
  double grad_corrupt = 0.0;
  CLI::App* grad = app.add_subcommand("gradcheck",
                                      "Finite-difference check of every parameter gradient");
  grad->add_option("--seed", grad_seed)->capture_default_str();
  grad->add_option("--corrupt", grad_corrupt,
                   "Testing hook: offset added to one analytic gradient entry")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << std::endl;
    return 1;
  }

  try {
    if (synth->parsed()) return run_synth_gen(synth_args);
    if (pre->parsed()) return run_pretrain(pre_args);

    if (rep->parsed()) {
      if (!default_config_out.empty()) {
        require_parent_exists(default_config_out);
        write_run_config(ReplayOptions{}, default_config_out);
        std::printf("wrote default config to %s\n", default_config_out.c_str());
        return 0;
      }
      ReplayOptions opts =
          replay_config_path.empty() ? ReplayOptions{} : read_run_config(replay_config_path);
      if (opt_seq->count()) opts.sequence_dir = replay_flags.sequence_dir;
      if (opt_params->count()) opts.params_path = replay_flags.params_path;
      if (opt_out->count()) opts.out_dir = replay_flags.out_dir;
      if (opt_mode->count()) {
        opts.mode = replay_mode == "frozen" ? RunMode::Frozen : RunMode::Online;
      }
      if (opt_range->count()) {
        opts.max_range = replay_flags.max_range;
        opts.labeling.max_range = replay_flags.max_range;
      }
      if (opt_r_iter->count()) opts.ransac.iterations = replay_flags.ransac.iterations;
      if (opt_r_tau->count()) opts.ransac.inlier_tau = replay_flags.ransac.inlier_tau;
      if (opt_r_min->count()) opts.ransac.min_inliers = replay_flags.ransac.min_inliers;
      if (opt_r_cone->count()) opts.ransac.normal_cone_deg = replay_flags.ransac.normal_cone_deg;
      if (opt_r_seed->count()) opts.ransac.rng_seed = replay_flags.ransac.rng_seed;
      if (opt_h_obst->count()) opts.labeling.h_obstacle = replay_flags.labeling.h_obstacle;
      if (opt_window->count()) opts.online.window_frames = replay_flags.online.window_frames;
      if (opt_steps->count()) opts.online.steps_per_frame = replay_flags.online.steps_per_frame;
      if (opt_batch->count()) opts.online.batch_frames = replay_flags.online.batch_frames;
      if (opt_lr->count()) opts.online.lr = replay_flags.online.lr;
      if (opt_mom->count()) opts.online.momentum = replay_flags.online.momentum;
      if (opt_dec->count()) opts.online.train_decoder_only = false;
      if (opt_infer_k->count()) opts.online.infer_every_k = replay_flags.online.infer_every_k;
      if (opt_oseed->count()) opts.online.rng_seed = replay_flags.online.rng_seed;
      if (opt_no_overlays->count()) opts.write_overlays = false;
      if (opt_no_pred->count()) opts.write_predictions = false;
      if (opts.sequence_dir.empty() || opts.params_path.empty() || opts.out_dir.empty()) {
        throw InvalidInputError("replay needs --seq, --params and --out (or a config)");
      }
      return run_replay(opts);
    }

    if (ev->parsed()) {
      const bool compare_mode = !eval_run_a.empty() || !eval_run_b.empty();
      if (compare_mode) {
        if (eval_run_a.empty() || eval_run_b.empty()) {
          throw InvalidInputError("comparison mode needs both --run-a and --run-b");
        }
        const RunComparison cmp =
            compare_run_dirs(eval_run_a, eval_run_b, eval_opts.region, eval_out);
        std::fputs(comparison_summary(cmp).c_str(), stdout);
        return 0;
      }
      if (eval_opts.pred_dir.empty() || eval_opts.gt_dir.empty()) {
        throw InvalidInputError("eval needs --pred and --gt (or --run-a/--run-b)");
      }
      eval_opts.out_csv = eval_out;
      const MetricReport report = evaluate_dirs(eval_opts);
      std::printf("frames=%zu region=%s\n", report.frames.size(), report.region.c_str());
      std::printf("aggregate: iou_free=%.4f iou_obstacle=%.4f miou=%.4f ap=%.4f accuracy=%.4f\n",
                  report.aggregate.iou_free, report.aggregate.iou_obstacle,
                  report.aggregate.miou, report.aggregate.ap, report.aggregate.accuracy);
      return 0;
    }

    if (grad->parsed()) return run_gradcheck(grad_seed, grad_corrupt);
  } catch (const Error& e) {
    const char* kind = "data";
    if (e.kind() == ErrorKind::Usage) kind = "usage";
    if (e.kind() == ErrorKind::Check) kind = "check";
    std::cerr << "error: " << kind << ": " << e.what() << std::endl;
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: data: " << e.what() << std::endl;
    return 2;
  }
  return 0;
}
