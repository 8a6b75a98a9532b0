#include "n2f/learner/online_learner.hpp"

#include <string>

#include "n2f/core/error.hpp"

namespace n2f {

ReplayWindow::ReplayWindow(int capacity) : capacity_(capacity) {
  if (capacity < 1) throw InvalidInputError("ReplayWindow: capacity must be >= 1");
}

bool ReplayWindow::push(FeatureMap image, LabelMap labels, std::int64_t frame_id) {
  if (labels.height() != image.height || labels.width() != image.width) {
    throw InvalidInputError("ReplayWindow::push: image and label dimensions differ");
  }
  if (!entries_.empty() &&
      (image.height != entries_.front().image.height ||
       image.width != entries_.front().image.width)) {
    throw InvalidInputError("ReplayWindow::push: frame size does not match window contents");
  }
  if (label_histogram(labels).labeled() == 0) return false;  // nothing to learn from

  entries_.push_back({std::move(image), std::move(labels), frame_id});
  if (entries_.size() > static_cast<std::size_t>(capacity_)) entries_.pop_front();
  return true;
}

void OnlineConfig::validate() const {
  if (window_frames < 1) throw InvalidInputError("online: window_frames must be >= 1");
  if (steps_per_frame < 0) throw InvalidInputError("online: steps_per_frame must be >= 0");
  if (batch_frames < 1 || batch_frames > window_frames) {
    throw InvalidInputError("online: need 1 <= batch_frames <= window_frames");
  }
  if (infer_every_k < 1) throw InvalidInputError("online: infer_every_k must be >= 1");
}

LossConfig inverse_frequency_weights(const LabelHistogram& hist) {
  LossConfig w;
  const double labeled = static_cast<double>(hist.labeled());
  if (hist.free_space > 0) w.w_free = labeled / (2.0 * static_cast<double>(hist.free_space));
  if (hist.obstacle > 0) w.w_obstacle = labeled / (2.0 * static_cast<double>(hist.obstacle));
  return w;
}

std::vector<double> online_update(const ReplayWindow& window, NetworkParams& params,
                                  SgdState& velocity, SeededRng& rng, const OnlineConfig& cfg) {
  cfg.validate();
  std::vector<double> losses;
  if (window.empty()) return losses;

  const TrainScope scope = cfg.train_decoder_only ? TrainScope::DecoderOnly : TrainScope::All;
  const std::size_t batch =
      std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_frames), window.size());

  for (int step = 0; step < cfg.steps_per_frame; ++step) {
    const auto picks = rng.sample_without_replacement(window.size(), batch);

    LabelHistogram hist;
    for (std::size_t i : picks) {
      const LabelHistogram h = label_histogram(window.entry(i).labels);
      hist.free_space += h.free_space;
      hist.obstacle += h.obstacle;
      hist.unknown += h.unknown;
    }
    const LossConfig weights = inverse_frequency_weights(hist);

    NetworkParams grads = NetworkParams::architecture();
    double step_loss = 0.0;
    for (std::size_t i : picks) {
      const WindowEntry& e = window.entry(i);
      double frame_loss = 0.0;
      const NetworkParams g = backward(params, e.image, e.labels, weights, &frame_loss);
      accumulate(grads, g, 1.0 / static_cast<double>(picks.size()));
      step_loss += frame_loss / static_cast<double>(picks.size());
    }
    sgd_step(params, grads, cfg.lr, cfg.momentum, velocity, scope);
    losses.push_back(step_loss);
  }
  return losses;
}

Segmentation predict(const NetworkParams& params, const FeatureMap& input) {
  const FeatureMap logits = forward(params, input);
  Segmentation seg;
  seg.classes.resize(logits.height, logits.width);
  seg.obstacle_confidence.resize(logits.height, logits.width);
  for (int y = 0; y < logits.height; ++y) {
    for (int x = 0; x < logits.width; ++x) {
      const Eigen::Index p = static_cast<Eigen::Index>(y) * logits.width + x;
      const double l0 = logits.data(0, p);
      const double l1 = logits.data(1, p);
      const double m = std::max(l0, l1);
      const double z0 = std::exp(l0 - m);
      const double z1 = std::exp(l1 - m);
      const double conf = z1 / (z0 + z1);
      seg.obstacle_confidence(y, x) = conf;
      seg.classes(y, x) =
          static_cast<std::uint8_t>(conf >= 0.5 ? Label::Obstacle : Label::FreeSpace);
    }
  }
  return seg;
}

RunResult run_sequence(const FrameSource& next_frame, const SequenceConfig& cfg,
                       NetworkParams params, const RecordSink& sink) {
  cfg.intrinsics.validate();
  cfg.online.validate();

  ReplayWindow window(cfg.online.window_frames);
  SgdState velocity;
  SeededRng rng(cfg.online.rng_seed);
  std::optional<Segmentation> last_prediction;
  RunResult result{NetworkParams::architecture(), 0};

  while (auto in = next_frame()) {
    try {
      in->pose.validate();
      const PointCloud cloud = backproject_image(in->depth, cfg.intrinsics, cfg.max_range);
      const Eigen::Vector3d up_camera =
          in->pose.rotation.conjugate() * Eigen::Vector3d::UnitZ();
      const std::optional<Plane> plane = fit_plane_ransac(cloud, up_camera, cfg.ransac);

      FrameRecord rec;
      rec.frame_id = in->frame_id;
      rec.plane = plane;
      rec.self_labels = plane
                            ? generate_labels(in->depth, cfg.intrinsics, *plane, cfg.labeling)
                            : LabelMap::unknown(in->depth.height(), in->depth.width());

      const FeatureMap input = to_network_input(in->rgb);
      if (plane) window.push(input, rec.self_labels, in->frame_id);

      rec.fresh_inference = (result.frames % cfg.online.infer_every_k) == 0;
      if (rec.fresh_inference) {
        if (cfg.online.steps_per_frame > 0 && !window.empty()) {
          rec.step_losses = online_update(window, params, velocity, rng, cfg.online);
        }
        last_prediction = predict(params, input);
      } else if (!last_prediction) {
        last_prediction = predict(params, input);
        rec.fresh_inference = true;
      }
      rec.prediction = *last_prediction;
      rec.obstacle_fraction =
          (rec.prediction.classes == static_cast<std::uint8_t>(Label::Obstacle))
              .cast<double>()
              .mean();

      sink(rec, *in);
      ++result.frames;
    } catch (const Error& e) {
      throw Error(e.kind(), "frame " + std::to_string(in->frame_id) + ": " + e.what());
    }
  }
  result.params = std::move(params);
  return result;
}

}  // namespace n2f
