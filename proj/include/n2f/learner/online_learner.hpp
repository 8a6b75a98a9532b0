#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <vector>

#include "n2f/net/seg_network.hpp"
#include "n2f/plane/ground_plane.hpp"

namespace n2f {

struct WindowEntry {
  FeatureMap image;  // normalized network input
  LabelMap labels;
  std::int64_t frame_id = 0;
};

// FIFO window over the last N self-labeled frames. Pushing at capacity evicts
// the oldest entry; frames whose label map is entirely Unknown are rejected.
class ReplayWindow {
 public:
  explicit ReplayWindow(int capacity);

  // Returns false when the frame was rejected (no labeled pixels).
  bool push(FeatureMap image, LabelMap labels, std::int64_t frame_id);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  int capacity() const { return capacity_; }
  const WindowEntry& entry(std::size_t i) const { return entries_[i]; }

 private:
  int capacity_;
  std::deque<WindowEntry> entries_;
};

struct OnlineConfig {
  int window_frames = 10;  // N
  int steps_per_frame = 5;
  int batch_frames = 4;
  double lr = 0.02;
  double momentum = 0.9;
  bool train_decoder_only = true;
  int infer_every_k = 1;  // run update + fresh inference on every k-th frame
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct Segmentation {
  ImageX8 classes;              // Label::FreeSpace or Label::Obstacle per pixel
  ImageXd obstacle_confidence;  // softmax probability of Obstacle, in [0, 1]
};

// Inverse-frequency class weights from a histogram: w_c = labeled / (2 n_c),
// so a balanced batch yields (1, 1). Classes without support get weight 1.
LossConfig inverse_frequency_weights(const LabelHistogram& hist);

// Runs steps_per_frame SGD steps. Each step samples batch_frames window
// entries uniformly without replacement, averages their gradients under
// batch-level inverse-frequency class weights, and applies one sgd_step
// (decoder only when train_decoder_only). Returns the per-step batch loss;
// empty window gives a no-op with an empty log.
std::vector<double> online_update(const ReplayWindow& window, NetworkParams& params,
                                  SgdState& velocity, SeededRng& rng, const OnlineConfig& cfg);

// Softmax over forward logits; class = Obstacle iff confidence >= 0.5.
Segmentation predict(const NetworkParams& params, const FeatureMap& input);

struct FrameInput {
  std::int64_t frame_id = 0;
  RgbImage rgb;
  DepthImage depth;
  Pose pose;
  std::optional<LabelMap> gt;  // full-image ground truth when available
};

struct FrameRecord {
  std::int64_t frame_id = 0;
  std::optional<Plane> plane;
  LabelMap self_labels;  // all-Unknown when the plane fit failed
  Segmentation prediction;
  std::vector<double> step_losses;
  double obstacle_fraction = 0.0;
  bool fresh_inference = true;
};

struct SequenceConfig {
  CameraIntrinsics intrinsics;
  double max_range = kDefaultMaxRange;
  RansacConfig ransac;
  LabelingConfig labeling;
  OnlineConfig online;
};

struct RunResult {
  NetworkParams params;
  int frames = 0;
};

using FrameSource = std::function<std::optional<FrameInput>()>;
using RecordSink = std::function<void(const FrameRecord&, const FrameInput&)>;

// The near-to-far loop, one frame at a time: backproject, fit the ground
// plane (up hint = gravity rotated into the camera frame), generate labels,
// push into the window, update, then predict the current frame with the
// updated parameters. Plane failures skip labeling and updates but still
// predict. Strictly sequential and deterministic given the config seeds.
RunResult run_sequence(const FrameSource& next_frame, const SequenceConfig& cfg,
                       NetworkParams params, const RecordSink& sink);

}  // namespace n2f
