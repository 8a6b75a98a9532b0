#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "n2f/camera/geometry.hpp"
#include "n2f/labels/label_generation.hpp"

namespace n2f {

struct AppearanceModel {
  Eigen::Vector3d base_color{0.5, 0.5, 0.5};  // rgb in [0, 1]
  double noise_sigma = 0.05;                  // seeded per-pixel texture noise
};

// Axis-aligned box resting in the world frame (z up, ground plane z = 0).
struct BoxObstacle {
  Eigen::Vector3d center{0.0, 0.0, 0.5};
  Eigen::Vector3d size{1.0, 1.0, 1.0};  // full extents
  AppearanceModel appearance;
  int spawn_frame = 0;  // box exists for frame_index >= spawn_frame
};

struct DepthRangeModel {
  double max_valid_range = 15.0;  // beyond this the sensor reports nothing
  double noise_rel = 0.01;        // sigma = noise_rel * depth
  double dropout_prob = 0.05;     // chance a valid reading is dropped
};

struct SceneSpec {
  AppearanceModel ground;
  AppearanceModel sky;
  std::vector<BoxObstacle> obstacles;
  std::vector<Pose> camera_path;  // one camera-to-world pose per frame
  CameraIntrinsics intrinsics;
  DepthRangeModel depth_model;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct SynthFrame {
  RgbImage rgb;
  DepthImage depth;  // corrupted per the depth model; 0 = invalid
  Pose pose;
  LabelMap gt;  // exact geometry over the full image; Unknown only for sky
};

// Raycast of ground plane + active boxes; nearest hit wins. Depth is the hit's
// z-distance along the optical axis; ground truth comes from the uncorrupted
// geometry. Deterministic given (spec, frame_index).
SynthFrame render_frame(const SceneSpec& spec, int frame_index);

// Canonical 200-frame benchmark: family-A obstacles throughout, family-B
// obstacles spawning beyond sensor range at frame 100 and approached through
// the near range as the camera advances.
SceneSpec make_shift_sequence(std::uint64_t seed);

// Family-A-only scene (100 frames) for offline pretraining.
SceneSpec make_pretrain_sequence(std::uint64_t seed);

// Writes rgb/NNNN.png, depth/NNNN.png (16-bit, millimeters, 0 = invalid),
// gt/NNNN.png (label encoding), poses.txt, intrinsics.txt and scene.json.
void export_sequence(const SceneSpec& spec, const std::string& out_dir);

void save_scene(const SceneSpec& spec, const std::string& path);
SceneSpec load_scene(const std::string& path);

// Camera at `position` looking along world +x, pitched down by pitch_rad.
Pose forward_facing_pose(const Eigen::Vector3d& position, double pitch_rad);

}  // namespace n2f
