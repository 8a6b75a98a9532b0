#pragma once

#include <cstdint>

#include "n2f/camera/geometry.hpp"
#include "n2f/plane/ground_plane.hpp"

namespace n2f {

// Values match the on-disk label PNG encoding.
enum class Label : std::uint8_t {
  FreeSpace = 0,
  Obstacle = 1,
  Unknown = 255,
};

// Per-pixel ternary supervision; pixels without valid depth stay Unknown.
struct LabelMap {
  ImageX8 values;

  Eigen::Index height() const { return values.rows(); }
  Eigen::Index width() const { return values.cols(); }

  Label at(Eigen::Index v, Eigen::Index u) const { return static_cast<Label>(values(v, u)); }
  void set(Eigen::Index v, Eigen::Index u, Label l) {
    values(v, u) = static_cast<std::uint8_t>(l);
  }

  static LabelMap unknown(Eigen::Index h, Eigen::Index w) {
    return {ImageX8::Constant(h, w, static_cast<std::uint8_t>(Label::Unknown))};
  }
};

struct LabelingConfig {
  double h_obstacle = 0.15;             // height threshold above the plane, meters
  double max_range = kDefaultMaxRange;  // depth validity cutoff, meters
};

// Threshold rule on geometry: a valid-depth pixel whose backprojection sits at
// signed height >= h_obstacle is Obstacle, otherwise FreeSpace; everything else
// is Unknown. The plane must live in the same frame the pixels backproject to
// (the camera frame in the per-frame loop).
LabelMap generate_labels(const DepthImage& depth, const CameraIntrinsics& k, const Plane& plane,
                         const LabelingConfig& cfg);

struct LabelHistogram {
  std::int64_t free_space = 0;
  std::int64_t obstacle = 0;
  std::int64_t unknown = 0;

  std::int64_t total() const { return free_space + obstacle + unknown; }
  std::int64_t labeled() const { return free_space + obstacle; }
};

LabelHistogram label_histogram(const LabelMap& map);

}  // namespace n2f
