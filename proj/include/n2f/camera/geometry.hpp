#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <vector>

#include "n2f/core/image.hpp"

namespace n2f {

// Camera frame: +z forward (optical axis), +x right, +y down.
// World frame: +z up.

// Depth values beyond this are treated as invalid unless configured otherwise.
inline constexpr double kDefaultMaxRange = 15.0;

struct CameraIntrinsics {
  double fx = 0.0, fy = 0.0;  // focal lengths, pixels
  double cx = 0.0, cy = 0.0;  // principal point, pixels
  int width = 0, height = 0;

  void validate() const;  // throws InvalidInputError on a malformed model
};

// Per-pixel range in meters along the optical axis (z-depth, not ray length).
// A value of 0 or a value beyond max_range means "no valid depth".
struct DepthImage {
  ImageXd meters;

  Eigen::Index height() const { return meters.rows(); }
  Eigen::Index width() const { return meters.cols(); }
};

inline bool depth_valid(double meters, double max_range) {
  return std::isfinite(meters) && meters > 0.0 && meters <= max_range;
}

// Camera-to-world transform.
struct Pose {
  Eigen::Quaterniond rotation{1.0, 0.0, 0.0, 0.0};  // camera-to-world
  Eigen::Vector3d translation{0.0, 0.0, 0.0};       // camera origin in world

  void validate() const;  // |q| must be 1 within 1e-6
};

struct PointCloud {
  Eigen::Matrix3Xd points;                 // one column per point, meters
  std::vector<std::int64_t> pixel_index;   // source pixel (v * width + u) per point

  Eigen::Index size() const { return points.cols(); }
};

// Pinhole inversion: pixel (u, v) at z-depth z to a camera-frame point.
Eigen::Vector3d backproject_pixel(double u, double v, double z, const CameraIntrinsics& k);

// One point per pixel with 0 < depth <= max_range; provenance kept in pixel_index.
PointCloud backproject_image(const DepthImage& depth, const CameraIntrinsics& k,
                             double max_range = kDefaultMaxRange);

// Rigid map p -> R p + t of every point.
PointCloud transform_to_world(const PointCloud& cloud, const Pose& pose);

}  // namespace n2f
