#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>

#include "n2f/camera/geometry.hpp"

namespace n2f {

// Plane equation: normal . x + offset = 0, |normal| = 1.
// The normal is oriented so that normal . up_hint > 0.
struct Plane {
  Eigen::Vector3d normal{0.0, 0.0, 1.0};
  double offset = 0.0;
  int inlier_count = 0;
  double inlier_rms = 0.0;  // meters, over the inliers the plane was refined on
};

struct RansacConfig {
  int iterations = 200;
  double inlier_tau = 0.05;       // point-to-plane distance threshold, meters
  int min_inliers = 500;          // tuned for 160x120 frames
  double normal_cone_deg = 30.0;  // max angle between candidate normal and up hint
  std::uint64_t rng_seed = 0;
};

// Signed distance above (+) or below (-) the plane.
inline double signed_height(const Plane& plane, const Eigen::Vector3d& p) {
  return plane.normal.dot(p) + plane.offset;
}

// Total least squares: normal = smallest-eigenvalue eigenvector of the centered
// covariance, offset = -normal . centroid, sign fixed toward up_hint.
// Throws DegenerateGeometryError when the points do not span a plane.
Plane refine_plane_lsq(const Eigen::Matrix3Xd& points, const Eigen::Vector3d& up_hint);

// Best-consensus plane over seeded 3-point hypotheses whose normal lies within
// normal_cone_deg of up_hint, refined by least squares on its inlier set.
// Returns nullopt when no acceptable consensus reaches min_inliers; the caller
// must skip label generation for the frame.
std::optional<Plane> fit_plane_ransac(const PointCloud& cloud, const Eigen::Vector3d& up_hint,
                                      const RansacConfig& cfg);

}  // namespace n2f
