#include "n2f/camera/geometry.hpp"

#include <cmath>
#include <string>

#include "n2f/core/error.hpp"

namespace n2f {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw InvalidInputError("intrinsics: focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw InvalidInputError("intrinsics: image size must be positive");
  }
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw InvalidInputError("intrinsics: principal point outside image");
  }
}

void Pose::validate() const {
  if (std::abs(rotation.norm() - 1.0) > 1e-6) {
    throw InvalidInputError("pose: quaternion is not unit-norm");
  }
}

Eigen::Vector3d backproject_pixel(double u, double v, double z, const CameraIntrinsics& k) {
  if (!std::isfinite(z) || z <= 0.0) {
    throw InvalidInputError("backproject_pixel: depth must be positive and finite");
  }
  if (u < 0.0 || u >= k.width || v < 0.0 || v >= k.height) {
    throw InvalidInputError("backproject_pixel: pixel outside image bounds");
  }
  return {(u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z};
}

PointCloud backproject_image(const DepthImage& depth, const CameraIntrinsics& k,
                             double max_range) {
  if (depth.height() != k.height || depth.width() != k.width) {
    throw InvalidInputError("backproject_image: depth size " + std::to_string(depth.width()) +
                            "x" + std::to_string(depth.height()) + " does not match intrinsics");
  }
  PointCloud cloud;
  const Eigen::Index n_valid =
      (depth.meters > 0.0 && depth.meters <= max_range && depth.meters.isFinite()).count();
  cloud.points.resize(3, n_valid);
  cloud.pixel_index.reserve(static_cast<std::size_t>(n_valid));

  Eigen::Index next = 0;
  for (Eigen::Index v = 0; v < depth.height(); ++v) {
    for (Eigen::Index u = 0; u < depth.width(); ++u) {
      const double z = depth.meters(v, u);
      if (!depth_valid(z, max_range)) continue;
      cloud.points.col(next++) = Eigen::Vector3d((u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z);
      cloud.pixel_index.push_back(pixel_index(v, u, depth.width()));
    }
  }
  return cloud;
}

PointCloud transform_to_world(const PointCloud& cloud, const Pose& pose) {
  pose.validate();
  PointCloud out;
  out.points = (pose.rotation.toRotationMatrix() * cloud.points).colwise() + pose.translation;
  out.pixel_index = cloud.pixel_index;
  return out;
}

}  // namespace n2f
