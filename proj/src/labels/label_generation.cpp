#include "n2f/labels/label_generation.hpp"

#include "n2f/core/error.hpp"

namespace n2f {

LabelMap generate_labels(const DepthImage& depth, const CameraIntrinsics& k, const Plane& plane,
                         const LabelingConfig& cfg) {
  if (depth.height() != k.height || depth.width() != k.width) {
    throw InvalidInputError("generate_labels: depth size does not match intrinsics");
  }
  if (!(cfg.h_obstacle > 0.0)) {
    throw InvalidInputError("generate_labels: h_obstacle must be positive");
  }

  LabelMap map = LabelMap::unknown(depth.height(), depth.width());
  for (Eigen::Index v = 0; v < depth.height(); ++v) {
    for (Eigen::Index u = 0; u < depth.width(); ++u) {
      const double z = depth.meters(v, u);
      if (!depth_valid(z, cfg.max_range)) continue;
      const Eigen::Vector3d p((u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z);
      map.set(v, u, signed_height(plane, p) >= cfg.h_obstacle ? Label::Obstacle
                                                              : Label::FreeSpace);
    }
  }
  return map;
}

LabelHistogram label_histogram(const LabelMap& map) {
  LabelHistogram h;
  const auto* data = map.values.data();
  const Eigen::Index n = map.values.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    switch (static_cast<Label>(data[i])) {
      case Label::FreeSpace: ++h.free_space; break;
      case Label::Obstacle: ++h.obstacle; break;
      default: ++h.unknown; break;
    }
  }
  return h;
}

}  // namespace n2f
