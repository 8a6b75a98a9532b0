#include "n2f/plane/ground_plane.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

#include "n2f/core/error.hpp"
#include "n2f/core/rng.hpp"

namespace n2f {

namespace {

Eigen::ArrayXd plane_distances(const Eigen::Vector3d& normal, double offset,
                               const Eigen::Matrix3Xd& points) {
  return ((normal.transpose() * points).array() + offset).abs();
}

}  // namespace

Plane refine_plane_lsq(const Eigen::Matrix3Xd& points, const Eigen::Vector3d& up_hint) {
  if (points.cols() < 3) {
    throw DegenerateGeometryError("refine_plane_lsq: need at least 3 points");
  }
  const Eigen::Vector3d centroid = points.rowwise().mean();
  const Eigen::Matrix3Xd centered = points.colwise() - centroid;
  const Eigen::Matrix3d cov = centered * centered.transpose();

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  const Eigen::Vector3d evals = solver.eigenvalues();  // ascending
  // A plane needs spread in two directions: the mid eigenvalue must carry
  // mass relative to the largest.
  if (!(evals(2) > 0.0) || evals(1) <= 1e-12 * evals(2)) {
    throw DegenerateGeometryError("refine_plane_lsq: points are collinear");
  }

  Plane plane;
  plane.normal = solver.eigenvectors().col(0);
  if (plane.normal.dot(up_hint) < 0.0) plane.normal = -plane.normal;
  plane.offset = -plane.normal.dot(centroid);
  plane.inlier_count = static_cast<int>(points.cols());
  plane.inlier_rms = std::sqrt(
      plane_distances(plane.normal, plane.offset, points).square().mean());
  return plane;
}

std::optional<Plane> fit_plane_ransac(const PointCloud& cloud, const Eigen::Vector3d& up_hint,
                                      const RansacConfig& cfg) {
  if (cfg.iterations < 1 || !(cfg.inlier_tau > 0.0) || !(cfg.normal_cone_deg > 0.0) ||
      cfg.normal_cone_deg > 90.0) {
    throw InvalidInputError("fit_plane_ransac: invalid configuration");
  }
  const Eigen::Index n = cloud.size();
  if (n < 3) return std::nullopt;

  const Eigen::Vector3d up = up_hint.normalized();
  const double cos_min = std::cos(cfg.normal_cone_deg * M_PI / 180.0);

  SeededRng rng(cfg.rng_seed);
  Eigen::Index best_count = 0;
  Eigen::Vector3d best_normal = Eigen::Vector3d::Zero();
  double best_offset = 0.0;

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const auto pick = rng.sample_without_replacement(static_cast<std::size_t>(n), 3);
    const Eigen::Vector3d p0 = cloud.points.col(static_cast<Eigen::Index>(pick[0]));
    const Eigen::Vector3d a = cloud.points.col(static_cast<Eigen::Index>(pick[1])) - p0;
    const Eigen::Vector3d b = cloud.points.col(static_cast<Eigen::Index>(pick[2])) - p0;

    Eigen::Vector3d normal = a.cross(b);
    const double norm = normal.norm();
    if (norm <= 1e-12 * a.norm() * b.norm()) continue;  // degenerate sample
    normal /= norm;
    if (normal.dot(up) < 0.0) normal = -normal;
    if (normal.dot(up) < cos_min) continue;  // not ground-like, e.g. a wall

    const double offset = -normal.dot(p0);
    const Eigen::Index count =
        (plane_distances(normal, offset, cloud.points) <= cfg.inlier_tau).count();
    if (count > best_count) {  // ties keep the earliest hypothesis
      best_count = count;
      best_normal = normal;
      best_offset = offset;
    }
  }

  if (best_count < std::max<Eigen::Index>(3, cfg.min_inliers)) return std::nullopt;

  // Least-squares refinement on the consensus set.
  Eigen::Matrix3Xd inliers(3, best_count);
  const Eigen::ArrayXd dist = plane_distances(best_normal, best_offset, cloud.points);
  Eigen::Index next = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (dist(i) <= cfg.inlier_tau) inliers.col(next++) = cloud.points.col(i);
  }

  Plane plane;
  try {
    plane = refine_plane_lsq(inliers, up);
  } catch (const DegenerateGeometryError&) {
    return std::nullopt;
  }

  // Report inlier statistics against the refined plane.
  const Eigen::ArrayXd refined = plane_distances(plane.normal, plane.offset, cloud.points);
  plane.inlier_count = static_cast<int>((refined <= cfg.inlier_tau).count());
  double sq_sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (refined(i) <= cfg.inlier_tau) sq_sum += refined(i) * refined(i);
  }
  plane.inlier_rms = plane.inlier_count > 0 ? std::sqrt(sq_sum / plane.inlier_count) : 0.0;
  if (plane.inlier_count < std::max(3, cfg.min_inliers)) return std::nullopt;
  return plane;
}

}  // namespace n2f
