#include <doctest.h>

#include <Eigen/Geometry>
#include <cmath>

#include "n2f/camera/geometry.hpp"
#include "n2f/core/error.hpp"
#include "n2f/core/rng.hpp"

using namespace n2f;

namespace {

// Wide camera for the single-pixel examples, frame-sized camera for images.
const CameraIntrinsics kTestK{100.0, 100.0, 80.0, 60.0, 320, 240};
const CameraIntrinsics kFrameK{100.0, 100.0, 80.0, 60.0, 160, 120};

// Forward pinhole projection, the test-side inverse of backproject_pixel.
std::pair<double, double> project(const Eigen::Vector3d& p, const CameraIntrinsics& k) {
  return {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
}

// Independent quaternion rotation: explicit matrix from components.
Eigen::Vector3d rotate_oracle(const Eigen::Quaterniond& q, const Eigen::Vector3d& p) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
      2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
      2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y);
  return r * p;
}

DepthImage make_depth(Eigen::Index h, Eigen::Index w, double value = 0.0) {
  DepthImage d;
  d.meters = ImageXd::Constant(h, w, value);
  return d;
}

}  // namespace

TEST_CASE("backproject_pixel matches the pinhole formula") {
  CHECK(backproject_pixel(80, 60, 2.0, kTestK).isApprox(Eigen::Vector3d(0, 0, 2), 1e-15));
  CHECK(backproject_pixel(180, 60, 2.0, kTestK).isApprox(Eigen::Vector3d(2, 0, 2), 1e-15));
  CHECK(backproject_pixel(80, 160, 0.5, kTestK).isApprox(Eigen::Vector3d(0, 0.5, 0.5), 1e-15));
}

TEST_CASE("backproject_pixel rejects bad input") {
  CHECK_THROWS_AS(backproject_pixel(80, 60, 0.0, kTestK), InvalidInputError);
  CHECK_THROWS_AS(backproject_pixel(80, 60, -1.0, kTestK), InvalidInputError);
  CHECK_THROWS_AS(backproject_pixel(80, 60, std::nan(""), kTestK), InvalidInputError);
  CHECK_THROWS_AS(backproject_pixel(-1, 60, 1.0, kTestK), InvalidInputError);
  CHECK_THROWS_AS(backproject_pixel(80, 240, 1.0, kTestK), InvalidInputError);
}

TEST_CASE("projection round trip holds to 1e-9 pixels") {
  SeededRng rng(41);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform(0.0, kTestK.width - 1e-9);
    const double v = rng.uniform(0.0, kTestK.height - 1e-9);
    const double z = rng.uniform(0.05, 50.0);
    const auto [pu, pv] = project(backproject_pixel(u, v, z, kTestK), kTestK);
    CHECK(std::abs(pu - u) < 1e-9);
    CHECK(std::abs(pv - v) < 1e-9);
  }
}

TEST_CASE("backproject_image keeps exactly the valid pixels") {
  SUBCASE("all-invalid depth gives an empty cloud") {
    const PointCloud cloud = backproject_image(make_depth(120, 160), kFrameK, 15.0);
    CHECK(cloud.size() == 0);
    CHECK(cloud.pixel_index.empty());
  }

  SUBCASE("single valid pixel at the principal point") {
    DepthImage d = make_depth(120, 160);
    d.meters(60, 80) = 1.0;
    const PointCloud cloud = backproject_image(d, kFrameK, 15.0);
    REQUIRE(cloud.size() == 1);
    CHECK(cloud.points.col(0).isApprox(Eigen::Vector3d(0, 0, 1), 1e-15));
    CHECK(cloud.pixel_index[0] == 60 * 160 + 80);
  }

  SUBCASE("point count equals an independent valid-pixel count") {
    SeededRng rng(7);
    DepthImage d = make_depth(120, 160);
    for (Eigen::Index v = 0; v < d.height(); ++v) {
      for (Eigen::Index u = 0; u < d.width(); ++u) {
        const double r = rng.uniform01();
        if (r < 0.3) d.meters(v, u) = 0.0;                            // invalid
        else if (r < 0.4) d.meters(v, u) = rng.uniform(15.001, 60.0);  // out of range
        else d.meters(v, u) = rng.uniform(0.1, 15.0);
      }
    }
    // Oracle: plain scalar re-count.
    Eigen::Index expected = 0;
    for (Eigen::Index v = 0; v < d.height(); ++v) {
      for (Eigen::Index u = 0; u < d.width(); ++u) {
        const double z = d.meters(v, u);
        if (z > 0.0 && z <= 15.0) ++expected;
      }
    }
    const PointCloud cloud = backproject_image(d, kFrameK, 15.0);
    CHECK(cloud.size() == expected);
    CHECK(static_cast<Eigen::Index>(cloud.pixel_index.size()) == expected);
  }

  SUBCASE("dimension mismatch is rejected") {
    CHECK_THROWS_AS(backproject_image(make_depth(60, 80, 1.0), kFrameK, 15.0), InvalidInputError);
  }
}

TEST_CASE("transform_to_world applies R p + t") {
  PointCloud cloud;
  cloud.points.resize(3, 2);
  cloud.points.col(0) = Eigen::Vector3d(0, 0, 2);
  cloud.points.col(1) = Eigen::Vector3d(1, -1, 3);
  cloud.pixel_index = {0, 1};

  SUBCASE("identity pose") {
    const PointCloud out = transform_to_world(cloud, Pose{});
    CHECK(out.points.isApprox(cloud.points, 1e-15));
    CHECK(out.pixel_index == cloud.pixel_index);
  }

  SUBCASE("pure translation") {
    Pose pose;
    pose.translation = {0, 0, 1};
    const PointCloud out = transform_to_world(cloud, pose);
    CHECK(out.points.col(0).isApprox(Eigen::Vector3d(0, 0, 3), 1e-15));
  }

  SUBCASE("90 degree rotation about x") {
    PointCloud single;
    single.points.resize(3, 1);
    single.points.col(0) = Eigen::Vector3d(0, 0, 1);
    single.pixel_index = {0};
    Pose pose;
    pose.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(M_PI / 2, Eigen::Vector3d::UnitX()));
    const PointCloud out = transform_to_world(single, pose);
    CHECK(out.points.col(0).isApprox(Eigen::Vector3d(0, -1, 0), 1e-12));
    CHECK(out.points.col(0).isApprox(rotate_oracle(pose.rotation, single.points.col(0)), 1e-12));
  }

  SUBCASE("random rotations match the quaternion oracle") {
    SeededRng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      Pose pose;
      pose.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(
          rng.uniform(-M_PI, M_PI),
          Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized()));
      pose.translation = {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
      const PointCloud out = transform_to_world(cloud, pose);
      for (Eigen::Index i = 0; i < cloud.size(); ++i) {
        const Eigen::Vector3d expect =
            rotate_oracle(pose.rotation, cloud.points.col(i)) + pose.translation;
        CHECK(out.points.col(i).isApprox(expect, 1e-12));
      }
    }
  }

  SUBCASE("non-unit quaternion is rejected") {
    Pose pose;
    pose.rotation = Eigen::Quaterniond(1.0, 0.1, 0.0, 0.0);  // |q| != 1
    CHECK_THROWS_AS(transform_to_world(cloud, pose), InvalidInputError);
  }
}

TEST_CASE("rigid transforms preserve pairwise distances") {
  SeededRng rng(11);
  PointCloud cloud;
  cloud.points.resize(3, 40);
  for (Eigen::Index i = 0; i < cloud.points.cols(); ++i) {
    cloud.points.col(i) =
        Eigen::Vector3d(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
  }
  cloud.pixel_index.assign(40, 0);

  for (int trial = 0; trial < 20; ++trial) {
    Pose pose;
    pose.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(
        rng.uniform(-M_PI, M_PI),
        Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized()));
    pose.translation = {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
    const PointCloud out = transform_to_world(cloud, pose);
    for (Eigen::Index a = 0; a < cloud.size(); a += 7) {
      for (Eigen::Index b = a + 1; b < cloud.size(); b += 5) {
        const double before = (cloud.points.col(a) - cloud.points.col(b)).norm();
        const double after = (out.points.col(a) - out.points.col(b)).norm();
        CHECK(std::abs(before - after) < 1e-9);
      }
    }
  }
}

TEST_CASE("intrinsics validation") {
  CameraIntrinsics bad = kTestK;
  bad.fx = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidInputError);
  bad = kTestK;
  bad.cx = 400.0;
  CHECK_THROWS_AS(bad.validate(), InvalidInputError);
  CHECK_NOTHROW(kTestK.validate());
}
