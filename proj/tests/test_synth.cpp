#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "n2f/io/png_io.hpp"
#include "n2f/labels/label_generation.hpp"
#include "n2f/plane/ground_plane.hpp"
#include "n2f/synth/synth_world.hpp"
#include "test_util.hpp"

using namespace n2f;

namespace {

SceneSpec ground_only_scene(double pitch_deg, int frames = 1) {
  SceneSpec spec;
  spec.rng_seed = 0;
  spec.intrinsics = {120.0, 120.0, 80.0, 60.0, 160, 120};
  spec.ground = {{0.32, 0.40, 0.28}, 0.0};
  spec.sky = {{0.70, 0.82, 0.95}, 0.0};
  spec.depth_model = {15.0, 0.0, 0.0};  // uncorrupted
  for (int i = 0; i < frames; ++i) {
    spec.camera_path.push_back(
        forward_facing_pose({0.2 * i, 0.0, 1.0}, pitch_deg * M_PI / 180.0));
  }
  return spec;
}

// Closed-form z-depth of the ground hit for a pixel, or infinity above the
// horizon. Independent of the renderer: plain ray-plane intersection.
double ground_depth_oracle(const SceneSpec& spec, int frame, Eigen::Index v, Eigen::Index u) {
  const Pose& pose = spec.camera_path[static_cast<std::size_t>(frame)];
  const Eigen::Matrix3d rot = pose.rotation.toRotationMatrix();
  const Eigen::Vector3d dir =
      rot * Eigen::Vector3d((u - spec.intrinsics.cx) / spec.intrinsics.fx,
                            (v - spec.intrinsics.cy) / spec.intrinsics.fy, 1.0);
  if (dir.z() >= -1e-12) return std::numeric_limits<double>::infinity();
  return -pose.translation.z() / dir.z();
}

}  // namespace

TEST_CASE("45-degree camera sees the ground at sqrt(2) on the optical axis") {
  const SceneSpec spec = ground_only_scene(45.0);
  const SynthFrame frame = render_frame(spec, 0);
  CHECK(frame.depth.meters(60, 80) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK(frame.gt.at(60, 80) == Label::FreeSpace);
}

TEST_CASE("every ground pixel matches the closed-form ray-plane oracle") {
  const SceneSpec spec = ground_only_scene(20.0);
  const SynthFrame frame = render_frame(spec, 0);
  for (Eigen::Index v = 0; v < 120; ++v) {
    for (Eigen::Index u = 0; u < 160; ++u) {
      const double truth = ground_depth_oracle(spec, 0, v, u);
      if (std::isinf(truth)) {
        CHECK(frame.gt.at(v, u) == Label::Unknown);  // sky
        CHECK(frame.depth.meters(v, u) == 0.0);
      } else {
        CHECK(frame.gt.at(v, u) == Label::FreeSpace);
        if (truth > spec.depth_model.max_valid_range) {
          CHECK(frame.depth.meters(v, u) == 0.0);  // beyond range: invalid
        } else {
          CHECK(frame.depth.meters(v, u) == doctest::Approx(truth).epsilon(1e-9));
        }
      }
    }
  }
  // The scene actually exercises both sides of the validity cutoff.
  CHECK((frame.depth.meters > 0.0).any());
  bool has_far_ground = false;
  for (Eigen::Index v = 0; v < 120 && !has_far_ground; ++v) {
    for (Eigen::Index u = 0; u < 160; ++u) {
      const double t = ground_depth_oracle(spec, 0, v, u);
      if (std::isfinite(t) && t > 15.0) {
        has_far_ground = true;
        break;
      }
    }
  }
  CHECK(has_far_ground);
}

TEST_CASE("boxes win the nearest-hit contest and are labeled Obstacle") {
  SceneSpec spec = ground_only_scene(20.0);
  BoxObstacle box;
  box.center = {3.0, 0.0, 0.5};
  box.size = {1.0, 1.0, 1.0};
  box.appearance = {{0.85, 0.18, 0.12}, 0.0};
  spec.obstacles.push_back(box);

  const SynthFrame with_box = render_frame(spec, 0);
  const SynthFrame without_box = render_frame(ground_only_scene(20.0), 0);

  int obstacle_pixels = 0;
  for (Eigen::Index v = 0; v < 120; ++v) {
    for (Eigen::Index u = 0; u < 160; ++u) {
      if (with_box.gt.at(v, u) == Label::Obstacle) {
        ++obstacle_pixels;
        // The box hit must be nearer than whatever was behind it.
        if (without_box.depth.meters(v, u) > 0.0 && with_box.depth.meters(v, u) > 0.0) {
          CHECK(with_box.depth.meters(v, u) <= without_box.depth.meters(v, u) + 1e-12);
        }
        // Box appearance, not ground appearance.
        CHECK(with_box.rgb.r(v, u) == doctest::Approx(0.85));
      }
    }
  }
  CHECK(obstacle_pixels > 50);
}

TEST_CASE("ground truth ignores depth corruption entirely") {
  SceneSpec clean = ground_only_scene(20.0);
  BoxObstacle box;
  box.center = {4.0, 0.5, 0.6};
  box.size = {1.2, 1.2, 1.2};
  box.appearance = {{0.85, 0.18, 0.12}, 0.05};
  clean.obstacles.push_back(box);

  SceneSpec corrupted = clean;
  corrupted.depth_model = {15.0, 0.2, 0.6};  // heavy noise and dropout

  const SynthFrame a = render_frame(clean, 0);
  const SynthFrame b = render_frame(corrupted, 0);
  CHECK((a.gt.values == b.gt.values).all());
}

TEST_CASE("identical seeds render identical frames") {
  const SceneSpec spec = make_shift_sequence(7);
  const SynthFrame a = render_frame(spec, 42);
  const SynthFrame b = render_frame(spec, 42);
  CHECK((a.rgb.r == b.rgb.r).all());
  CHECK((a.rgb.g == b.rgb.g).all());
  CHECK((a.rgb.b == b.rgb.b).all());
  CHECK((a.depth.meters == b.depth.meters).all());
  CHECK((a.gt.values == b.gt.values).all());

  const SceneSpec other = make_shift_sequence(8);
  const SynthFrame c = render_frame(other, 42);
  CHECK_FALSE((a.rgb.r == c.rgb.r).all());
}

TEST_CASE("shift benchmark timeline") {
  const SceneSpec spec = make_shift_sequence(7);
  REQUIRE(spec.camera_path.size() == 200);

  // Family B is exactly the set of boxes spawning at frame 100.
  SceneSpec without_b = spec;
  without_b.obstacles.clear();
  int b_count = 0;
  for (const BoxObstacle& box : spec.obstacles) {
    if (box.spawn_frame == 0) without_b.obstacles.push_back(box);
    else ++b_count;
  }
  REQUIRE(b_count >= 3);

  SUBCASE("frame 50 contains no family-B pixels") {
    const SynthFrame full = render_frame(spec, 50);
    const SynthFrame reduced = render_frame(without_b, 50);
    CHECK((full.gt.values == reduced.gt.values).all());
    CHECK((full.rgb.r == reduced.rgb.r).all());
    CHECK((full.depth.meters == reduced.depth.meters).all());
  }

  SUBCASE("family B spawns beyond the valid depth range") {
    const Pose& pose = spec.camera_path[100];
    const Eigen::Matrix3d rot = pose.rotation.toRotationMatrix();
    const Eigen::Vector3d z_cam = rot.col(2);
    for (const BoxObstacle& box : spec.obstacles) {
      if (box.spawn_frame == 0) continue;
      double min_depth = std::numeric_limits<double>::infinity();
      for (int corner = 0; corner < 8; ++corner) {
        const Eigen::Vector3d offset(((corner & 1) ? 0.5 : -0.5) * box.size.x(),
                                     ((corner & 2) ? 0.5 : -0.5) * box.size.y(),
                                     ((corner & 4) ? 0.5 : -0.5) * box.size.z());
        const Eigen::Vector3d p = box.center + offset;
        min_depth = std::min(min_depth, (p - pose.translation).dot(z_cam));
      }
      CHECK(min_depth > spec.depth_model.max_valid_range);
    }
  }

  SUBCASE("frame 150 has family-B geometry inside and beyond the valid range") {
    const Pose& pose = spec.camera_path[150];
    const Eigen::Matrix3d rot = pose.rotation.toRotationMatrix();
    const Eigen::Vector3d z_cam = rot.col(2);
    bool some_inside = false;
    bool some_beyond = false;
    for (const BoxObstacle& box : spec.obstacles) {
      if (box.spawn_frame == 0) continue;
      double min_depth = std::numeric_limits<double>::infinity();
      for (int corner = 0; corner < 8; ++corner) {
        const Eigen::Vector3d offset(((corner & 1) ? 0.5 : -0.5) * box.size.x(),
                                     ((corner & 2) ? 0.5 : -0.5) * box.size.y(),
                                     ((corner & 4) ? 0.5 : -0.5) * box.size.z());
        min_depth =
            std::min(min_depth, (box.center + offset - pose.translation).dot(z_cam));
      }
      if (min_depth < spec.depth_model.max_valid_range) some_inside = true;
      if (min_depth > spec.depth_model.max_valid_range) some_beyond = true;
    }
    CHECK(some_inside);
    CHECK(some_beyond);

    // And the rendered frame differs from the B-less render at frame 150.
    const SynthFrame full = render_frame(spec, 150);
    const SynthFrame reduced = render_frame(without_b, 150);
    CHECK_FALSE((full.gt.values == reduced.gt.values).all());
  }
}

TEST_CASE("geometric labels on uncorrupted depth reproduce the ground truth") {
  // Boxes lifted above the h_obstacle threshold, so the threshold rule and
  // the renderer agree on every valid pixel.
  SceneSpec spec = ground_only_scene(20.0, 5);
  for (int i = 0; i < 3; ++i) {
    BoxObstacle box;
    box.size = {1.0 + 0.2 * i, 1.0, 1.2};
    box.center = {3.0 + 2.0 * i, (i % 2 ? 1.2 : -1.0), 0.2 + 0.5 * box.size.z()};
    box.appearance = {{0.85, 0.18, 0.12}, 0.0};
    spec.obstacles.push_back(box);
  }
  spec.validate();

  RansacConfig ransac;
  ransac.min_inliers = 500;
  const LabelingConfig labeling{0.15, 15.0};

  for (int frame_index = 0; frame_index < 5; ++frame_index) {
    const SynthFrame frame = render_frame(spec, frame_index);
    const PointCloud cloud = backproject_image(frame.depth, spec.intrinsics, 15.0);
    const Eigen::Vector3d up = frame.pose.rotation.conjugate() * Eigen::Vector3d::UnitZ();
    const auto plane = fit_plane_ransac(cloud, up, ransac);
    REQUIRE(plane.has_value());
    const LabelMap labels = generate_labels(frame.depth, spec.intrinsics, *plane, labeling);

    int mismatches = 0;
    for (Eigen::Index v = 0; v < 120; ++v) {
      for (Eigen::Index u = 0; u < 160; ++u) {
        if (labels.at(v, u) == Label::Unknown) continue;  // no valid depth
        if (labels.at(v, u) != frame.gt.at(v, u)) ++mismatches;
      }
    }
    CHECK(mismatches == 0);
  }
}

TEST_CASE("export writes the documented layout and probes back exactly") {
  n2f_test::TempDir tmp("n2f-synth");
  SceneSpec spec = ground_only_scene(20.0, 3);
  BoxObstacle box;
  box.center = {3.0, 0.0, 0.5};
  box.size = {1.0, 1.0, 1.0};
  box.appearance = {{0.85, 0.18, 0.12}, 0.0};
  spec.obstacles.push_back(box);
  spec.depth_model = {15.0, 0.01, 0.05};
  spec.rng_seed = 3;

  export_sequence(spec, tmp.str());

  namespace fs = std::filesystem;
  for (const char* sub : {"rgb", "depth", "gt"}) {
    int count = 0;
    for (const auto& e : fs::directory_iterator(tmp.path() / sub)) {
      CHECK(e.path().extension() == ".png");
      ++count;
    }
    CHECK(count == 3);
  }
  CHECK(fs::exists(tmp.path() / "poses.txt"));
  CHECK(fs::exists(tmp.path() / "intrinsics.txt"));
  CHECK(fs::exists(tmp.path() / "scene.json"));

  // Depth PNG value = round(meters * 1000) at probed pixels.
  const SynthFrame frame = render_frame(spec, 1);
  const ImageX16 depth_png = read_png_gray16(tmp.str("depth/0001.png"));
  for (Eigen::Index v = 20; v < 120; v += 31) {
    for (Eigen::Index u = 5; u < 160; u += 37) {
      CHECK(depth_png(v, u) ==
            static_cast<std::uint16_t>(std::lround(frame.depth.meters(v, u) * 1000.0)));
    }
  }

  // GT PNG uses the label encoding directly.
  const ImageX8 gt_png = read_png_gray8(tmp.str("gt/0001.png"));
  CHECK((gt_png == frame.gt.values).all());

  // Scene config round trip preserves the spec.
  const SceneSpec loaded = load_scene(tmp.str("scene.json"));
  CHECK(loaded.rng_seed == spec.rng_seed);
  CHECK(loaded.obstacles.size() == spec.obstacles.size());
  CHECK(loaded.camera_path.size() == spec.camera_path.size());
  CHECK(loaded.intrinsics.fx == spec.intrinsics.fx);
  CHECK(loaded.ground.base_color.isApprox(spec.ground.base_color, 0.0));
  const SynthFrame reloaded = render_frame(loaded, 1);
  CHECK((reloaded.depth.meters == frame.depth.meters).all());
  CHECK((reloaded.rgb.r == frame.rgb.r).all());
}

TEST_CASE("scene validation rejects malformed specs") {
  SceneSpec spec = ground_only_scene(20.0);
  spec.obstacles.push_back({{1.0, 0.0, 0.1}, {1.0, 1.0, 1.0}, {}, 0});  // digs into ground
  CHECK_THROWS_AS(spec.validate(), InvalidInputError);

  SceneSpec no_path = ground_only_scene(20.0);
  no_path.camera_path.clear();
  CHECK_THROWS_AS(no_path.validate(), InvalidInputError);

  SceneSpec below = ground_only_scene(20.0);
  below.camera_path[0].translation.z() = -1.0;
  CHECK_THROWS_AS(below.validate(), InvalidInputError);

  SceneSpec out_of_path = ground_only_scene(20.0);
  CHECK_THROWS_AS(render_frame(out_of_path, 5), InvalidInputError);
}
