#include "n2f/synth/synth_world.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "n2f/core/error.hpp"
#include "n2f/core/rng.hpp"
#include "n2f/io/png_io.hpp"
#include "n2f/io/sequence_io.hpp"

namespace n2f {

namespace {

using nlohmann::json;

constexpr double kRayEps = 1e-9;

struct Hit {
  double t = std::numeric_limits<double>::infinity();  // z-depth along the optical axis
  int material = -1;  // -1 none, 0 ground, >= 1 obstacle index + 1
};

// Slab test against an axis-aligned box; returns the entry distance in units
// of the (unnormalized) ray direction.
bool intersect_box(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                   const BoxObstacle& box, double* t_enter) {
  double t0 = kRayEps;
  double t1 = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    const double lo = box.center(axis) - 0.5 * box.size(axis);
    const double hi = box.center(axis) + 0.5 * box.size(axis);
    if (std::abs(dir(axis)) < 1e-15) {
      if (origin(axis) < lo || origin(axis) > hi) return false;
      continue;
    }
    double ta = (lo - origin(axis)) / dir(axis);
    double tb = (hi - origin(axis)) / dir(axis);
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  *t_enter = t0;
  return true;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

void SceneSpec::validate() const {
  intrinsics.validate();
  if (camera_path.empty()) throw InvalidInputError("scene: camera path is empty");
  for (const Pose& pose : camera_path) {
    pose.validate();
    if (!(pose.translation.z() > 0.0)) {
      throw InvalidInputError("scene: camera height must be above the ground plane");
    }
  }
  for (const BoxObstacle& box : obstacles) {
    if (!(box.size.minCoeff() > 0.0)) throw InvalidInputError("scene: box size must be positive");
    if (box.center.z() - 0.5 * box.size.z() < -1e-9) {
      throw InvalidInputError("scene: boxes must not extend below the ground");
    }
  }
  if (!(depth_model.max_valid_range > 0.0)) {
    throw InvalidInputError("scene: max_valid_range must be positive");
  }
  if (depth_model.dropout_prob < 0.0 || depth_model.dropout_prob >= 1.0 ||
      depth_model.noise_rel < 0.0) {
    throw InvalidInputError("scene: invalid depth noise model");
  }
}

Pose forward_facing_pose(const Eigen::Vector3d& position, double pitch_rad) {
  const double c = std::cos(pitch_rad);
  const double s = std::sin(pitch_rad);
  Eigen::Matrix3d rot;
  // Columns: camera x (right), y (down), z (forward) expressed in world axes.
  rot.col(0) = Eigen::Vector3d(0.0, -1.0, 0.0);
  rot.col(1) = Eigen::Vector3d(-s, 0.0, -c);
  rot.col(2) = Eigen::Vector3d(c, 0.0, -s);
  Pose pose;
  pose.rotation = Eigen::Quaterniond(rot).normalized();
  pose.translation = position;
  return pose;
}

SynthFrame render_frame(const SceneSpec& spec, int frame_index) {
  spec.validate();
  if (frame_index < 0 || frame_index >= static_cast<int>(spec.camera_path.size())) {
    throw InvalidInputError("render_frame: frame index outside camera path");
  }

  const CameraIntrinsics& k = spec.intrinsics;
  const Pose& pose = spec.camera_path[static_cast<std::size_t>(frame_index)];
  const Eigen::Matrix3d rot = pose.rotation.toRotationMatrix();
  const Eigen::Vector3d origin = pose.translation;

  std::vector<const BoxObstacle*> active;
  for (const BoxObstacle& box : spec.obstacles) {
    if (box.spawn_frame <= frame_index) active.push_back(&box);
  }

  SynthFrame frame;
  frame.pose = pose;
  frame.rgb.r.resize(k.height, k.width);
  frame.rgb.g.resize(k.height, k.width);
  frame.rgb.b.resize(k.height, k.width);
  frame.depth.meters = ImageXd::Zero(k.height, k.width);
  frame.gt = LabelMap::unknown(k.height, k.width);

  SeededRng rgb_rng(SeededRng::mix(SeededRng::mix(spec.rng_seed, frame_index), 0xc01u));
  SeededRng depth_rng(SeededRng::mix(SeededRng::mix(spec.rng_seed, frame_index), 0xd42u));

  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      // Direction with unit z in the camera frame, so the ray parameter in
      // world units equals the z-depth convention used everywhere else.
      const Eigen::Vector3d dir_cam((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
      const Eigen::Vector3d dir = rot * dir_cam;

      Hit hit;
      if (dir.z() < -1e-15) {
        const double t = -origin.z() / dir.z();
        if (t > kRayEps) hit = {t, 0};
      }
      for (std::size_t i = 0; i < active.size(); ++i) {
        double t = 0.0;
        if (intersect_box(origin, dir, *active[i], &t) && t < hit.t) {
          hit = {t, static_cast<int>(i) + 1};
        }
      }

      const AppearanceModel* appearance = &spec.sky;
      if (hit.material == 0) {
        appearance = &spec.ground;
        frame.gt.set(v, u, Label::FreeSpace);
      } else if (hit.material > 0) {
        appearance = &active[static_cast<std::size_t>(hit.material - 1)]->appearance;
        frame.gt.set(v, u, Label::Obstacle);
      }

      frame.rgb.r(v, u) =
          clamp01(appearance->base_color(0) + appearance->noise_sigma * rgb_rng.normal());
      frame.rgb.g(v, u) =
          clamp01(appearance->base_color(1) + appearance->noise_sigma * rgb_rng.normal());
      frame.rgb.b(v, u) =
          clamp01(appearance->base_color(2) + appearance->noise_sigma * rgb_rng.normal());

      if (hit.material >= 0 && hit.t <= spec.depth_model.max_valid_range) {
        double depth = hit.t * (1.0 + spec.depth_model.noise_rel * depth_rng.normal());
        depth = std::max(depth, 1e-3);
        if (depth_rng.uniform01() < spec.depth_model.dropout_prob) depth = 0.0;
        frame.depth.meters(v, u) = depth;
      }
    }
  }
  return frame;
}

namespace {

AppearanceModel jittered(const Eigen::Vector3d& base, double sigma, SeededRng& rng) {
  AppearanceModel m;
  for (int c = 0; c < 3; ++c) m.base_color(c) = clamp01(base(c) + rng.uniform(-0.04, 0.04));
  m.noise_sigma = sigma;
  return m;
}

const Eigen::Vector3d kGroundColor(0.32, 0.40, 0.28);
const Eigen::Vector3d kSkyColor(0.70, 0.82, 0.95);
const Eigen::Vector3d kFamilyA(0.85, 0.18, 0.12);
const Eigen::Vector3d kFamilyB(0.15, 0.55, 0.95);

SceneSpec scene_base(std::uint64_t seed, int frames) {
  SceneSpec spec;
  spec.rng_seed = seed;
  spec.intrinsics = {120.0, 120.0, 80.0, 60.0, 160, 120};
  spec.ground = {kGroundColor, 0.05};
  spec.sky = {kSkyColor, 0.02};
  spec.depth_model = {15.0, 0.01, 0.05};
  const double pitch = 20.0 * M_PI / 180.0;
  spec.camera_path.reserve(static_cast<std::size_t>(frames));
  for (int i = 0; i < frames; ++i) {
    spec.camera_path.push_back(forward_facing_pose({0.15 * i, 0.0, 1.0}, pitch));
  }
  return spec;
}

BoxObstacle make_box(double x, double side, const Eigen::Vector3d& family, int spawn,
                     double min_extent, double max_extent, SeededRng& rng) {
  BoxObstacle box;
  const double sx = rng.uniform(min_extent, max_extent);
  const double sy = rng.uniform(min_extent, max_extent);
  const double sz = rng.uniform(min_extent, max_extent);
  const double lateral = side * (1.0 + 0.5 * sy + rng.uniform(0.0, 1.4));
  box.center = Eigen::Vector3d(x + rng.uniform(-0.8, 0.8), lateral, 0.5 * sz);
  box.size = Eigen::Vector3d(sx, sy, sz);
  box.appearance = jittered(family, 0.05, rng);
  box.spawn_frame = spawn;
  return box;
}

}  // namespace

SceneSpec make_shift_sequence(std::uint64_t seed) {
  SceneSpec spec = scene_base(seed, 200);
  SeededRng layout(SeededRng::mix(seed, 0x5c3ull));

  // Family A along the whole path so near-range supervision always sees both
  // classes and the window keeps rehearsing the old appearance.
  for (int i = 0; i < 15; ++i) {
    const double x = 4.0 + 3.5 * i;
    const double side = (i % 2 == 0) ? 1.0 : -1.0;
    spec.obstacles.push_back(make_box(x, side, kFamilyA, 0, 0.5, 1.4, layout));
  }
  // Family B spawns at frame 100, entirely beyond the valid depth range at
  // that moment (camera x = 15.0), and is approached through the near range.
  for (int i = 0; i < 5; ++i) {
    const double x = 33.5 + 3.5 * i;
    const double side = (i % 2 == 0) ? -1.0 : 1.0;
    spec.obstacles.push_back(make_box(x, side, kFamilyB, 100, 1.6, 2.4, layout));
  }
  return spec;
}

SceneSpec make_pretrain_sequence(std::uint64_t seed) {
  SceneSpec spec = scene_base(seed, 100);
  SeededRng layout(SeededRng::mix(seed, 0x97eull));
  for (int i = 0; i < 12; ++i) {
    const double x = 3.0 + layout.uniform(0.0, 25.0);
    const double side = (layout.uniform01() < 0.5) ? 1.0 : -1.0;
    spec.obstacles.push_back(make_box(x, side, kFamilyA, 0, 0.5, 1.6, layout));
  }
  return spec;
}

void export_sequence(const SceneSpec& spec, const std::string& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "rgb", ec);
  fs::create_directories(fs::path(out_dir) / "depth", ec);
  fs::create_directories(fs::path(out_dir) / "gt", ec);
  if (!fs::is_directory(fs::path(out_dir) / "gt")) {
    throw DataError("cannot create output directory: " + out_dir);
  }

  std::vector<std::pair<std::int64_t, Pose>> poses;
  const int frames = static_cast<int>(spec.camera_path.size());
  char name[32];
  for (int i = 0; i < frames; ++i) {
    const SynthFrame frame = render_frame(spec, i);
    std::snprintf(name, sizeof(name), "%04d.png", i);

    write_png_rgb8((fs::path(out_dir) / "rgb" / name).string(), frame.rgb);

    ImageX16 depth_mm(frame.depth.height(), frame.depth.width());
    for (Eigen::Index v = 0; v < frame.depth.height(); ++v) {
      for (Eigen::Index u = 0; u < frame.depth.width(); ++u) {
        const double mm = std::round(frame.depth.meters(v, u) * 1000.0);
        depth_mm(v, u) = static_cast<std::uint16_t>(std::clamp(mm, 0.0, 65535.0));
      }
    }
    write_png_gray16((fs::path(out_dir) / "depth" / name).string(), depth_mm);
    write_png_gray8((fs::path(out_dir) / "gt" / name).string(), frame.gt.values);
    poses.emplace_back(i, frame.pose);
  }
  write_poses((fs::path(out_dir) / "poses.txt").string(), poses);
  write_intrinsics((fs::path(out_dir) / "intrinsics.txt").string(), spec.intrinsics);
  save_scene(spec, (fs::path(out_dir) / "scene.json").string());
}

namespace {

json appearance_to_json(const AppearanceModel& m) {
  return {{"color", {m.base_color(0), m.base_color(1), m.base_color(2)}},
          {"noise_sigma", m.noise_sigma}};
}

AppearanceModel appearance_from_json(const json& j) {
  AppearanceModel m;
  for (int c = 0; c < 3; ++c) m.base_color(c) = j.at("color").at(c).get<double>();
  m.noise_sigma = j.at("noise_sigma").get<double>();
  return m;
}

}  // namespace

void save_scene(const SceneSpec& spec, const std::string& path) {
  json j;
  j["rng_seed"] = spec.rng_seed;
  j["ground"] = appearance_to_json(spec.ground);
  j["sky"] = appearance_to_json(spec.sky);
  j["depth_model"] = {{"max_valid_range", spec.depth_model.max_valid_range},
                      {"noise_rel", spec.depth_model.noise_rel},
                      {"dropout_prob", spec.depth_model.dropout_prob}};
  j["intrinsics"] = {{"fx", spec.intrinsics.fx}, {"fy", spec.intrinsics.fy},
                     {"cx", spec.intrinsics.cx}, {"cy", spec.intrinsics.cy},
                     {"width", spec.intrinsics.width}, {"height", spec.intrinsics.height}};
  j["obstacles"] = json::array();
  for (const BoxObstacle& box : spec.obstacles) {
    j["obstacles"].push_back({{"center", {box.center(0), box.center(1), box.center(2)}},
                              {"size", {box.size(0), box.size(1), box.size(2)}},
                              {"appearance", appearance_to_json(box.appearance)},
                              {"spawn_frame", box.spawn_frame}});
  }
  j["camera_path"] = json::array();
  for (const Pose& pose : spec.camera_path) {
    j["camera_path"].push_back({pose.translation.x(), pose.translation.y(),
                                pose.translation.z(), pose.rotation.x(), pose.rotation.y(),
                                pose.rotation.z(), pose.rotation.w()});
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw DataError("failed writing " + path);
}

SceneSpec load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scene file: " + path);
  json j;
  try {
    in >> j;
    SceneSpec spec;
    spec.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    spec.ground = appearance_from_json(j.at("ground"));
    spec.sky = appearance_from_json(j.at("sky"));
    const json& dm = j.at("depth_model");
    spec.depth_model = {dm.at("max_valid_range").get<double>(),
                        dm.at("noise_rel").get<double>(), dm.at("dropout_prob").get<double>()};
    const json& ki = j.at("intrinsics");
    spec.intrinsics = {ki.at("fx").get<double>(), ki.at("fy").get<double>(),
                       ki.at("cx").get<double>(), ki.at("cy").get<double>(),
                       ki.at("width").get<int>(), ki.at("height").get<int>()};
    for (const json& jb : j.at("obstacles")) {
      BoxObstacle box;
      for (int c = 0; c < 3; ++c) {
        box.center(c) = jb.at("center").at(c).get<double>();
        box.size(c) = jb.at("size").at(c).get<double>();
      }
      box.appearance = appearance_from_json(jb.at("appearance"));
      box.spawn_frame = jb.at("spawn_frame").get<int>();
      spec.obstacles.push_back(box);
    }
    for (const json& jp : j.at("camera_path")) {
      Pose pose;
      pose.translation = {jp.at(0).get<double>(), jp.at(1).get<double>(), jp.at(2).get<double>()};
      pose.rotation = Eigen::Quaterniond(jp.at(6).get<double>(), jp.at(3).get<double>(),
                                         jp.at(4).get<double>(), jp.at(5).get<double>());
      spec.camera_path.push_back(pose);
    }
    spec.validate();
    return spec;
  } catch (const json::exception& e) {
    throw DataError("malformed scene file " + path + ": " + e.what());
  }
}

}  // namespace n2f
