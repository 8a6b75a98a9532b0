#include "n2f/io/sequence_io.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "n2f/core/error.hpp"
#include "n2f/io/png_io.hpp"

namespace n2f {

namespace fs = std::filesystem;

void write_intrinsics(const std::string& path, const CameraIntrinsics& k) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  char buf[256];
  std::snprintf(buf, sizeof(buf), "fx %.9g\nfy %.9g\ncx %.9g\ncy %.9g\nwidth %d\nheight %d\n",
                k.fx, k.fy, k.cx, k.cy, k.width, k.height);
  out << buf;
  if (!out) throw DataError("failed writing " + path);
}

CameraIntrinsics read_intrinsics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open intrinsics file: " + path);
  CameraIntrinsics k;
  bool seen[6] = {};
  std::string key;
  double value = 0.0;
  while (in >> key >> value) {
    if (key == "fx") { k.fx = value; seen[0] = true; }
    else if (key == "fy") { k.fy = value; seen[1] = true; }
    else if (key == "cx") { k.cx = value; seen[2] = true; }
    else if (key == "cy") { k.cy = value; seen[3] = true; }
    else if (key == "width") { k.width = static_cast<int>(value); seen[4] = true; }
    else if (key == "height") { k.height = static_cast<int>(value); seen[5] = true; }
    else throw DataError("unknown key '" + key + "' in " + path);
  }
  for (bool s : seen) {
    if (!s) throw DataError("missing intrinsics key in " + path);
  }
  k.validate();
  return k;
}

void write_poses(const std::string& path,
                 const std::vector<std::pair<std::int64_t, Pose>>& poses) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  char buf[512];
  for (const auto& [id, pose] : poses) {
    std::snprintf(buf, sizeof(buf), "%lld %.12g %.12g %.12g %.12g %.12g %.12g %.12g\n",
                  static_cast<long long>(id), pose.translation.x(), pose.translation.y(),
                  pose.translation.z(), pose.rotation.x(), pose.rotation.y(),
                  pose.rotation.z(), pose.rotation.w());
    out << buf;
  }
  if (!out) throw DataError("failed writing " + path);
}

std::map<std::int64_t, Pose> read_poses(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open poses file: " + path);
  std::map<std::int64_t, Pose> poses;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream iss(line);
    std::int64_t id = 0;
    double tx, ty, tz, qx, qy, qz, qw;
    if (!(iss >> id >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
      throw DataError(path + ": malformed pose on line " + std::to_string(line_no));
    }
    Pose pose;
    pose.translation = {tx, ty, tz};
    pose.rotation = Eigen::Quaterniond(qw, qx, qy, qz);
    poses[id] = pose;
  }
  return poses;
}

ImageXd downscale_depth(const ImageXd& meters, int factor) {
  if (factor < 1 || meters.rows() % factor != 0 || meters.cols() % factor != 0) {
    throw InvalidInputError("downscale_depth: dimensions not divisible by factor");
  }
  ImageXd out(meters.rows() / factor, meters.cols() / factor);
  for (Eigen::Index v = 0; v < out.rows(); ++v) {
    for (Eigen::Index u = 0; u < out.cols(); ++u) {
      double sum = 0.0;
      int n = 0;
      for (int dy = 0; dy < factor; ++dy) {
        for (int dx = 0; dx < factor; ++dx) {
          const double z = meters(v * factor + dy, u * factor + dx);
          if (z > 0.0) {
            sum += z;
            ++n;
          }
        }
      }
      out(v, u) = n > 0 ? sum / n : 0.0;
    }
  }
  return out;
}

ImageX8 downscale_labels(const ImageX8& labels, int factor) {
  if (factor < 1 || labels.rows() % factor != 0 || labels.cols() % factor != 0) {
    throw InvalidInputError("downscale_labels: dimensions not divisible by factor");
  }
  ImageX8 out(labels.rows() / factor, labels.cols() / factor);
  for (Eigen::Index v = 0; v < out.rows(); ++v) {
    for (Eigen::Index u = 0; u < out.cols(); ++u) {
      int n_free = 0, n_obstacle = 0;
      for (int dy = 0; dy < factor; ++dy) {
        for (int dx = 0; dx < factor; ++dx) {
          const auto l = static_cast<Label>(labels(v * factor + dy, u * factor + dx));
          if (l == Label::FreeSpace) ++n_free;
          else if (l == Label::Obstacle) ++n_obstacle;
        }
      }
      Label l = Label::Unknown;
      if (n_obstacle > 0 && n_obstacle >= n_free) l = Label::Obstacle;
      else if (n_free > 0) l = Label::FreeSpace;
      out(v, u) = static_cast<std::uint8_t>(l);
    }
  }
  return out;
}

SequenceReader::SequenceReader(const std::string& dir, int target_width, int target_height)
    : dir_(dir) {
  const fs::path rgb_dir = fs::path(dir) / "rgb";
  if (!fs::is_directory(rgb_dir)) throw DataError("no rgb directory under " + dir);
  for (const auto& entry : fs::directory_iterator(rgb_dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
    try {
      frame_ids_.push_back(std::stoll(entry.path().stem().string()));
    } catch (const std::exception&) {
      throw DataError("non-numeric frame name: " + entry.path().string());
    }
  }
  if (frame_ids_.empty()) throw DataError("no frames under " + rgb_dir.string());
  std::sort(frame_ids_.begin(), frame_ids_.end());

  native_intrinsics_ = read_intrinsics((fs::path(dir) / "intrinsics.txt").string());
  poses_ = read_poses((fs::path(dir) / "poses.txt").string());
  for (std::int64_t id : frame_ids_) {
    if (!poses_.count(id)) {
      throw DataError((fs::path(dir) / "poses.txt").string() + ": no pose for frame " +
                      std::to_string(id));
    }
  }

  intrinsics_ = native_intrinsics_;
  if (target_width > 0 && target_height > 0 &&
      (native_intrinsics_.width != target_width || native_intrinsics_.height != target_height)) {
    if (native_intrinsics_.width % target_width != 0 ||
        native_intrinsics_.height % target_height != 0 ||
        native_intrinsics_.width / target_width != native_intrinsics_.height / target_height) {
      throw DataError("sequence resolution " + std::to_string(native_intrinsics_.width) + "x" +
                      std::to_string(native_intrinsics_.height) +
                      " is not an integer multiple of the target resolution");
    }
    downscale_ = native_intrinsics_.width / target_width;
    const double s = static_cast<double>(downscale_);
    // Output pixel u' has its lattice point at native u = s u' + (s - 1) / 2.
    intrinsics_.fx = native_intrinsics_.fx / s;
    intrinsics_.fy = native_intrinsics_.fy / s;
    intrinsics_.cx = (native_intrinsics_.cx - (s - 1.0) / 2.0) / s;
    intrinsics_.cy = (native_intrinsics_.cy - (s - 1.0) / 2.0) / s;
    intrinsics_.width = target_width;
    intrinsics_.height = target_height;
  }

  has_gt_ = fs::is_directory(fs::path(dir) / "gt");
}

FrameInput SequenceReader::read(std::size_t index) const {
  if (index >= frame_ids_.size()) throw InvalidInputError("SequenceReader: index out of range");
  const std::int64_t id = frame_ids_[index];
  char name[32];
  std::snprintf(name, sizeof(name), "%04lld.png", static_cast<long long>(id));

  FrameInput frame;
  frame.frame_id = id;
  frame.rgb = read_png_rgb8((fs::path(dir_) / "rgb" / name).string());

  const std::string depth_path = (fs::path(dir_) / "depth" / name).string();
  const ImageX16 depth_mm = read_png_gray16(depth_path);
  if (depth_mm.rows() != native_intrinsics_.height || depth_mm.cols() != native_intrinsics_.width) {
    throw DataError("depth size mismatch: " + depth_path);
  }
  frame.depth.meters = depth_mm.cast<double>() * 1e-3;
  frame.pose = poses_.at(id);

  if (has_gt_) {
    const std::string gt_path = (fs::path(dir_) / "gt" / name).string();
    LabelMap gt;
    gt.values = read_png_gray8(gt_path);
    frame.gt = std::move(gt);
  }

  if (downscale_ > 1) {
    frame.rgb.r = downscale_area(frame.rgb.r, downscale_);
    frame.rgb.g = downscale_area(frame.rgb.g, downscale_);
    frame.rgb.b = downscale_area(frame.rgb.b, downscale_);
    frame.depth.meters = downscale_depth(frame.depth.meters, downscale_);
    if (frame.gt) frame.gt->values = downscale_labels(frame.gt->values, downscale_);
  }
  if (frame.rgb.height() != intrinsics_.height || frame.rgb.width() != intrinsics_.width) {
    throw DataError("rgb size mismatch: " + std::string(name) + " in " + dir_);
  }
  return frame;
}

FrameSource ingest_sequence(std::shared_ptr<SequenceReader> reader) {
  auto index = std::make_shared<std::size_t>(0);
  return [reader, index]() -> std::optional<FrameInput> {
    if (*index >= reader->size()) return std::nullopt;
    return reader->read((*index)++);
  };
}

}  // namespace n2f
