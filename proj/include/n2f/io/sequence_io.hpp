#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "n2f/learner/online_learner.hpp"

namespace n2f {

// intrinsics.txt: one "key value" pair per line (fx fy cx cy width height).
void write_intrinsics(const std::string& path, const CameraIntrinsics& k);
CameraIntrinsics read_intrinsics(const std::string& path);

// poses.txt: one "frame_id tx ty tz qx qy qz qw" line per frame (camera-to-world).
void write_poses(const std::string& path,
                 const std::vector<std::pair<std::int64_t, Pose>>& poses);
std::map<std::int64_t, Pose> read_poses(const std::string& path);

// Reader for the exported sequence layout: rgb/NNNN.png defines the frame
// set; depth/ and poses.txt are required, gt/ is optional. Depth is converted
// from 16-bit millimeters to meters. When a target resolution is given,
// frames are downscaled by area averaging (integer factor only) and the
// intrinsics are rescaled to match.
class SequenceReader {
 public:
  explicit SequenceReader(const std::string& dir, int target_width = 0, int target_height = 0);

  std::size_t size() const { return frame_ids_.size(); }
  const std::vector<std::int64_t>& frame_ids() const { return frame_ids_; }
  const CameraIntrinsics& intrinsics() const { return intrinsics_; }
  bool has_gt() const { return has_gt_; }
  const std::string& dir() const { return dir_; }

  FrameInput read(std::size_t index) const;

 private:
  std::string dir_;
  std::vector<std::int64_t> frame_ids_;
  std::map<std::int64_t, Pose> poses_;
  CameraIntrinsics intrinsics_;       // after rescaling
  CameraIntrinsics native_intrinsics_;
  int downscale_ = 1;
  bool has_gt_ = false;
};

// Lazily yields the frames of a reader in order.
FrameSource ingest_sequence(std::shared_ptr<SequenceReader> reader);

// Valid-aware depth downscale: mean of the positive values in each cell,
// 0 when the whole cell is invalid.
ImageXd downscale_depth(const ImageXd& meters, int factor);

// Label downscale: majority over FreeSpace/Obstacle in the cell (Obstacle on
// ties), Unknown only when the cell has no labeled pixel.
ImageX8 downscale_labels(const ImageX8& labels, int factor);

}  // namespace n2f
