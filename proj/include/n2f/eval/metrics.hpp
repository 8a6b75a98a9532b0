#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "n2f/labels/label_generation.hpp"
#include "n2f/learner/online_learner.hpp"

namespace n2f {

struct ClassCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::int64_t support() const { return tp + fp + fn; }
};

// Two-class confusion over non-Unknown ground-truth pixels.
struct ConfusionCounts {
  ClassCounts free_space;
  ClassCounts obstacle;

  std::int64_t evaluated() const { return obstacle.tp + obstacle.fp + obstacle.fn + obstacle.tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& other);
};

// region == nullptr means all pixels; otherwise only pixels where the mask is
// true are counted. Unknown ground truth is always excluded.
ConfusionCounts confusion(const Segmentation& pred, const LabelMap& gt,
                          const MaskImage* region = nullptr);

struct IouSummary {
  std::optional<double> free_space;  // absent when the class has no support
  std::optional<double> obstacle;
  std::optional<double> mean;  // over classes with support
};

// IoU_c = tp / (tp + fp + fn); classes with zero support are excluded from the
// mean.
IouSummary iou(const ConfusionCounts& counts);

double pixel_accuracy(const ConfusionCounts& counts);

// Average precision of the obstacle class: pixels ranked by descending
// confidence (ties by ascending pixel index); non-interpolated area under the
// precision-recall curve, AP = (1/P) * sum over positive ranks k of
// precision@k. Throws InvalidInputError when there is no positive pixel.
double average_precision(const std::vector<double>& scores, const std::vector<bool>& positive);
double average_precision(const ImageXd& obstacle_confidence, const LabelMap& gt,
                         const MaskImage* region = nullptr);

// Pixels with invalid or out-of-range depth: exactly where the classifier
// extends perception beyond geometry.
MaskImage far_field_mask(const DepthImage& depth, double max_range);

// One CSV row; NaN encodes an undefined metric.
struct FrameMetrics {
  std::string frame_id;
  double iou_free = 0.0;
  double iou_obstacle = 0.0;
  double miou = 0.0;
  double ap = 0.0;
  double accuracy = 0.0;
};

struct MetricReport {
  std::string region;  // "all" or "far"
  std::vector<FrameMetrics> frames;
  FrameMetrics aggregate;  // pooled over all pixels of all frames
};

// Streams per-frame metrics and pools pixels for the aggregate row.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::string region);

  void add_frame(const std::string& frame_id, const Segmentation& pred, const LabelMap& gt,
                 const MaskImage* region = nullptr);
  MetricReport finish() const;

 private:
  std::string region_;
  std::vector<FrameMetrics> frames_;
  ConfusionCounts total_;
  std::vector<double> pooled_scores_;
  std::vector<bool> pooled_positive_;
};

void write_metrics_csv(const MetricReport& report, const std::string& path);
MetricReport read_metrics_csv(const std::string& path);

struct ComparisonRow {
  std::string frame_id;
  FrameMetrics a, b, delta;  // delta = b - a
};

struct RunComparison {
  std::string region;
  std::vector<ComparisonRow> rows;
  ComparisonRow aggregate;
};

// Requires matching frame sets and region filters.
RunComparison compare_runs(const MetricReport& a, const MetricReport& b);

void write_comparison_csv(const RunComparison& cmp, const std::string& path);
std::string comparison_summary(const RunComparison& cmp);

}  // namespace n2f
