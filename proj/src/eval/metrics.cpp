#include "n2f/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "n2f/core/error.hpp"

namespace n2f {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::string fmt_metric(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

double parse_metric(const std::string& s) {
  if (s == "nan") return kNan;
  return std::stod(s);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  return fields;
}

FrameMetrics metrics_from_counts(const std::string& frame_id, const ConfusionCounts& counts,
                                 double ap) {
  const IouSummary s = iou(counts);
  FrameMetrics m;
  m.frame_id = frame_id;
  m.iou_free = s.free_space.value_or(kNan);
  m.iou_obstacle = s.obstacle.value_or(kNan);
  m.miou = s.mean.value_or(kNan);
  m.ap = ap;
  m.accuracy = pixel_accuracy(counts);
  return m;
}

}  // namespace

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& other) {
  free_space.tp += other.free_space.tp;
  free_space.fp += other.free_space.fp;
  free_space.fn += other.free_space.fn;
  free_space.tn += other.free_space.tn;
  obstacle.tp += other.obstacle.tp;
  obstacle.fp += other.obstacle.fp;
  obstacle.fn += other.obstacle.fn;
  obstacle.tn += other.obstacle.tn;
  return *this;
}

ConfusionCounts confusion(const Segmentation& pred, const LabelMap& gt, const MaskImage* region) {
  if (pred.classes.rows() != gt.height() || pred.classes.cols() != gt.width()) {
    throw InvalidInputError("confusion: prediction and ground truth sizes differ");
  }
  if (region && (region->rows() != gt.height() || region->cols() != gt.width())) {
    throw InvalidInputError("confusion: region mask size differs");
  }

  ConfusionCounts c;
  for (Eigen::Index v = 0; v < gt.height(); ++v) {
    for (Eigen::Index u = 0; u < gt.width(); ++u) {
      if (region && !(*region)(v, u)) continue;
      const Label truth = gt.at(v, u);
      if (truth != Label::FreeSpace && truth != Label::Obstacle) continue;
      const bool pred_obstacle =
          pred.classes(v, u) == static_cast<std::uint8_t>(Label::Obstacle);
      const bool true_obstacle = truth == Label::Obstacle;
      if (pred_obstacle && true_obstacle) {
        ++c.obstacle.tp;
        ++c.free_space.tn;
      } else if (pred_obstacle && !true_obstacle) {
        ++c.obstacle.fp;
        ++c.free_space.fn;
      } else if (!pred_obstacle && true_obstacle) {
        ++c.obstacle.fn;
        ++c.free_space.fp;
      } else {
        ++c.obstacle.tn;
        ++c.free_space.tp;
      }
    }
  }
  return c;
}

IouSummary iou(const ConfusionCounts& counts) {
  IouSummary s;
  if (counts.free_space.support() > 0) {
    s.free_space = static_cast<double>(counts.free_space.tp) /
                   static_cast<double>(counts.free_space.support());
  }
  if (counts.obstacle.support() > 0) {
    s.obstacle = static_cast<double>(counts.obstacle.tp) /
                 static_cast<double>(counts.obstacle.support());
  }
  if (s.free_space && s.obstacle) {
    s.mean = 0.5 * (*s.free_space + *s.obstacle);
  } else if (s.free_space) {
    s.mean = s.free_space;
  } else if (s.obstacle) {
    s.mean = s.obstacle;
  }
  return s;
}

double pixel_accuracy(const ConfusionCounts& counts) {
  const std::int64_t total = counts.evaluated();
  if (total == 0) return kNan;
  return static_cast<double>(counts.obstacle.tp + counts.obstacle.tn) /
         static_cast<double>(total);
}

double average_precision(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) {
    throw InvalidInputError("average_precision: score/label size mismatch");
  }
  const std::int64_t n_positive = std::count(positive.begin(), positive.end(), true);
  if (n_positive == 0) {
    throw InvalidInputError("average_precision: no positive ground-truth pixels");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });

  double sum = 0.0;
  std::int64_t hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (positive[order[k]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  return sum / static_cast<double>(n_positive);
}

double average_precision(const ImageXd& obstacle_confidence, const LabelMap& gt,
                         const MaskImage* region) {
  if (obstacle_confidence.rows() != gt.height() || obstacle_confidence.cols() != gt.width()) {
    throw InvalidInputError("average_precision: confidence and ground truth sizes differ");
  }
  std::vector<double> scores;
  std::vector<bool> positive;
  for (Eigen::Index v = 0; v < gt.height(); ++v) {
    for (Eigen::Index u = 0; u < gt.width(); ++u) {
      if (region && !(*region)(v, u)) continue;
      const Label truth = gt.at(v, u);
      if (truth != Label::FreeSpace && truth != Label::Obstacle) continue;
      scores.push_back(obstacle_confidence(v, u));
      positive.push_back(truth == Label::Obstacle);
    }
  }
  return average_precision(scores, positive);
}

MaskImage far_field_mask(const DepthImage& depth, double max_range) {
  MaskImage mask(depth.height(), depth.width());
  for (Eigen::Index v = 0; v < depth.height(); ++v) {
    for (Eigen::Index u = 0; u < depth.width(); ++u) {
      mask(v, u) = !depth_valid(depth.meters(v, u), max_range);
    }
  }
  return mask;
}

MetricAccumulator::MetricAccumulator(std::string region) : region_(std::move(region)) {}

void MetricAccumulator::add_frame(const std::string& frame_id, const Segmentation& pred,
                                  const LabelMap& gt, const MaskImage* region) {
  const ConfusionCounts counts = confusion(pred, gt, region);
  total_ += counts;

  std::size_t frame_positive = 0;
  for (Eigen::Index v = 0; v < gt.height(); ++v) {
    for (Eigen::Index u = 0; u < gt.width(); ++u) {
      if (region && !(*region)(v, u)) continue;
      const Label truth = gt.at(v, u);
      if (truth != Label::FreeSpace && truth != Label::Obstacle) continue;
      pooled_scores_.push_back(pred.obstacle_confidence(v, u));
      pooled_positive_.push_back(truth == Label::Obstacle);
      if (truth == Label::Obstacle) ++frame_positive;
    }
  }

  double ap = kNan;
  if (frame_positive > 0) {
    const std::size_t frame_n = static_cast<std::size_t>(counts.evaluated());
    std::vector<double> scores(pooled_scores_.end() - frame_n, pooled_scores_.end());
    std::vector<bool> positive(pooled_positive_.end() - frame_n, pooled_positive_.end());
    ap = average_precision(scores, positive);
  }
  frames_.push_back(metrics_from_counts(frame_id, counts, ap));
}

MetricReport MetricAccumulator::finish() const {
  MetricReport report;
  report.region = region_;
  report.frames = frames_;
  double ap = kNan;
  if (std::count(pooled_positive_.begin(), pooled_positive_.end(), true) > 0) {
    ap = average_precision(pooled_scores_, pooled_positive_);
  }
  report.aggregate = metrics_from_counts("aggregate", total_, ap);
  return report;
}

void write_metrics_csv(const MetricReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << "frame_id,iou_free,iou_obstacle,miou,ap,accuracy,region\n";
  auto write_row = [&out, &report](const FrameMetrics& m) {
    out << m.frame_id << ',' << fmt_metric(m.iou_free) << ',' << fmt_metric(m.iou_obstacle)
        << ',' << fmt_metric(m.miou) << ',' << fmt_metric(m.ap) << ','
        << fmt_metric(m.accuracy) << ',' << report.region << '\n';
  };
  for (const FrameMetrics& m : report.frames) write_row(m);
  write_row(report.aggregate);
  if (!out) throw DataError("failed writing " + path);
}

MetricReport read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open metrics file: " + path);
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line).size() != 7) {
    throw DataError("malformed metrics header in " + path);
  }
  MetricReport report;
  bool saw_aggregate = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 7) throw DataError("malformed metrics row in " + path);
    FrameMetrics m;
    m.frame_id = fields[0];
    m.iou_free = parse_metric(fields[1]);
    m.iou_obstacle = parse_metric(fields[2]);
    m.miou = parse_metric(fields[3]);
    m.ap = parse_metric(fields[4]);
    m.accuracy = parse_metric(fields[5]);
    if (report.region.empty()) {
      report.region = fields[6];
    } else if (report.region != fields[6]) {
      throw DataError("inconsistent region column in " + path);
    }
    if (m.frame_id == "aggregate") {
      report.aggregate = m;
      saw_aggregate = true;
    } else {
      report.frames.push_back(m);
    }
  }
  if (!saw_aggregate) throw DataError("missing aggregate row in " + path);
  return report;
}

namespace {

FrameMetrics metric_delta(const FrameMetrics& a, const FrameMetrics& b) {
  FrameMetrics d;
  d.frame_id = a.frame_id;
  d.iou_free = b.iou_free - a.iou_free;
  d.iou_obstacle = b.iou_obstacle - a.iou_obstacle;
  d.miou = b.miou - a.miou;
  d.ap = b.ap - a.ap;
  d.accuracy = b.accuracy - a.accuracy;
  return d;
}

}  // namespace

RunComparison compare_runs(const MetricReport& a, const MetricReport& b) {
  if (a.region != b.region) {
    throw InvalidInputError("compare_runs: region filters differ (" + a.region + " vs " +
                            b.region + ")");
  }
  if (a.frames.size() != b.frames.size()) {
    throw InvalidInputError("compare_runs: frame counts differ");
  }
  RunComparison cmp;
  cmp.region = a.region;
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    if (a.frames[i].frame_id != b.frames[i].frame_id) {
      throw InvalidInputError("compare_runs: frame id mismatch at row " + std::to_string(i) +
                              " (" + a.frames[i].frame_id + " vs " + b.frames[i].frame_id + ")");
    }
    cmp.rows.push_back({a.frames[i].frame_id, a.frames[i], b.frames[i],
                        metric_delta(a.frames[i], b.frames[i])});
  }
  cmp.aggregate = {"aggregate", a.aggregate, b.aggregate,
                   metric_delta(a.aggregate, b.aggregate)};
  return cmp;
}

void write_comparison_csv(const RunComparison& cmp, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << "frame_id,region";
  for (const char* name : {"iou_free", "iou_obstacle", "miou", "ap", "accuracy"}) {
    out << ',' << name << "_a," << name << "_b," << name << "_delta";
  }
  out << '\n';
  auto write_row = [&out, &cmp](const ComparisonRow& r) {
    out << r.frame_id << ',' << cmp.region;
    const double cols[5][3] = {{r.a.iou_free, r.b.iou_free, r.delta.iou_free},
                               {r.a.iou_obstacle, r.b.iou_obstacle, r.delta.iou_obstacle},
                               {r.a.miou, r.b.miou, r.delta.miou},
                               {r.a.ap, r.b.ap, r.delta.ap},
                               {r.a.accuracy, r.b.accuracy, r.delta.accuracy}};
    for (const auto& c : cols) {
      out << ',' << fmt_metric(c[0]) << ',' << fmt_metric(c[1]) << ',' << fmt_metric(c[2]);
    }
    out << '\n';
  };
  for (const ComparisonRow& r : cmp.rows) write_row(r);
  write_row(cmp.aggregate);
  if (!out) throw DataError("failed writing " + path);
}

std::string comparison_summary(const RunComparison& cmp) {
  std::ostringstream out;
  out << "region: " << cmp.region << " (" << cmp.rows.size() << " frames, delta = b - a)\n";
  const ComparisonRow& r = cmp.aggregate;
  auto line = [&out](const char* name, double a, double b, double d) {
    out << "  " << name << ": " << fmt_metric(a) << " -> " << fmt_metric(b)
        << "  (delta " << fmt_metric(d) << ")\n";
  };
  line("iou_free    ", r.a.iou_free, r.b.iou_free, r.delta.iou_free);
  line("iou_obstacle", r.a.iou_obstacle, r.b.iou_obstacle, r.delta.iou_obstacle);
  line("miou        ", r.a.miou, r.b.miou, r.delta.miou);
  line("ap          ", r.a.ap, r.b.ap, r.delta.ap);
  line("accuracy    ", r.a.accuracy, r.b.accuracy, r.delta.accuracy);
  return out.str();
}

}  // namespace n2f
