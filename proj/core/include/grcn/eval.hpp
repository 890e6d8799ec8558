#ifndef GRCN_EVAL_HPP
#define GRCN_EVAL_HPP

#include <string>
#include <vector>

#include "grcn/boxes.hpp"

namespace grcn {

struct DetectionRecord {
  int image_id = 0;
  Box box;
  int class_id = 0;
  double score = 0.0;
};

struct GroundTruthRecord {
  int image_id = 0;
  Box box;
  int class_id = 0;
};

// NaN marks a metric with no ground truth to evaluate against ("undefined");
// undefined entries are excluded from averages, never counted as zero.
struct EvalReport {
  double ap = 0.0;        // mean over IoU 0.50:0.05:0.95
  double ap50 = 0.0;
  double ap70 = 0.0;
  double ap75 = 0.0;
  double ap_small = 0.0;  // gt area < 32^2
  double ap_medium = 0.0; // 32^2 <= area < 96^2
  double ap_large = 0.0;  // area >= 96^2
  std::vector<std::pair<int, double>> per_class;  // class id -> AP
};

bool metric_defined(double v);

enum class ApInterpolation { kCoco101, kVoc11 };

struct MatchResult {
  std::vector<int> order;   // detection indices, descending score
  std::vector<char> is_tp;  // parallel to order
  std::vector<int> matched_gt;  // gt index per ordered det, -1 when unmatched
};

// Greedy matching at one IoU threshold: detections in descending-score order
// (ties by insertion order) each claim the unmatched same-class gt of
// highest IoU >= threshold in their image.
MatchResult match_detections(const std::vector<DetectionRecord>& dets,
                             const std::vector<GroundTruthRecord>& gts, double iou_threshold);

// Precision envelope integrated at recall points {0, 0.01, ..., 1.00}
// (or the 11-point variant). tp flags must be in descending-score order.
// Returns NaN when n_gt == 0.
double average_precision(const std::vector<char>& tp_flags, int n_gt,
                         ApInterpolation interp = ApInterpolation::kCoco101);

EvalReport coco_metrics(const std::vector<DetectionRecord>& dets,
                        const std::vector<GroundTruthRecord>& gts,
                        ApInterpolation interp = ApInterpolation::kCoco101);

// Flat key=value lines: ap, ap50, ap70, ap75, ap_s, ap_m, ap_l,
// per_class.<id>; undefined metrics print as "undefined".
std::string report_text(const EvalReport& report);
// The same keys as JSON; undefined metrics are null.
std::string report_json(const EvalReport& report);

}  // namespace grcn

#endif  // GRCN_EVAL_HPP
