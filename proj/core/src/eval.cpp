#include "grcn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "grcn/errors.hpp"

namespace grcn {

bool metric_defined(double v) { return !std::isnan(v); }

namespace {

constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

double mean_defined(const std::vector<double>& values) {
  double sum = 0.0;
  int n = 0;
  for (double v : values) {
    if (metric_defined(v)) {
      sum += v;
      ++n;
    }
  }
  return n == 0 ? kUndefined : sum / n;
}

}  // namespace

MatchResult match_detections(const std::vector<DetectionRecord>& dets,
                             const std::vector<GroundTruthRecord>& gts, double iou_threshold) {
  MatchResult res;
  res.order.resize(dets.size());
  std::iota(res.order.begin(), res.order.end(), 0);
  std::stable_sort(res.order.begin(), res.order.end(), [&dets](int a, int b) {
    return dets[static_cast<std::size_t>(a)].score > dets[static_cast<std::size_t>(b)].score;
  });
  res.is_tp.assign(dets.size(), 0);
  res.matched_gt.assign(dets.size(), -1);

  std::vector<char> gt_used(gts.size(), 0);
  for (std::size_t oi = 0; oi < res.order.size(); ++oi) {
    const auto& d = dets[static_cast<std::size_t>(res.order[oi])];
    double best = 0.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_used[g] || gts[g].image_id != d.image_id || gts[g].class_id != d.class_id) continue;
      const double v = iou(d.box, gts[g].box);
      if (v >= iou_threshold && v > best) {
        best = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) {
      gt_used[static_cast<std::size_t>(best_gt)] = 1;
      res.is_tp[oi] = 1;
      res.matched_gt[oi] = best_gt;
    }
  }
  return res;
}

double average_precision(const std::vector<char>& tp_flags, int n_gt, ApInterpolation interp) {
  if (n_gt < 0) throw ConfigError("average_precision: negative gt count");
  if (n_gt == 0) return kUndefined;
  if (tp_flags.empty()) return 0.0;

  std::vector<double> precision(tp_flags.size()), recall(tp_flags.size());
  int tp = 0;
  for (std::size_t i = 0; i < tp_flags.size(); ++i) {
    if (tp_flags[i]) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(n_gt);
  }

  const int points = interp == ApInterpolation::kCoco101 ? 101 : 11;
  const double step = interp == ApInterpolation::kCoco101 ? 0.01 : 0.1;
  double total = 0.0;
  for (int p = 0; p < points; ++p) {
    const double q = p * step;
    double best = 0.0;
    for (std::size_t i = 0; i < tp_flags.size(); ++i) {
      if (recall[i] >= q - 1e-12) best = std::max(best, precision[i]);
    }
    total += best;
  }
  return total / points;
}

namespace {

double bucket_lo(int bucket) { return bucket == 0 ? 0.0 : bucket == 1 ? 1024.0 : 9216.0; }
double bucket_hi(int bucket) {
  return bucket == 0 ? 1024.0 : bucket == 1 ? 9216.0 : std::numeric_limits<double>::infinity();
}

bool in_bucket(double area, int bucket) {
  return area >= bucket_lo(bucket) && area < bucket_hi(bucket);
}

}  // namespace

EvalReport coco_metrics(const std::vector<DetectionRecord>& dets,
                        const std::vector<GroundTruthRecord>& gts, ApInterpolation interp) {
  std::set<int> class_ids;
  for (const auto& g : gts) class_ids.insert(g.class_id);
  for (const auto& d : dets) class_ids.insert(d.class_id);

  const std::vector<double> thresholds = {0.50, 0.55, 0.60, 0.65, 0.70,
                                          0.75, 0.80, 0.85, 0.90, 0.95};

  // per class, per threshold AP on the full sets
  std::map<int, std::vector<double>> ap_full;
  // per bucket: per class, per threshold
  std::map<int, std::vector<double>> ap_bucket[3];

  for (int cls : class_ids) {
    std::vector<DetectionRecord> cdets;
    std::vector<GroundTruthRecord> cgts;
    for (const auto& d : dets)
      if (d.class_id == cls) cdets.push_back(d);
    for (const auto& g : gts)
      if (g.class_id == cls) cgts.push_back(g);

    auto& full = ap_full[cls];
    for (double thr : thresholds) {
      const MatchResult m = match_detections(cdets, cgts, thr);
      full.push_back(average_precision(m.is_tp, static_cast<int>(cgts.size()), interp));

      // Size buckets: gts filtered by area; detections matched to a dropped
      // gt are dropped too; unmatched detections stay FPs in the bucket
      // their own area falls into.
      for (int bucket = 0; bucket < 3; ++bucket) {
        std::vector<char> flags;
        int n_gt = 0;
        for (const auto& g : cgts)
          if (in_bucket(g.box.area(), bucket)) ++n_gt;
        for (std::size_t oi = 0; oi < m.order.size(); ++oi) {
          if (m.is_tp[oi]) {
            const auto& g = cgts[static_cast<std::size_t>(m.matched_gt[oi])];
            if (in_bucket(g.box.area(), bucket)) flags.push_back(1);
          } else {
            const auto& d = cdets[static_cast<std::size_t>(m.order[oi])];
            if (in_bucket(d.box.area(), bucket)) flags.push_back(0);
          }
        }
        ap_bucket[bucket][cls].push_back(average_precision(flags, n_gt, interp));
      }
    }
  }

  EvalReport report;
  std::vector<double> all_thr_ap, ap50s, ap70s, ap75s;
  for (int cls : class_ids) {
    const auto& full = ap_full[cls];
    report.per_class.emplace_back(cls, mean_defined(full));
    for (double v : full) all_thr_ap.push_back(v);
    ap50s.push_back(full[0]);
    ap70s.push_back(full[4]);
    ap75s.push_back(full[5]);
  }
  report.ap = mean_defined(all_thr_ap);
  report.ap50 = mean_defined(ap50s);
  report.ap70 = mean_defined(ap70s);
  report.ap75 = mean_defined(ap75s);

  for (int bucket = 0; bucket < 3; ++bucket) {
    std::vector<double> vals;
    for (int cls : class_ids)
      for (double v : ap_bucket[bucket][cls]) vals.push_back(v);
    const double m = mean_defined(vals);
    if (bucket == 0) report.ap_small = m;
    if (bucket == 1) report.ap_medium = m;
    if (bucket == 2) report.ap_large = m;
  }
  return report;
}

namespace {

std::string metric_str(double v) {
  if (!metric_defined(v)) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string report_text(const EvalReport& r) {
  std::ostringstream os;
  os << "ap=" << metric_str(r.ap) << "\n";
  os << "ap50=" << metric_str(r.ap50) << "\n";
  os << "ap70=" << metric_str(r.ap70) << "\n";
  os << "ap75=" << metric_str(r.ap75) << "\n";
  os << "ap_s=" << metric_str(r.ap_small) << "\n";
  os << "ap_m=" << metric_str(r.ap_medium) << "\n";
  os << "ap_l=" << metric_str(r.ap_large) << "\n";
  for (const auto& [cls, ap] : r.per_class) {
    os << "per_class." << cls << "=" << metric_str(ap) << "\n";
  }
  return os.str();
}

std::string report_json(const EvalReport& r) {
  nlohmann::json j;
  auto put = [&j](const std::string& key, double v) {
    if (metric_defined(v)) {
      j[key] = v;
    } else {
      j[key] = nullptr;
    }
  };
  put("ap", r.ap);
  put("ap50", r.ap50);
  put("ap70", r.ap70);
  put("ap75", r.ap75);
  put("ap_s", r.ap_small);
  put("ap_m", r.ap_medium);
  put("ap_l", r.ap_large);
  nlohmann::json per;
  for (const auto& [cls, ap] : r.per_class) {
    const std::string key = std::to_string(cls);
    if (metric_defined(ap)) {
      per[key] = ap;
    } else {
      per[key] = nullptr;
    }
  }
  j["per_class"] = std::move(per);
  return j.dump(2) + "\n";
}

}  // namespace grcn
