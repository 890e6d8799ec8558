#include "grcn/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "grcn/errors.hpp"

namespace grcn {

double iou(const Box& a, const Box& b) {
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

AnchorGrid generate_anchors(int feature_h, int feature_w, int stride,
                            const std::vector<double>& sizes,
                            const std::vector<double>& ratios) {
  if (feature_h <= 0 || feature_w <= 0 || stride <= 0) {
    throw ConfigError("generate_anchors: grid dims and stride must be positive");
  }
  if (sizes.empty()) throw ConfigError("generate_anchors: empty anchor size list");
  if (ratios.empty()) throw ConfigError("generate_anchors: empty aspect ratio list");

  AnchorGrid grid;
  grid.feature_h = feature_h;
  grid.feature_w = feature_w;
  grid.stride = stride;
  grid.sizes = sizes;
  grid.ratios = ratios;
  grid.boxes.reserve(static_cast<std::size_t>(feature_h) * feature_w * sizes.size() *
                     ratios.size());
  for (int i = 0; i < feature_h; ++i) {
    const double cy = i * static_cast<double>(stride) + stride / 2.0;
    for (int j = 0; j < feature_w; ++j) {
      const double cx = j * static_cast<double>(stride) + stride / 2.0;
      for (double s : sizes) {
        for (double r : ratios) {
          // area s^2 with h/w = r
          const double w = s / std::sqrt(r);
          const double h = s * std::sqrt(r);
          grid.boxes.push_back({cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0});
        }
      }
    }
  }
  return grid;
}

Delta encode_box(const Box& anchor, const Box& target) {
  const double aw = anchor.width();
  const double ah = anchor.height();
  if (aw <= 0.0 || ah <= 0.0) {
    throw GeometryError("encode_box: anchor has non-positive extent " +
                        std::to_string(aw) + "x" + std::to_string(ah));
  }
  Delta d;
  d.dx = (target.center_x() - anchor.center_x()) / aw;
  d.dy = (target.center_y() - anchor.center_y()) / ah;
  d.dw = std::log(target.width() / aw);
  d.dh = std::log(target.height() / ah);
  return d;
}

Box decode_box(const Box& anchor, const Delta& delta) {
  const double aw = anchor.width();
  const double ah = anchor.height();
  if (aw <= 0.0 || ah <= 0.0) {
    throw GeometryError("decode_box: anchor has non-positive extent");
  }
  if (!std::isfinite(delta.dx) || !std::isfinite(delta.dy) || !std::isfinite(delta.dw) ||
      !std::isfinite(delta.dh)) {
    throw NumericError("decode_box: non-finite delta");
  }
  const double cx = anchor.center_x() + delta.dx * aw;
  const double cy = anchor.center_y() + delta.dy * ah;
  const double w = aw * std::exp(delta.dw);
  const double h = ah * std::exp(delta.dh);
  return {cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0};
}

std::vector<int> nms(const BoxList& boxes, const std::vector<double>& scores,
                     double iou_threshold) {
  if (boxes.size() != scores.size()) {
    throw DimensionError("nms: " + std::to_string(boxes.size()) + " boxes vs " +
                         std::to_string(scores.size()) + " scores");
  }
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&scores](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<int> kept;
  std::vector<char> suppressed(boxes.size(), 0);
  for (int idx : order) {
    if (suppressed[idx]) continue;
    kept.push_back(idx);
    for (int other : order) {
      if (other == idx || suppressed[other]) continue;
      if (iou(boxes[idx], boxes[other]) > iou_threshold) suppressed[other] = 1;
    }
  }
  return kept;
}

Box clip_box(const Box& b, int width, int height) {
  auto clamp = [](double v, double lo, double hi) { return std::min(std::max(v, lo), hi); };
  return {clamp(b.x1, 0.0, static_cast<double>(width)),
          clamp(b.y1, 0.0, static_cast<double>(height)),
          clamp(b.x2, 0.0, static_cast<double>(width)),
          clamp(b.y2, 0.0, static_cast<double>(height))};
}

BoxList clip_to_image(const BoxList& boxes, int width, int height) {
  if (width <= 0 || height <= 0) {
    throw ConfigError("clip_to_image: image dims must be positive");
  }
  BoxList out;
  out.reserve(boxes.size());
  for (const auto& b : boxes) out.push_back(clip_box(b, width, height));
  return out;
}

}  // namespace grcn
