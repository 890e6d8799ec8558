#ifndef GRCN_BOXES_HPP
#define GRCN_BOXES_HPP

#include <vector>

namespace grcn {

// Axis-aligned rectangle in continuous image-pixel coordinates,
// corners-exclusive area (x2-x1)*(y2-y1); no +1 convention.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
};

using BoxList = std::vector<Box>;

// Box regression offsets: center shifts normalized by the anchor extent and
// log scale factors.
struct Delta {
  double dx = 0.0;
  double dy = 0.0;
  double dw = 0.0;
  double dh = 0.0;
};

struct AnchorGrid {
  int feature_h = 0;
  int feature_w = 0;
  int stride = 0;
  std::vector<double> sizes;
  std::vector<double> ratios;  // h/w
  // feature_h * feature_w * |sizes| * |ratios| anchors, cell row-major, then
  // size-major, then ratio.
  BoxList boxes;

  int anchors_per_cell() const {
    return static_cast<int>(sizes.size() * ratios.size());
  }
  int count() const { return static_cast<int>(boxes.size()); }
};

// Intersection over union in [0,1]; 0 for disjoint or degenerate boxes.
double iou(const Box& a, const Box& b);

AnchorGrid generate_anchors(int feature_h, int feature_w, int stride,
                            const std::vector<double>& sizes,
                            const std::vector<double>& ratios);

// dx=(tcx-acx)/aw, dy=(tcy-acy)/ah, dw=ln(tw/aw), dh=ln(th/ah)
Delta encode_box(const Box& anchor, const Box& target);
// Exact inverse of encode_box.
Box decode_box(const Box& anchor, const Delta& delta);

// Greedy NMS: keep the highest score, drop everything with IoU strictly
// above the threshold against it, repeat. Ties by lower index. Returns kept
// indices in descending-score order.
std::vector<int> nms(const BoxList& boxes, const std::vector<double>& scores,
                     double iou_threshold);

// Clamp coordinates to [0,width] x [0,height].
BoxList clip_to_image(const BoxList& boxes, int width, int height);
Box clip_box(const Box& b, int width, int height);

}  // namespace grcn

#endif  // GRCN_BOXES_HPP
