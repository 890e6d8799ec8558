#include "grcn/roi.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "grcn/errors.hpp"

namespace grcn {

namespace {

int clamp_int(int v, int lo, int hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

Tensor roi_pool(const Tensor& features, const BoxList& rois, int out_size, int branch_stride,
                RoiBinRecord* record) {
  if (features.ndim() != 4 || features.dim(0) != 1) {
    throw DimensionError("roi_pool: features must be (1,C,H,W), got " +
                         shape_str(features.shape()));
  }
  if (out_size < 1) throw DimensionError("roi_pool: out_size must be >= 1");
  if (branch_stride < 1) throw DimensionError("roi_pool: branch_stride must be >= 1");
  if (rois.empty()) throw DimensionError("roi_pool: empty ROI list");
  const int c = features.dim(1), h = features.dim(2), w = features.dim(3);
  const int n = static_cast<int>(rois.size());

  const std::int64_t out_count = static_cast<std::int64_t>(n) * c * out_size * out_size;
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out_count, -1);

  if (record) record->rois.clear();

  Tensor out = Tensor::make_op({n, c, out_size, out_size}, {features},
                               [features = features, argmax](TensorNode& node) mutable {
                                 if (!features.requires_grad()) return;
                                 auto& gx = features.grad();
                                 const auto& am = *argmax;
                                 for (std::size_t i = 0; i < node.grad.size(); ++i) {
                                   if (am[i] >= 0) gx[static_cast<std::size_t>(am[i])] += node.grad[i];
                                 }
                               });

  const auto& xv = features.values();
  auto& ov = out.values();
  const double inv_stride = 1.0 / static_cast<double>(branch_stride);

  for (int r = 0; r < n; ++r) {
    const double fx1 = rois[r].x1 * inv_stride;
    const double fy1 = rois[r].y1 * inv_stride;
    const double fx2 = rois[r].x2 * inv_stride;
    const double fy2 = rois[r].y2 * inv_stride;
    const double bin_w = (fx2 - fx1) / out_size;
    const double bin_h = (fy2 - fy1) / out_size;

    RoiBinRecord::PerRoi rec;
    if (record) {
      rec.fx1 = fx1;
      rec.fy1 = fy1;
      rec.fx2 = fx2;
      rec.fy2 = fy2;
    }

    for (int by = 0; by < out_size; ++by) {
      int y0 = static_cast<int>(std::floor(fy1 + by * bin_h));
      int y1 = static_cast<int>(std::ceil(fy1 + (by + 1) * bin_h));
      y0 = clamp_int(y0, 0, h);
      y1 = clamp_int(y1, 0, h);
      if (y0 >= y1) {
        y0 = clamp_int(y0, 0, h - 1);
        y1 = y0 + 1;
      }
      for (int bx = 0; bx < out_size; ++bx) {
        int x0 = static_cast<int>(std::floor(fx1 + bx * bin_w));
        int x1 = static_cast<int>(std::ceil(fx1 + (bx + 1) * bin_w));
        x0 = clamp_int(x0, 0, w);
        x1 = clamp_int(x1, 0, w);
        if (x0 >= x1) {
          x0 = clamp_int(x0, 0, w - 1);
          x1 = x0 + 1;
        }
        if (record) rec.bins.push_back({y0, y1, x0, x1});
        for (int ch = 0; ch < c; ++ch) {
          const double* plane = xv.data() + static_cast<std::int64_t>(ch) * h * w;
          double best = -std::numeric_limits<double>::infinity();
          std::int64_t best_idx = -1;
          for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
              const double v = plane[static_cast<std::int64_t>(y) * w + x];
              if (v > best) {
                best = v;
                best_idx = static_cast<std::int64_t>(ch) * h * w + static_cast<std::int64_t>(y) * w + x;
              }
            }
          const std::int64_t oi =
              ((static_cast<std::int64_t>(r) * c + ch) * out_size + by) * out_size + bx;
          ov[static_cast<std::size_t>(oi)] = best;
          (*argmax)[static_cast<std::size_t>(oi)] = best_idx;
        }
      }
    }
    if (record) record->rois.push_back(std::move(rec));
  }
  return out;
}

Tensor roi_align(const Tensor& features, const BoxList& rois, int out_size, int branch_stride) {
  if (features.ndim() != 4 || features.dim(0) != 1) {
    throw DimensionError("roi_align: features must be (1,C,H,W), got " +
                         shape_str(features.shape()));
  }
  if (out_size < 1) throw DimensionError("roi_align: out_size must be >= 1");
  if (rois.empty()) throw DimensionError("roi_align: empty ROI list");
  const int c = features.dim(1), h = features.dim(2), w = features.dim(3);
  const int n = static_cast<int>(rois.size());

  // Each output cell averages 4 bilinear samples; each sample touches up to
  // 4 input cells. Stash (index, weight) pairs for the backward pass.
  struct Tap {
    std::int64_t idx;
    double weight;
  };
  auto taps = std::make_shared<std::vector<std::vector<Tap>>>(
      static_cast<std::size_t>(n) * c * out_size * out_size);

  Tensor out = Tensor::make_op({n, c, out_size, out_size}, {features},
                               [features = features, taps](TensorNode& node) mutable {
                                 if (!features.requires_grad()) return;
                                 auto& gx = features.grad();
                                 for (std::size_t i = 0; i < node.grad.size(); ++i) {
                                   const double g = node.grad[i];
                                   for (const auto& t : (*taps)[i]) gx[static_cast<std::size_t>(t.idx)] += g * t.weight;
                                 }
                               });

  const auto& xv = features.values();
  auto& ov = out.values();
  const double inv_stride = 1.0 / static_cast<double>(branch_stride);

  for (int r = 0; r < n; ++r) {
    const double fx1 = rois[r].x1 * inv_stride;
    const double fy1 = rois[r].y1 * inv_stride;
    const double roi_w = std::max(rois[r].x2 * inv_stride - fx1, 1e-9);
    const double roi_h = std::max(rois[r].y2 * inv_stride - fy1, 1e-9);
    const double bin_w = roi_w / out_size;
    const double bin_h = roi_h / out_size;

    for (int ch = 0; ch < c; ++ch) {
      const double* plane = xv.data() + static_cast<std::int64_t>(ch) * h * w;
      const std::int64_t base = static_cast<std::int64_t>(ch) * h * w;
      for (int by = 0; by < out_size; ++by)
        for (int bx = 0; bx < out_size; ++bx) {
          const std::int64_t oi =
              ((static_cast<std::int64_t>(r) * c + ch) * out_size + by) * out_size + bx;
          auto& cell_taps = (*taps)[static_cast<std::size_t>(oi)];
          double acc = 0.0;
          for (int sy = 0; sy < 2; ++sy)
            for (int sx = 0; sx < 2; ++sx) {
              // Sample at the cell-center convention: -0.5 aligns feature
              // cell centers with integer coordinates.
              const double py = fy1 + (by + (sy + 0.5) / 2.0) * bin_h - 0.5;
              const double px = fx1 + (bx + (sx + 0.5) / 2.0) * bin_w - 0.5;
              const double cy = std::min(std::max(py, 0.0), static_cast<double>(h - 1));
              const double cx = std::min(std::max(px, 0.0), static_cast<double>(w - 1));
              const int y0 = static_cast<int>(std::floor(cy));
              const int x0 = static_cast<int>(std::floor(cx));
              const int y1 = std::min(y0 + 1, h - 1);
              const int x1 = std::min(x0 + 1, w - 1);
              const double ly = cy - y0;
              const double lx = cx - x0;
              const double w00 = (1 - ly) * (1 - lx) * 0.25;
              const double w01 = (1 - ly) * lx * 0.25;
              const double w10 = ly * (1 - lx) * 0.25;
              const double w11 = ly * lx * 0.25;
              acc += w00 * plane[static_cast<std::int64_t>(y0) * w + x0] +
                     w01 * plane[static_cast<std::int64_t>(y0) * w + x1] +
                     w10 * plane[static_cast<std::int64_t>(y1) * w + x0] +
                     w11 * plane[static_cast<std::int64_t>(y1) * w + x1];
              cell_taps.push_back({base + static_cast<std::int64_t>(y0) * w + x0, w00});
              cell_taps.push_back({base + static_cast<std::int64_t>(y0) * w + x1, w01});
              cell_taps.push_back({base + static_cast<std::int64_t>(y1) * w + x0, w10});
              cell_taps.push_back({base + static_cast<std::int64_t>(y1) * w + x1, w11});
            }
          ov[static_cast<std::size_t>(oi)] = acc;
        }
    }
  }
  return out;
}

}  // namespace grcn
