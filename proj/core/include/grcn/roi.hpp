#ifndef GRCN_ROI_HPP
#define GRCN_ROI_HPP

#include <array>
#include <vector>

#include "grcn/boxes.hpp"
#include "grcn/tensor.hpp"

namespace grcn {

// Bin geometry captured during pooling, for stride-arithmetic checks.
struct RoiBinRecord {
  struct PerRoi {
    double fx1, fy1, fx2, fy2;                 // ROI in feature coordinates
    std::vector<std::array<int, 4>> bins;      // per bin: y0, y1, x0, x1 (cells)
  };
  std::vector<PerRoi> rois;
};

// Plain max ROI pooling. Each ROI is mapped into feature coordinates by
// dividing by branch_stride, split into out_size^2 bins (floor for the start
// boundary, ceil for the end, empty bins clamped to one cell), and
// max-reduced per bin. Backward routes each bin's gradient to its argmax
// cell (first in row-major scan on ties). ROIs falling outside the map are
// clamped, never an error. features: (1,C,H,W) -> (n,C,out,out).
Tensor roi_pool(const Tensor& features, const BoxList& rois, int out_size, int branch_stride,
                RoiBinRecord* record = nullptr);

// Bilinear variant: 2x2 sample points per bin, averaged. Differentiable
// through the sample weights.
Tensor roi_align(const Tensor& features, const BoxList& rois, int out_size, int branch_stride);

}  // namespace grcn

#endif  // GRCN_ROI_HPP
