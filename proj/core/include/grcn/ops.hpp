#ifndef GRCN_OPS_HPP
#define GRCN_OPS_HPP

#include <vector>

#include "grcn/tensor.hpp"

namespace grcn {

// Elementwise. Shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);

// (M,K) x (K,N) -> (M,N)
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);

// x:(N,D) w:(D,M) b:(M) -> (N,M)
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// input:(N,C,H,W) weight:(O,I,kh,kw) bias:(O); zero padding.
// Output spatial dims: floor((in + 2p - k)/s) + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding);

// Same shape formula as conv2d. Backward routes each output's gradient to the
// first maximal input cell in row-major window scan; padded cells count as
// zeros and swallow the gradient if they win.
Tensor maxpool2d(const Tensor& input, int kernel_h, int kernel_w, int stride,
                 int padding);

// Row-wise softmax with max subtraction. Throws NumericError on non-finite
// input.
Tensor softmax_rows(const Tensor& x);

Tensor reshape(const Tensor& x, std::vector<int> new_shape);
// (N,C,H,W) -> (N, C*H*W)
Tensor flatten2d(const Tensor& x);
// (N,C,H,W) -> (N,C), mean over the spatial cells.
Tensor global_avg_pool(const Tensor& x);

// 2-D column slice [col_begin, col_end).
Tensor slice_cols(const Tensor& x, int col_begin, int col_end);
Tensor concat_cols(const std::vector<Tensor>& parts);
// Stack 2-D blocks with equal column counts along the row axis.
Tensor concat_rows(const std::vector<Tensor>& parts);
// Row gather; an index may repeat.
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);
// Per-row slice of `len` columns starting at offsets[r]; used to pick the
// target class's box deltas out of a (N, 4*num_classes) block.
Tensor gather_row_slices(const Tensor& x, const std::vector<int>& offsets, int len);

// Conv output (1, A*group, H, W) -> (H*W*A, group) rows ordered cell
// row-major then anchor index, matching AnchorGrid ordering.
Tensor anchor_major_rows(const Tensor& conv_out, int group);

// Mean over rows of (lse(row) - row[label]).
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& labels);

// Elementwise smooth-L1 of (pred - target), summed and divided by
// `normalizer`.
Tensor smooth_l1_loss(const Tensor& pred, const std::vector<double>& target,
                      double normalizer);

// Scalar smooth-L1: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
double smooth_l1(double x);

// Shape helper shared by conv2d / maxpool2d / pooling layers.
int conv_output_dim(int input, int kernel, int stride, int padding);

// Bilinear image resize on values only (no gradient); preprocessing helper.
Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);

}  // namespace grcn

#endif  // GRCN_OPS_HPP
