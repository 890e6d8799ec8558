#include "grcn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "grcn/errors.hpp"
#include "grcn/threading.hpp"

namespace grcn {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.ndim() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
  }
}

}  // namespace

int conv_output_dim(int input, int kernel, int stride, int padding) {
  const int padded = input + 2 * padding;
  if (kernel > padded) {
    throw DimensionError("kernel " + std::to_string(kernel) +
                         " larger than padded input " + std::to_string(padded));
  }
  return (padded - kernel) / stride + 1;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::make_op(a.shape(), {a, b}, [a = a, b = b](TensorNode& node) mutable {
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += node.grad[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += node.grad[i];
    }
  });
  auto& ov = out.values();
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::make_op(a.shape(), {a, b}, [a = a, b = b](TensorNode& node) mutable {
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += node.grad[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= node.grad[i];
    }
  });
  auto& ov = out.values();
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out = Tensor::make_op(a.shape(), {a}, [a = a, factor](TensorNode& node) mutable {
    if (!a.requires_grad()) return;
    auto& ga = a.grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * node.grad[i];
  });
  auto& ov = out.values();
  const auto& av = a.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = factor * av[i];
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = Tensor::make_op(a.shape(), {a}, [a = a](TensorNode& node) mutable {
    if (!a.requires_grad()) return;
    auto& ga = a.grad();
    const auto& av = a.values();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      if (av[i] > 0.0) ga[i] += node.grad[i];
    }
  });
  auto& ov = out.values();
  const auto& av = a.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > 0.0 ? av[i] : 0.0;
  return out;
}

namespace {

// C = A(M,K) * B(K,N), single writer per output row.
void matmul_values(const double* a, const double* b, double* c, int m, int k, int n) {
  parallel_for(m, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      double* crow = c + i * n;
      std::fill(crow, crow + n, 0.0);
      const double* arow = a + i * k;
      for (int p = 0; p < k; ++p) {
        const double av = arow[p];
        if (av == 0.0) continue;
        const double* brow = b + static_cast<std::int64_t>(p) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

// C += A(M,K) * B(K,N)
void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::int64_t>(i) * k;
    double* crow = c + static_cast<std::int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<std::int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A^T(M,K)·... : c(K,N) += a(M,K)^T * b(M,N)
void matmul_at_b_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::int64_t>(i) * k;
    const double* brow = b + static_cast<std::int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + static_cast<std::int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c(M,K) += a(M,N) * b(K,N)^T
void matmul_a_bt_acc(const double* a, const double* b, double* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::int64_t>(i) * n;
    double* crow = c + static_cast<std::int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double* brow = b + static_cast<std::int64_t>(p) * n;
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dims disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Tensor out = Tensor::make_op({m, n}, {a, b}, [a = a, b = b, m, k, n](TensorNode& node) mutable {
    if (a.requires_grad()) {
      matmul_a_bt_acc(node.grad.data(), b.values().data(), a.grad().data(), m, n, k);
    }
    if (b.requires_grad()) {
      matmul_at_b_acc(a.values().data(), node.grad.data(), b.grad().data(), m, k, n);
    }
  });
  matmul_values(a.values().data(), b.values().data(), out.values().data(), m, k, n);
  return out;
}

Tensor transpose2d(const Tensor& a) {
  require_rank(a, 2, "transpose2d");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::make_op({n, m}, {a}, [a = a, m, n](TensorNode& node) mutable {
    if (!a.requires_grad()) return;
    auto& ga = a.grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        ga[static_cast<std::size_t>(i) * n + j] += node.grad[static_cast<std::size_t>(j) * m + i];
  });
  auto& ov = out.values();
  const auto& av = a.values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      ov[static_cast<std::size_t>(j) * m + i] = av[static_cast<std::size_t>(i) * n + j];
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  require_rank(b, 1, "linear");
  const int n = x.dim(0), d = x.dim(1), m = w.dim(1);
  if (w.dim(0) != d) {
    throw DimensionError("linear: input features " + std::to_string(d) +
                         " do not match weight rows " + std::to_string(w.dim(0)));
  }
  if (b.dim(0) != m) {
    throw DimensionError("linear: bias length " + std::to_string(b.dim(0)) +
                         " does not match weight cols " + std::to_string(m));
  }
  Tensor out = Tensor::make_op({n, m}, {x, w, b}, [x = x, w = w, b = b, n, d, m](TensorNode& node) mutable {
    if (x.requires_grad()) {
      matmul_a_bt_acc(node.grad.data(), w.values().data(), x.grad().data(), n, m, d);
    }
    if (w.requires_grad()) {
      matmul_at_b_acc(x.values().data(), node.grad.data(), w.grad().data(), n, d, m);
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (int r = 0; r < n; ++r)
        for (int j = 0; j < m; ++j) gb[j] += node.grad[static_cast<std::size_t>(r) * m + j];
    }
  });
  matmul_values(x.values().data(), w.values().data(), out.values().data(), n, d, m);
  auto& ov = out.values();
  const auto& bv = b.values();
  for (int r = 0; r < n; ++r)
    for (int j = 0; j < m; ++j) ov[static_cast<std::size_t>(r) * m + j] += bv[j];
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding) {
  require_rank(input, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  require_rank(bias, 1, "conv2d");
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  if (padding < 0) throw DimensionError("conv2d: padding must be >= 0");
  const int n = input.dim(0), ci = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int co = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != ci) {
    throw DimensionError("conv2d: input channel axis " + std::to_string(ci) +
                         " does not match weight input axis " + std::to_string(weight.dim(1)));
  }
  if (bias.dim(0) != co) {
    throw DimensionError("conv2d: bias length " + std::to_string(bias.dim(0)) +
                         " does not match output channels " + std::to_string(co));
  }
  const int oh = conv_output_dim(h, kh, stride, padding);
  const int ow = conv_output_dim(w, kw, stride, padding);

  Tensor out = Tensor::make_op(
      {n, co, oh, ow}, {input, weight, bias},
      [input = input, weight = weight, bias = bias, n, ci, h, w, co, kh, kw, oh, ow, stride,
       padding](TensorNode& node) mutable {
        const auto& gout = node.grad;
        const auto& xv = input.values();
        const auto& wv = weight.values();
        const std::int64_t in_plane = static_cast<std::int64_t>(h) * w;
        const std::int64_t out_plane = static_cast<std::int64_t>(oh) * ow;

        if (bias.requires_grad()) {
          auto& gb = bias.grad();
          for (int b = 0; b < n; ++b)
            for (int o = 0; o < co; ++o) {
              const double* gp = gout.data() + ((static_cast<std::int64_t>(b) * co + o)) * out_plane;
              double acc = 0.0;
              for (std::int64_t i = 0; i < out_plane; ++i) acc += gp[i];
              gb[o] += acc;
            }
        }
        if (weight.requires_grad()) {
          auto& gw = weight.grad();
          parallel_for(co, [&](std::int64_t olo, std::int64_t ohi) {
            for (std::int64_t o = olo; o < ohi; ++o) {
              for (int b = 0; b < n; ++b) {
                const double* gp = gout.data() + ((static_cast<std::int64_t>(b) * co + o)) * out_plane;
                for (int i = 0; i < ci; ++i) {
                  const double* xp = xv.data() + ((static_cast<std::int64_t>(b) * ci + i)) * in_plane;
                  for (int r = 0; r < kh; ++r)
                    for (int c = 0; c < kw; ++c) {
                      double acc = 0.0;
                      for (int y = 0; y < oh; ++y) {
                        const int iy = y * stride - padding + r;
                        if (iy < 0 || iy >= h) continue;
                        const double* grow = gp + static_cast<std::int64_t>(y) * ow;
                        const double* xrow = xp + static_cast<std::int64_t>(iy) * w;
                        for (int x = 0; x < ow; ++x) {
                          const int ix = x * stride - padding + c;
                          if (ix < 0 || ix >= w) continue;
                          acc += grow[x] * xrow[ix];
                        }
                      }
                      gw[((o * ci + i) * kh + r) * static_cast<std::size_t>(kw) + c] += acc;
                    }
                }
              }
            }
          });
        }
        if (input.requires_grad()) {
          auto& gx = input.grad();
          parallel_for(ci, [&](std::int64_t ilo, std::int64_t ihi) {
            for (std::int64_t i = ilo; i < ihi; ++i) {
              for (int b = 0; b < n; ++b) {
                double* gxp = gx.data() + ((static_cast<std::int64_t>(b) * ci + i)) * in_plane;
                for (int o = 0; o < co; ++o) {
                  const double* gp = gout.data() + ((static_cast<std::int64_t>(b) * co + o)) * out_plane;
                  const double* wp = wv.data() + ((static_cast<std::int64_t>(o) * ci + i)) * kh * kw;
                  for (int r = 0; r < kh; ++r)
                    for (int c = 0; c < kw; ++c) {
                      const double wval = wp[static_cast<std::size_t>(r) * kw + c];
                      if (wval == 0.0) continue;
                      for (int y = 0; y < oh; ++y) {
                        const int iy = y * stride - padding + r;
                        if (iy < 0 || iy >= h) continue;
                        const double* grow = gp + static_cast<std::int64_t>(y) * ow;
                        double* gxrow = gxp + static_cast<std::int64_t>(iy) * w;
                        for (int x = 0; x < ow; ++x) {
                          const int ix = x * stride - padding + c;
                          if (ix < 0 || ix >= w) continue;
                          gxrow[ix] += grow[x] * wval;
                        }
                      }
                    }
                }
              }
            }
          });
        }
      });

  const auto& xv = input.values();
  const auto& wv = weight.values();
  const auto& bv = bias.values();
  auto& ov = out.values();
  const std::int64_t in_plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t out_plane = static_cast<std::int64_t>(oh) * ow;
  parallel_for(co, [&](std::int64_t olo, std::int64_t ohi) {
    for (std::int64_t o = olo; o < ohi; ++o) {
      for (int b = 0; b < n; ++b) {
        double* op = ov.data() + ((static_cast<std::int64_t>(b) * co + o)) * out_plane;
        std::fill(op, op + out_plane, bv[o]);
        for (int i = 0; i < ci; ++i) {
          const double* xp = xv.data() + ((static_cast<std::int64_t>(b) * ci + i)) * in_plane;
          const double* wp = wv.data() + ((static_cast<std::int64_t>(o) * ci + i)) * kh * kw;
          for (int r = 0; r < kh; ++r)
            for (int c = 0; c < kw; ++c) {
              const double wval = wp[static_cast<std::size_t>(r) * kw + c];
              if (wval == 0.0) continue;
              for (int y = 0; y < oh; ++y) {
                const int iy = y * stride - padding + r;
                if (iy < 0 || iy >= h) continue;
                double* orow = op + static_cast<std::int64_t>(y) * ow;
                const double* xrow = xp + static_cast<std::int64_t>(iy) * w;
                for (int x = 0; x < ow; ++x) {
                  const int ix = x * stride - padding + c;
                  if (ix < 0 || ix >= w) continue;
                  orow[x] += wval * xrow[ix];
                }
              }
            }
        }
      }
    }
  });
  return out;
}

Tensor maxpool2d(const Tensor& input, int kernel_h, int kernel_w, int stride, int padding) {
  require_rank(input, 4, "maxpool2d");
  if (kernel_h < 1 || kernel_w < 1) throw DimensionError("maxpool2d: kernel dims must be >= 1");
  if (stride < 1) throw DimensionError("maxpool2d: stride must be >= 1");
  if (padding < 0) throw DimensionError("maxpool2d: padding must be >= 0");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int oh = conv_output_dim(h, kernel_h, stride, padding);
  const int ow = conv_output_dim(w, kernel_w, stride, padding);

  const std::int64_t out_count = static_cast<std::int64_t>(n) * c * oh * ow;
  // Flat input index of the winning cell, -1 when a padded zero wins.
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out_count, -1);

  Tensor out = Tensor::make_op({n, c, oh, ow}, {input}, [input = input, argmax](TensorNode& node) mutable {
    if (!input.requires_grad()) return;
    auto& gx = input.grad();
    const auto& am = *argmax;
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      if (am[i] >= 0) gx[static_cast<std::size_t>(am[i])] += node.grad[i];
    }
  });

  const auto& xv = input.values();
  auto& ov = out.values();
  std::int64_t oi = 0;
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const double* xp = xv.data() + ((static_cast<std::int64_t>(b) * c + ch)) * h * w;
      const std::int64_t base = ((static_cast<std::int64_t>(b) * c + ch)) * h * w;
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x, ++oi) {
          double best = -std::numeric_limits<double>::infinity();
          std::int64_t best_idx = -1;
          for (int r = 0; r < kernel_h; ++r) {
            const int iy = y * stride - padding + r;
            for (int cc = 0; cc < kernel_w; ++cc) {
              const int ix = x * stride - padding + cc;
              const bool inside = iy >= 0 && iy < h && ix >= 0 && ix < w;
              const double v = inside ? xp[static_cast<std::int64_t>(iy) * w + ix] : 0.0;
              if (v > best) {
                best = v;
                best_idx = inside ? base + static_cast<std::int64_t>(iy) * w + ix : -1;
              }
            }
          }
          ov[static_cast<std::size_t>(oi)] = best;
          (*argmax)[static_cast<std::size_t>(oi)] = best_idx;
        }
    }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  const int n = x.dim(0), d = x.dim(1);
  for (double v : x.values()) {
    if (!std::isfinite(v)) throw NumericError("softmax_rows: non-finite input");
  }
  Tensor out = Tensor::make_op({n, d}, {x}, [x = x, n, d](TensorNode& node) mutable {
    if (!x.requires_grad()) return;
    auto& gx = x.grad();
    for (int r = 0; r < n; ++r) {
      const double* y = node.values.data() + static_cast<std::int64_t>(r) * d;
      const double* gy = node.grad.data() + static_cast<std::int64_t>(r) * d;
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += gy[j] * y[j];
      double* g = gx.data() + static_cast<std::int64_t>(r) * d;
      for (int j = 0; j < d; ++j) g[j] += y[j] * (gy[j] - dot);
    }
  });
  const auto& xv = x.values();
  auto& ov = out.values();
  for (int r = 0; r < n; ++r) {
    const double* row = xv.data() + static_cast<std::int64_t>(r) * d;
    double mx = row[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    double* orow = ov.data() + static_cast<std::int64_t>(r) * d;
    for (int j = 0; j < d; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (int j = 0; j < d; ++j) orow[j] /= sum;
  }
  return out;
}

Tensor reshape(const Tensor& x, std::vector<int> new_shape) {
  if (shape_numel(new_shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(new_shape));
  }
  Tensor out = Tensor::make_op(std::move(new_shape), {x}, [x = x](TensorNode& node) mutable {
    if (!x.requires_grad()) return;
    auto& gx = x.grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += node.grad[i];
  });
  out.values() = x.values();
  return out;
}

Tensor flatten2d(const Tensor& x) {
  require_rank(x, 4, "flatten2d");
  return reshape(x, {x.dim(0), x.dim(1) * x.dim(2) * x.dim(3)});
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool");
  const int n = x.dim(0), c = x.dim(1);
  const std::int64_t plane = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
  Tensor out = Tensor::make_op({n, c}, {x}, [x = x, n, c, plane](TensorNode& node) mutable {
    if (!x.requires_grad()) return;
    auto& gx = x.grad();
    const double inv = 1.0 / static_cast<double>(plane);
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < c; ++ch) {
        const double g = node.grad[static_cast<std::size_t>(b) * c + ch] * inv;
        double* gp = gx.data() + ((static_cast<std::int64_t>(b) * c + ch)) * plane;
        for (std::int64_t i = 0; i < plane; ++i) gp[i] += g;
      }
  });
  const auto& xv = x.values();
  auto& ov = out.values();
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const double* xp = xv.data() + ((static_cast<std::int64_t>(b) * c + ch)) * plane;
      double acc = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) acc += xp[i];
      ov[static_cast<std::size_t>(b) * c + ch] = acc / static_cast<double>(plane);
    }
  return out;
}

Tensor slice_cols(const Tensor& x, int col_begin, int col_end) {
  require_rank(x, 2, "slice_cols");
  const int n = x.dim(0), d = x.dim(1);
  if (col_begin < 0 || col_end > d || col_begin >= col_end) {
    throw DimensionError("slice_cols: bad range [" + std::to_string(col_begin) + "," +
                         std::to_string(col_end) + ") for width " + std::to_string(d));
  }
  const int width = col_end - col_begin;
  Tensor out =
      Tensor::make_op({n, width}, {x}, [x = x, n, d, col_begin, width](TensorNode& node) mutable {
        if (!x.requires_grad()) return;
        auto& gx = x.grad();
        for (int r = 0; r < n; ++r)
          for (int j = 0; j < width; ++j)
            gx[static_cast<std::size_t>(r) * d + col_begin + j] +=
                node.grad[static_cast<std::size_t>(r) * width + j];
      });
  const auto& xv = x.values();
  auto& ov = out.values();
  for (int r = 0; r < n; ++r)
    for (int j = 0; j < width; ++j)
      ov[static_cast<std::size_t>(r) * width + j] = xv[static_cast<std::size_t>(r) * d + col_begin + j];
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const int n = parts[0].dim(0);
  int total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != 2 || p.dim(0) != n) {
      throw DimensionError("concat_cols: all inputs must be 2-D with equal rows");
    }
    total += p.dim(1);
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  Tensor out = Tensor::make_op({n, total}, parents, [parents, n, total](TensorNode& node) mutable {
    int off = 0;
    for (auto& p : parents) {
      const int w = p.dim(1);
      if (p.requires_grad()) {
        auto& gp = p.grad();
        for (int r = 0; r < n; ++r)
          for (int j = 0; j < w; ++j)
            gp[static_cast<std::size_t>(r) * w + j] +=
                node.grad[static_cast<std::size_t>(r) * total + off + j];
      }
      off += w;
    }
  });
  auto& ov = out.values();
  int off = 0;
  for (const auto& p : parts) {
    const int w = p.dim(1);
    const auto& pv = p.values();
    for (int r = 0; r < n; ++r)
      for (int j = 0; j < w; ++j)
        ov[static_cast<std::size_t>(r) * total + off + j] = pv[static_cast<std::size_t>(r) * w + j];
    off += w;
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const int d = parts[0].dim(1);
  int total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != 2 || p.dim(1) != d) {
      throw DimensionError("concat_rows: all inputs must be 2-D with equal columns");
    }
    total += p.dim(0);
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  Tensor out = Tensor::make_op({total, d}, parents, [parents, d](TensorNode& node) mutable {
    std::size_t off = 0;
    for (auto& p : parents) {
      const std::size_t count = static_cast<std::size_t>(p.size());
      if (p.requires_grad()) {
        auto& gp = p.grad();
        for (std::size_t i = 0; i < count; ++i) gp[i] += node.grad[off + i];
      }
      off += count;
    }
  });
  auto& ov = out.values();
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& pv = p.values();
    std::copy(pv.begin(), pv.end(), ov.begin() + static_cast<std::ptrdiff_t>(off));
    off += pv.size();
  }
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
  require_rank(x, 2, "gather_rows");
  const int n = x.dim(0), d = x.dim(1);
  for (int r : rows) {
    if (r < 0 || r >= n) {
      throw DimensionError("gather_rows: row " + std::to_string(r) + " out of range [0," +
                           std::to_string(n) + ")");
    }
  }
  const int m = static_cast<int>(rows.size());
  if (m == 0) throw DimensionError("gather_rows: empty row list");
  Tensor out = Tensor::make_op({m, d}, {x}, [x = x, rows, d, m](TensorNode& node) mutable {
    if (!x.requires_grad()) return;
    auto& gx = x.grad();
    for (int i = 0; i < m; ++i) {
      const std::size_t src = static_cast<std::size_t>(i) * d;
      const std::size_t dst = static_cast<std::size_t>(rows[i]) * d;
      for (int j = 0; j < d; ++j) gx[dst + j] += node.grad[src + j];
    }
  });
  const auto& xv = x.values();
  auto& ov = out.values();
  for (int i = 0; i < m; ++i) {
    const std::size_t src = static_cast<std::size_t>(rows[i]) * d;
    const std::size_t dst = static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) ov[dst + j] = xv[src + j];
  }
  return out;
}

Tensor gather_row_slices(const Tensor& x, const std::vector<int>& offsets, int len) {
  require_rank(x, 2, "gather_row_slices");
  const int n = x.dim(0), d = x.dim(1);
  if (static_cast<int>(offsets.size()) != n) {
    throw DimensionError("gather_row_slices: need one offset per row");
  }
  for (int o : offsets) {
    if (o < 0 || o + len > d) {
      throw DimensionError("gather_row_slices: slice [" + std::to_string(o) + "," +
                           std::to_string(o + len) + ") out of width " + std::to_string(d));
    }
  }
  Tensor out = Tensor::make_op({n, len}, {x}, [x = x, offsets, n, d, len](TensorNode& node) mutable {
    if (!x.requires_grad()) return;
    auto& gx = x.grad();
    for (int r = 0; r < n; ++r)
      for (int j = 0; j < len; ++j)
        gx[static_cast<std::size_t>(r) * d + offsets[r] + j] +=
            node.grad[static_cast<std::size_t>(r) * len + j];
  });
  const auto& xv = x.values();
  auto& ov = out.values();
  for (int r = 0; r < n; ++r)
    for (int j = 0; j < len; ++j)
      ov[static_cast<std::size_t>(r) * len + j] = xv[static_cast<std::size_t>(r) * d + offsets[r] + j];
  return out;
}

Tensor anchor_major_rows(const Tensor& conv_out, int group) {
  require_rank(conv_out, 4, "anchor_major_rows");
  if (conv_out.dim(0) != 1) throw DimensionError("anchor_major_rows: batch must be 1");
  const int c = conv_out.dim(1), h = conv_out.dim(2), w = conv_out.dim(3);
  if (group < 1 || c % group != 0) {
    throw DimensionError("anchor_major_rows: channels " + std::to_string(c) +
                         " not divisible by group " + std::to_string(group));
  }
  const int anchors = c / group;
  const int rows = h * w * anchors;
  // row (cell*anchors + a), col g <- channel a*group + g at that cell
  Tensor out =
      Tensor::make_op({rows, group}, {conv_out}, [conv_out = conv_out, c, h, w, group, anchors](TensorNode& node) mutable {
        if (!conv_out.requires_grad()) return;
        auto& gx = conv_out.grad();
        std::size_t row = 0;
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            for (int a = 0; a < anchors; ++a, ++row)
              for (int g = 0; g < group; ++g) {
                const std::size_t src =
                    ((static_cast<std::size_t>(a) * group + g) * h + y) * w + x;
                gx[src] += node.grad[row * group + g];
              }
      });
  const auto& xv = conv_out.values();
  auto& ov = out.values();
  std::size_t row = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int a = 0; a < anchors; ++a, ++row)
        for (int g = 0; g < group; ++g) {
          const std::size_t src = ((static_cast<std::size_t>(a) * group + g) * h + y) * w + x;
          ov[row * group + g] = xv[src];
        }
  return out;
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& labels) {
  require_rank(logits, 2, "cross_entropy_rows");
  const int n = logits.dim(0), d = logits.dim(1);
  if (static_cast<int>(labels.size()) != n) {
    throw DimensionError("cross_entropy_rows: need one label per row");
  }
  for (int l : labels) {
    if (l < 0 || l >= d) {
      throw DimensionError("cross_entropy_rows: label " + std::to_string(l) +
                           " out of range [0," + std::to_string(d) + ")");
    }
  }
  // Cache softmax for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * d);
  const auto& xv = logits.values();
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    const double* row = xv.data() + static_cast<std::int64_t>(r) * d;
    double mx = row[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    double* prow = probs->data() + static_cast<std::int64_t>(r) * d;
    for (int j = 0; j < d; ++j) {
      prow[j] = std::exp(row[j] - mx);
      sum += prow[j];
    }
    for (int j = 0; j < d; ++j) prow[j] /= sum;
    loss += std::log(sum) + mx - row[labels[r]];
  }
  loss /= static_cast<double>(n);

  Tensor out = Tensor::make_op({1}, {logits}, [logits = logits, labels, probs, n, d](TensorNode& node) mutable {
    if (!logits.requires_grad()) return;
    const double g = node.grad[0] / static_cast<double>(n);
    auto& gx = logits.grad();
    for (int r = 0; r < n; ++r) {
      const double* prow = probs->data() + static_cast<std::int64_t>(r) * d;
      double* grow = gx.data() + static_cast<std::int64_t>(r) * d;
      for (int j = 0; j < d; ++j) grow[j] += g * prow[j];
      grow[labels[r]] -= g;
    }
  });
  out.values()[0] = loss;
  return out;
}

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
  if (image.ndim() != 4) throw DimensionError("resize_bilinear: expected NCHW");
  if (out_h < 1 || out_w < 1) throw DimensionError("resize_bilinear: bad output size");
  const int n = image.dim(0), c = image.dim(1), h = image.dim(2), w = image.dim(3);
  Tensor out = Tensor::zeros({n, c, out_h, out_w});
  const auto& xv = image.values();
  auto& ov = out.values();
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const double* plane = xv.data() + ((static_cast<std::int64_t>(b) * c + ch)) * h * w;
      double* oplane = ov.data() + ((static_cast<std::int64_t>(b) * c + ch)) * out_h * out_w;
      for (int y = 0; y < out_h; ++y) {
        const double py = std::min(std::max((y + 0.5) * sy - 0.5, 0.0), static_cast<double>(h - 1));
        const int y0 = static_cast<int>(py);
        const int y1 = std::min(y0 + 1, h - 1);
        const double ly = py - y0;
        for (int x = 0; x < out_w; ++x) {
          const double px = std::min(std::max((x + 0.5) * sx - 0.5, 0.0), static_cast<double>(w - 1));
          const int x0 = static_cast<int>(px);
          const int x1 = std::min(x0 + 1, w - 1);
          const double lx = px - x0;
          oplane[static_cast<std::int64_t>(y) * out_w + x] =
              (1 - ly) * ((1 - lx) * plane[static_cast<std::int64_t>(y0) * w + x0] +
                          lx * plane[static_cast<std::int64_t>(y0) * w + x1]) +
              ly * ((1 - lx) * plane[static_cast<std::int64_t>(y1) * w + x0] +
                    lx * plane[static_cast<std::int64_t>(y1) * w + x1]);
        }
      }
    }
  return out;
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

Tensor smooth_l1_loss(const Tensor& pred, const std::vector<double>& target, double normalizer) {
  if (static_cast<std::int64_t>(target.size()) != pred.size()) {
    throw DimensionError("smooth_l1_loss: target size " + std::to_string(target.size()) +
                         " does not match prediction size " + std::to_string(pred.size()));
  }
  if (normalizer <= 0.0) throw DimensionError("smooth_l1_loss: normalizer must be positive");
  const auto& pv = pred.values();
  double loss = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) loss += smooth_l1(pv[i] - target[i]);
  loss /= normalizer;

  Tensor out = Tensor::make_op({1}, {pred}, [pred = pred, target, normalizer](TensorNode& node) mutable {
    if (!pred.requires_grad()) return;
    const double g = node.grad[0] / normalizer;
    auto& gp = pred.grad();
    const auto& pv2 = pred.values();
    for (std::size_t i = 0; i < gp.size(); ++i) {
      const double diff = pv2[i] - target[i];
      const double d = std::abs(diff) < 1.0 ? diff : (diff > 0.0 ? 1.0 : -1.0);
      gp[i] += g * d;
    }
  });
  out.values()[0] = loss;
  return out;
}

}  // namespace grcn
