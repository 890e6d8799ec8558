#ifndef GRCN_ATTENTION_HPP
#define GRCN_ATTENTION_HPP

#include <cstdint>
#include <vector>

#include "grcn/tensor.hpp"

namespace grcn {

// Projection matrices of the global-context attention update. All square
// d x d. When w_v is left undefined the context vectors are used unprojected
// (the default: channels of queries and context correspond one-to-one).
struct AttentionWeights {
  Tensor w_p;
  Tensor w_k;
  Tensor w_v;        // optional; !defined() means discarded
  int key_dim = 0;   // k under the sqrt; equals d in single-head mode
  int num_heads = 1;

  bool has_value_projection() const { return w_v.defined(); }
  int dim() const { return w_p.defined() ? w_p.dim(0) : 0; }
};

// Uniform(-1/sqrt(d), 1/sqrt(d)) init, streams keyed by matrix name.
AttentionWeights make_attention_weights(int d, int num_heads, bool use_value_projection,
                                        std::uint64_t seed);

// queries: (q,d) spatial cells of one ROI-pooled proposal; context: (m,d)
// cells of the pooled whole-image map. Returns
//   queries + softmax(Q K^T / sqrt(k)) V'
// with Q = queries W_p^T, K = context W_k^T, V' = context W_v^T (or context
// itself). With num_heads > 1 the channel dim is split evenly, attended per
// head with k = d/num_heads, and re-concatenated before the residual add.
// If attention_rows is non-null the per-head softmax matrices are appended
// to it.
Tensor global_context_attend(const Tensor& queries, const Tensor& context,
                             const AttentionWeights& weights,
                             std::vector<Tensor>* attention_rows = nullptr);

// Context-side projections, computed once per image and shared across that
// image's ROIs: keys = context W_k^T, values = context W_v^T (or context).
struct ProjectedContext {
  Tensor keys;    // (m,d)
  Tensor values;  // (m,d)
};
ProjectedContext project_context(const Tensor& context, const AttentionWeights& weights);

// The query-side half of global_context_attend against an already projected
// context.
Tensor attend_with_context(const Tensor& queries, const AttentionWeights& weights,
                           const ProjectedContext& context,
                           std::vector<Tensor>* attention_rows = nullptr);

}  // namespace grcn

#endif  // GRCN_ATTENTION_HPP
