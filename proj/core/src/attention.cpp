#include "grcn/attention.hpp"

#include <cmath>
#include <string>

#include "grcn/errors.hpp"
#include "grcn/ops.hpp"
#include "grcn/rng.hpp"

namespace grcn {

namespace {

Tensor init_square(int d, std::uint64_t seed, const std::string& name) {
  Tensor t = Tensor::zeros({d, d});
  Rng rng(seed, Rng::stream("attention:" + name));
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

AttentionWeights make_attention_weights(int d, int num_heads, bool use_value_projection,
                                        std::uint64_t seed) {
  if (d <= 0) throw ConfigError("attention: channel dim must be positive");
  if (num_heads < 1) throw ConfigError("attention: num_heads must be >= 1");
  if (d % num_heads != 0) {
    throw ConfigError("attention: dim " + std::to_string(d) + " not divisible by " +
                      std::to_string(num_heads) + " heads");
  }
  AttentionWeights w;
  w.w_p = init_square(d, seed, "w_p");
  w.w_k = init_square(d, seed, "w_k");
  if (use_value_projection) w.w_v = init_square(d, seed, "w_v");
  w.key_dim = d;
  w.num_heads = num_heads;
  return w;
}

ProjectedContext project_context(const Tensor& context, const AttentionWeights& weights) {
  if (context.ndim() != 2 || context.dim(1) != weights.dim()) {
    throw DimensionError("attention: context shape " + shape_str(context.shape()) +
                         " does not match weight dim " + std::to_string(weights.dim()));
  }
  ProjectedContext pc;
  pc.keys = matmul(context, transpose2d(weights.w_k));
  pc.values = weights.has_value_projection() ? matmul(context, transpose2d(weights.w_v))
                                             : context;
  return pc;
}

Tensor attend_with_context(const Tensor& queries, const AttentionWeights& weights,
                           const ProjectedContext& context,
                           std::vector<Tensor>* attention_rows) {
  const int d = weights.dim();
  if (queries.ndim() != 2 || queries.dim(1) != d) {
    throw DimensionError("attention: query shape " + shape_str(queries.shape()) +
                         " does not match weight dim " + std::to_string(d));
  }
  const int heads = weights.num_heads;
  if (heads < 1 || d % heads != 0) {
    throw ConfigError("attention: dim " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (weights.key_dim <= 0) throw ConfigError("attention: key_dim must be positive");

  const Tensor q_proj = matmul(queries, transpose2d(weights.w_p));
  const double k_scale = heads == 1 ? static_cast<double>(weights.key_dim)
                                    : static_cast<double>(d) / heads;
  const double inv_sqrt_k = 1.0 / std::sqrt(k_scale);

  Tensor attended;
  if (heads == 1) {
    Tensor logits = scale(matmul(q_proj, transpose2d(context.keys)), inv_sqrt_k);
    Tensor attn = softmax_rows(logits);
    if (attention_rows) attention_rows->push_back(attn);
    attended = matmul(attn, context.values);
  } else {
    const int dh = d / heads;
    std::vector<Tensor> parts;
    parts.reserve(heads);
    for (int h = 0; h < heads; ++h) {
      Tensor qh = slice_cols(q_proj, h * dh, (h + 1) * dh);
      Tensor kh = slice_cols(context.keys, h * dh, (h + 1) * dh);
      Tensor vh = slice_cols(context.values, h * dh, (h + 1) * dh);
      Tensor attn = softmax_rows(scale(matmul(qh, transpose2d(kh)), inv_sqrt_k));
      if (attention_rows) attention_rows->push_back(attn);
      parts.push_back(matmul(attn, vh));
    }
    attended = concat_cols(parts);
  }
  return add(queries, attended);
}

Tensor global_context_attend(const Tensor& queries, const Tensor& context,
                             const AttentionWeights& weights,
                             std::vector<Tensor>* attention_rows) {
  return attend_with_context(queries, weights, project_context(context, weights),
                             attention_rows);
}

}  // namespace grcn
