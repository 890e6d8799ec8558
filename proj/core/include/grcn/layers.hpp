#ifndef GRCN_LAYERS_HPP
#define GRCN_LAYERS_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace grcn {

enum class LayerKind { kConv, kMaxPool, kRelu, kLinear };

// One layer of a branch. conv/linear carry channel counts; maxpool and relu
// have no parameters.
struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int padding = 0;
  int in_channels = 0;
  int out_channels = 0;
};

LayerSpec conv_spec(int in_channels, int out_channels, int kernel, int stride, int padding);
LayerSpec maxpool_spec(int kernel, int stride, int padding = 0);
LayerSpec relu_spec();
LayerSpec linear_spec(int in_features, int out_features);

// Throws ConfigError when a spec violates its own invariants.
void validate_layer(const LayerSpec& spec);

// Learned parameter count (conv: O*I*kh*kw + O, linear: D*M + M, else 0).
std::int64_t layer_param_count(const LayerSpec& spec);

// Product of all layer strides: the spacing in image pixels between adjacent
// output cells once the stack is applied.
int effective_stride(const std::vector<LayerSpec>& layers);

std::string layer_kind_name(LayerKind kind);

// A run of layers optionally wrapped with a skip connection. When residual,
// the stage output is relu(main(x) + skip(x)) where skip is identity, or a
// 1x1 projection conv when the channel count or stride changes.
struct StageSpec {
  std::vector<LayerSpec> main;
  bool residual = false;

  int stride() const { return effective_stride(main); }
  int out_channels() const;
  int in_channels() const;
  bool needs_projection() const;
};

// Flattened main-path layers of a stage list, the form effective_stride and
// the architecture table operate on.
std::vector<LayerSpec> flatten_stages(const std::vector<StageSpec>& stages);

}  // namespace grcn

#endif  // GRCN_LAYERS_HPP
