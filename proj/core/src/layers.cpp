#include "grcn/layers.hpp"

#include "grcn/errors.hpp"

namespace grcn {

LayerSpec conv_spec(int in_channels, int out_channels, int kernel, int stride, int padding) {
  LayerSpec s;
  s.kind = LayerKind::kConv;
  s.kernel_h = s.kernel_w = kernel;
  s.stride = stride;
  s.padding = padding;
  s.in_channels = in_channels;
  s.out_channels = out_channels;
  validate_layer(s);
  return s;
}

LayerSpec maxpool_spec(int kernel, int stride, int padding) {
  LayerSpec s;
  s.kind = LayerKind::kMaxPool;
  s.kernel_h = s.kernel_w = kernel;
  s.stride = stride;
  s.padding = padding;
  validate_layer(s);
  return s;
}

LayerSpec relu_spec() {
  LayerSpec s;
  s.kind = LayerKind::kRelu;
  return s;
}

LayerSpec linear_spec(int in_features, int out_features) {
  LayerSpec s;
  s.kind = LayerKind::kLinear;
  s.in_channels = in_features;
  s.out_channels = out_features;
  validate_layer(s);
  return s;
}

void validate_layer(const LayerSpec& spec) {
  if (spec.stride < 1) throw ConfigError("layer stride must be >= 1");
  if (spec.kernel_h < 1 || spec.kernel_w < 1) throw ConfigError("layer kernel dims must be >= 1");
  if (spec.padding < 0) throw ConfigError("layer padding must be >= 0");
  switch (spec.kind) {
    case LayerKind::kConv:
    case LayerKind::kLinear:
      if (spec.in_channels < 1 || spec.out_channels < 1) {
        throw ConfigError("conv/linear layers need positive channel counts");
      }
      break;
    case LayerKind::kMaxPool:
    case LayerKind::kRelu:
      break;
  }
}

std::int64_t layer_param_count(const LayerSpec& spec) {
  switch (spec.kind) {
    case LayerKind::kConv:
      return static_cast<std::int64_t>(spec.out_channels) * spec.in_channels * spec.kernel_h *
                 spec.kernel_w +
             spec.out_channels;
    case LayerKind::kLinear:
      return static_cast<std::int64_t>(spec.in_channels) * spec.out_channels + spec.out_channels;
    default:
      return 0;
  }
}

int effective_stride(const std::vector<LayerSpec>& layers) {
  int product = 1;
  for (const auto& l : layers) product *= l.stride;
  return product;
}

std::string layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kLinear: return "linear";
  }
  return "?";
}

int StageSpec::out_channels() const {
  for (auto it = main.rbegin(); it != main.rend(); ++it) {
    if (it->kind == LayerKind::kConv || it->kind == LayerKind::kLinear) return it->out_channels;
  }
  return 0;
}

int StageSpec::in_channels() const {
  for (const auto& l : main) {
    if (l.kind == LayerKind::kConv || l.kind == LayerKind::kLinear) return l.in_channels;
  }
  return 0;
}

bool StageSpec::needs_projection() const {
  return residual && (stride() != 1 || in_channels() != out_channels());
}

std::vector<LayerSpec> flatten_stages(const std::vector<StageSpec>& stages) {
  std::vector<LayerSpec> out;
  for (const auto& st : stages) out.insert(out.end(), st.main.begin(), st.main.end());
  return out;
}

}  // namespace grcn
