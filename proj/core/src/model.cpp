#include "grcn/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "grcn/errors.hpp"
#include "grcn/ops.hpp"
#include "grcn/rng.hpp"

namespace grcn {

Variant variant_from_string(const std::string& name) {
  if (name == "baseline") return Variant::kBaseline;
  if (name == "detect_f") return Variant::kDetectF;
  if (name == "detect_rf") return Variant::kDetectRf;
  if (name == "detect_s") return Variant::kDetectS;
  if (name == "grcn") return Variant::kGrcn;
  if (name == "resnet_det") return Variant::kResnetDet;
  std::string valid;
  for (const auto& v : known_variants()) valid += (valid.empty() ? "" : ", ") + v;
  throw ConfigError("unknown variant '" + name + "' (valid: " + valid + ")");
}

BackboneFamily backbone_from_string(const std::string& name) {
  if (name == "toy-vgg") return BackboneFamily::kToyVgg;
  if (name == "toy-resnet") return BackboneFamily::kToyResnet;
  throw ConfigError("unknown backbone '" + name + "' (valid: toy-vgg, toy-resnet)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kBaseline: return "baseline";
    case Variant::kDetectF: return "detect_f";
    case Variant::kDetectRf: return "detect_rf";
    case Variant::kDetectS: return "detect_s";
    case Variant::kGrcn: return "grcn";
    case Variant::kResnetDet: return "resnet_det";
  }
  return "?";
}

std::string to_string(BackboneFamily f) {
  return f == BackboneFamily::kToyVgg ? "toy-vgg" : "toy-resnet";
}

std::string to_string(HeadKind h) {
  switch (h) {
    case HeadKind::kSharedMlp: return "shared_mlp";
    case HeadKind::kSeparateMlp: return "separate_mlp";
    case HeadKind::kConvBlock: return "conv_block";
  }
  return "?";
}

std::vector<std::string> known_variants() {
  return {"baseline", "detect_f", "detect_rf", "detect_s", "grcn", "resnet_det"};
}

std::vector<std::string> known_backbones() { return {"toy-vgg", "toy-resnet"}; }

std::vector<std::string> valid_variants(BackboneFamily f) {
  if (f == BackboneFamily::kToyVgg) {
    return {"baseline", "detect_f", "detect_rf", "detect_s", "grcn"};
  }
  return {"baseline", "grcn", "resnet_det"};
}

namespace {

// ---- architecture templates ------------------------------------------------

// toy-vgg: three conv+pool blocks, then a branchable tail that owns the last
// pool. Channels 16/32/64/128; four stride-2 pools in the full stack.
StageSpec vgg_block(int in, int out) {
  StageSpec s;
  s.main = {conv_spec(in, out, 3, 1, 1), relu_spec(), maxpool_spec(2, 2)};
  return s;
}

StageSpec vgg_tail(bool keep_pool, int pool_stride) {
  StageSpec s;
  if (keep_pool) s.main.push_back(maxpool_spec(2, pool_stride));
  s.main.push_back(conv_spec(64, 128, 3, 1, 1));
  s.main.push_back(relu_spec());
  return s;
}

// toy-resnet: stem + four residual stages; stride 4*1*2*2(*2).
StageSpec resnet_stem() {
  StageSpec s;
  s.main = {conv_spec(3, 16, 3, 2, 1), relu_spec(), maxpool_spec(2, 2)};
  return s;
}

StageSpec resnet_block(int in, int out, int first_stride) {
  StageSpec s;
  s.main = {conv_spec(in, out, 3, first_stride, 1), relu_spec(), conv_spec(out, out, 3, 1, 1)};
  s.residual = true;
  return s;
}

struct Template {
  std::vector<StageSpec> shared, cls, loc, head_stages;
  HeadKind head = HeadKind::kSharedMlp;
  bool attention = false;
  int roi_out = 7;
};

Template make_template(Variant v, BackboneFamily f) {
  Template t;
  if (f == BackboneFamily::kToyVgg) {
    const std::vector<StageSpec> blocks{vgg_block(3, 16), vgg_block(16, 32), vgg_block(32, 64)};
    switch (v) {
      case Variant::kBaseline:
        t.shared = blocks;
        t.shared.push_back(vgg_tail(true, 2));
        t.head = HeadKind::kSharedMlp;
        break;
      case Variant::kDetectF:
        t.shared = blocks;
        t.cls = {vgg_tail(true, 2)};
        t.loc = {vgg_tail(true, 2)};
        t.head = HeadKind::kSharedMlp;
        break;
      case Variant::kDetectRf:
      case Variant::kDetectS:
        t.shared = blocks;
        t.shared.push_back(vgg_tail(true, 2));
        t.head = HeadKind::kSeparateMlp;
        break;
      case Variant::kGrcn:
        t.shared = blocks;
        t.cls = {vgg_tail(true, 2)};
        t.loc = {vgg_tail(false, 2)};  // last pool removed on the loc branch
        t.head = HeadKind::kSharedMlp;
        t.attention = true;
        break;
      default:
        break;  // rejected by the caller
    }
  } else {
    const StageSpec stem = resnet_stem();
    const StageSpec s1 = resnet_block(16, 16, 1);
    const StageSpec s2 = resnet_block(16, 32, 2);
    const StageSpec s3a = resnet_block(32, 64, 2);
    const StageSpec s3b = resnet_block(64, 64, 1);
    const StageSpec s4 = resnet_block(64, 128, 2);
    switch (v) {
      case Variant::kBaseline:
        // Last stage serves as the per-ROI head, the original protocol.
        t.shared = {stem, s1, s2, s3a, s3b};
        t.head_stages = {s4};
        t.head = HeadKind::kConvBlock;
        t.roi_out = 14;
        break;
      case Variant::kGrcn:
        t.shared = {stem, s1, s2};
        t.cls = {s3a, s3b};
        t.loc = {resnet_block(32, 64, 1), s3b};  // stride-2 entry reduced to 1
        t.head_stages = {s4};
        t.head = HeadKind::kConvBlock;
        t.roi_out = 14;
        t.attention = true;
        break;
      case Variant::kResnetDet:
        // Last stage moved into the trunk with its first stride set to 1.
        t.shared = {stem, s1, s2, s3a, s3b, resnet_block(64, 128, 1)};
        t.head = HeadKind::kSharedMlp;
        t.roi_out = 7;
        break;
      default:
        break;
    }
  }
  return t;
}

int stages_out_channels(const std::vector<StageSpec>& stages, int fallback) {
  for (auto it = stages.rbegin(); it != stages.rend(); ++it) {
    const int c = it->out_channels();
    if (c > 0) return c;
  }
  return fallback;
}

}  // namespace

BoxList select_proposals(const std::vector<double>& objectness_logits,
                         const std::vector<double>& deltas, const AnchorGrid& grid,
                         int image_w, int image_h, int pre_nms_n, int post_nms_n,
                         double nms_threshold, std::vector<double>* kept_scores) {
  const std::size_t a = grid.boxes.size();
  if (objectness_logits.size() != 2 * a || deltas.size() != 4 * a) {
    throw DimensionError("select_proposals: got " + std::to_string(objectness_logits.size() / 2) +
                         " objectness rows and " + std::to_string(deltas.size() / 4) +
                         " delta rows for " + std::to_string(a) + " anchors");
  }
  std::vector<double> scores(a);
  for (std::size_t i = 0; i < a; ++i) {
    // fg probability from the (bg, fg) logit pair
    scores[i] = 1.0 / (1.0 + std::exp(objectness_logits[2 * i] - objectness_logits[2 * i + 1]));
  }
  BoxList decoded(a);
  for (std::size_t i = 0; i < a; ++i) {
    Delta d{deltas[4 * i], deltas[4 * i + 1], deltas[4 * i + 2], deltas[4 * i + 3]};
    decoded[i] = clip_box(decode_box(grid.boxes[i], d), image_w, image_h);
  }
  std::vector<int> order(a);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&scores](int x, int y) {
    if (scores[x] != scores[y]) return scores[x] > scores[y];
    return x < y;
  });
  const std::size_t take = std::min<std::size_t>(order.size(), static_cast<std::size_t>(std::max(pre_nms_n, 0)));
  BoxList candidates(take);
  std::vector<double> cand_scores(take);
  for (std::size_t i = 0; i < take; ++i) {
    candidates[i] = decoded[static_cast<std::size_t>(order[i])];
    cand_scores[i] = scores[static_cast<std::size_t>(order[i])];
  }
  std::vector<int> kept = nms(candidates, cand_scores, nms_threshold);
  if (static_cast<int>(kept.size()) > post_nms_n) kept.resize(static_cast<std::size_t>(post_nms_n));
  BoxList out;
  out.reserve(kept.size());
  if (kept_scores) kept_scores->clear();
  for (int idx : kept) {
    out.push_back(candidates[static_cast<std::size_t>(idx)]);
    if (kept_scores) kept_scores->push_back(cand_scores[static_cast<std::size_t>(idx)]);
  }
  return out;
}

// ---- ModelGraph -------------------------------------------------------------

namespace {

Tensor init_conv_param(const std::string& name, int o, int i, int kh, int kw,
                       std::uint64_t seed) {
  Tensor t = Tensor::zeros({o, i, kh, kw});
  Rng rng(seed, Rng::stream("init:" + name));
  const double bound = std::sqrt(6.0 / (static_cast<double>(i) * kh * kw));
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  t.set_requires_grad(true);
  return t;
}

Tensor init_linear_param(const std::string& name, int d, int m, std::uint64_t seed) {
  Tensor t = Tensor::zeros({d, m});
  Rng rng(seed, Rng::stream("init:" + name));
  const double bound = std::sqrt(6.0 / static_cast<double>(d));
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  t.set_requires_grad(true);
  return t;
}

Tensor init_bias(int n) {
  Tensor t = Tensor::zeros({n});
  t.set_requires_grad(true);
  return t;
}

}  // namespace

ModelGraph ModelGraph::build(Variant variant, BackboneFamily backbone,
                             const ModelOptions& options) {
  {
    const auto valid = valid_variants(backbone);
    if (std::find(valid.begin(), valid.end(), to_string(variant)) == valid.end()) {
      std::string list;
      for (const auto& v : valid) list += (list.empty() ? "" : ", ") + v;
      throw ConfigError("variant '" + to_string(variant) + "' is not defined for backbone '" +
                        to_string(backbone) + "' (valid: " + list + ")");
    }
  }
  if (options.num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (options.anchor_sizes.empty() || options.anchor_ratios.empty()) {
    throw ConfigError("anchor sizes and ratios must be non-empty");
  }
  if (options.bbox_reg_stds.size() != 4) throw ConfigError("bbox_reg_stds needs 4 entries");

  ModelGraph m;
  m.variant_ = variant;
  m.backbone_ = backbone;
  m.options_ = options;

  Template t = make_template(variant, backbone);
  m.spec_.shared_stages = std::move(t.shared);
  m.spec_.cls_stages = std::move(t.cls);
  m.spec_.loc_stages = std::move(t.loc);
  m.spec_.head_stages = std::move(t.head_stages);
  m.spec_.head = t.head;
  m.spec_.roi_out_size = options.roi_out_size > 0 ? options.roi_out_size : t.roi_out;
  m.spec_.context_out_size = options.attention_context_size;
  m.spec_.use_context_attention =
      options.attention_override.has_value() ? *options.attention_override : t.attention;

  const auto seed = options.seed;
  auto add_param = [&m](const std::string& name, Tensor t2) {
    m.params_.emplace_back(name, std::move(t2));
  };
  auto register_stages = [&](const std::string& section, const std::vector<StageSpec>& stages) {
    for (std::size_t si = 0; si < stages.size(); ++si) {
      const auto& st = stages[si];
      for (std::size_t li = 0; li < st.main.size(); ++li) {
        const auto& l = st.main[li];
        const std::string base = section + ".s" + std::to_string(si) + ".l" + std::to_string(li);
        if (l.kind == LayerKind::kConv) {
          add_param(base + ".w",
                    init_conv_param(base + ".w", l.out_channels, l.in_channels, l.kernel_h,
                                    l.kernel_w, seed));
          add_param(base + ".b", init_bias(l.out_channels));
        } else if (l.kind == LayerKind::kLinear) {
          add_param(base + ".w", init_linear_param(base + ".w", l.in_channels, l.out_channels, seed));
          add_param(base + ".b", init_bias(l.out_channels));
        }
      }
      if (st.needs_projection()) {
        const std::string base = section + ".s" + std::to_string(si) + ".proj";
        add_param(base + ".w",
                  init_conv_param(base + ".w", st.out_channels(), st.in_channels(), 1, 1, seed));
        add_param(base + ".b", init_bias(st.out_channels()));
      }
    }
  };

  register_stages("shared", m.spec_.shared_stages);
  register_stages("cls", m.spec_.cls_stages);
  register_stages("loc", m.spec_.loc_stages);
  register_stages("head", m.spec_.head_stages);

  // RPN over the classification-branch features
  const int cls_ch = m.cls_channels();
  const int anchors = static_cast<int>(options.anchor_sizes.size() * options.anchor_ratios.size());
  auto register_rpn = [&](const std::string& prefix, int in_ch) {
    add_param(prefix + ".conv.w",
              init_conv_param(prefix + ".conv.w", options.rpn_channels, in_ch, 3, 3, seed));
    add_param(prefix + ".conv.b", init_bias(options.rpn_channels));
    add_param(prefix + ".obj.w",
              init_conv_param(prefix + ".obj.w", 2 * anchors, options.rpn_channels, 1, 1, seed));
    add_param(prefix + ".obj.b", init_bias(2 * anchors));
    add_param(prefix + ".box.w",
              init_conv_param(prefix + ".box.w", 4 * anchors, options.rpn_channels, 1, 1, seed));
    add_param(prefix + ".box.b", init_bias(4 * anchors));
  };
  register_rpn("rpn", cls_ch);
  if (options.dual_rpn) register_rpn("rpn2", m.loc_channels());

  // Heads
  const int k = options.num_classes;
  int head_feat_dim = 0;
  if (m.spec_.head == HeadKind::kConvBlock) {
    head_feat_dim = stages_out_channels(m.spec_.head_stages, cls_ch);
  } else {
    const int d_in = cls_ch * m.spec_.roi_out_size * m.spec_.roi_out_size;
    auto register_mlp = [&](const std::string& prefix) {
      add_param(prefix + ".fc1.w", init_linear_param(prefix + ".fc1.w", d_in, options.head_hidden, seed));
      add_param(prefix + ".fc1.b", init_bias(options.head_hidden));
      add_param(prefix + ".fc2.w",
                init_linear_param(prefix + ".fc2.w", options.head_hidden, options.head_hidden, seed));
      add_param(prefix + ".fc2.b", init_bias(options.head_hidden));
    };
    if (m.spec_.head == HeadKind::kSharedMlp) {
      register_mlp("head");
    } else {
      register_mlp("head.cls");
      register_mlp("head.loc");
    }
    head_feat_dim = options.head_hidden;
  }
  add_param("head.cls_out.w", init_linear_param("head.cls_out.w", head_feat_dim, k + 1, seed));
  add_param("head.cls_out.b", init_bias(k + 1));
  add_param("head.box_out.w", init_linear_param("head.box_out.w", head_feat_dim, 4 * k, seed));
  add_param("head.box_out.b", init_bias(4 * k));

  if (m.spec_.use_context_attention) {
    m.attention_ = make_attention_weights(cls_ch, options.attention_heads,
                                          options.attention_value_projection, seed);
    add_param("attention.w_p", m.attention_.w_p);
    add_param("attention.w_k", m.attention_.w_k);
    if (m.attention_.has_value_projection()) add_param("attention.w_v", m.attention_.w_v);
  }

  m.built_ = true;
  return m;
}

void ModelGraph::require_built() const {
  if (!built_) throw StateError("model has not been built");
}

Variant ModelGraph::variant() const {
  require_built();
  return variant_;
}

BackboneFamily ModelGraph::backbone() const {
  require_built();
  return backbone_;
}

const ModelOptions& ModelGraph::options() const {
  require_built();
  return options_;
}

const BranchSpec& ModelGraph::branch_spec() const {
  require_built();
  return spec_;
}

int ModelGraph::num_classes() const {
  require_built();
  return options_.num_classes;
}

std::vector<std::pair<std::string, Tensor>>& ModelGraph::parameters() {
  require_built();
  return params_;
}

const std::vector<std::pair<std::string, Tensor>>& ModelGraph::parameters() const {
  require_built();
  return params_;
}

Tensor ModelGraph::parameter(const std::string& name) const {
  require_built();
  for (const auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw StateError("no parameter named '" + name + "'");
}

void ModelGraph::zero_grads() {
  require_built();
  for (auto& [n, t] : params_) t.zero_grad();
}

std::int64_t ModelGraph::parameter_count() const {
  require_built();
  std::int64_t total = 0;
  for (const auto& [n, t] : params_) total += t.size();
  return total;
}

int ModelGraph::trunk_stride() const {
  require_built();
  return effective_stride(spec_.shared_layers());
}

int ModelGraph::cls_stride() const {
  require_built();
  return trunk_stride() * effective_stride(spec_.cls_layers());
}

int ModelGraph::loc_stride() const {
  require_built();
  return trunk_stride() * effective_stride(spec_.loc_layers());
}

int ModelGraph::cls_channels() const {
  const int shared_ch = stages_out_channels(spec_.shared_stages, 3);
  return stages_out_channels(spec_.cls_stages, shared_ch);
}

int ModelGraph::loc_channels() const {
  const int shared_ch = stages_out_channels(spec_.shared_stages, 3);
  return stages_out_channels(spec_.loc_stages, shared_ch);
}

Tensor ModelGraph::run_stages(const std::vector<StageSpec>& stages, const std::string& prefix,
                              Tensor x) const {
  for (std::size_t si = 0; si < stages.size(); ++si) {
    const auto& st = stages[si];
    const std::string sbase = prefix + ".s" + std::to_string(si);
    Tensor y = x;
    for (std::size_t li = 0; li < st.main.size(); ++li) {
      const auto& l = st.main[li];
      const std::string lbase = sbase + ".l" + std::to_string(li);
      switch (l.kind) {
        case LayerKind::kConv:
          y = conv2d(y, parameter(lbase + ".w"), parameter(lbase + ".b"), l.stride, l.padding);
          break;
        case LayerKind::kMaxPool:
          y = maxpool2d(y, l.kernel_h, l.kernel_w, l.stride, l.padding);
          break;
        case LayerKind::kRelu:
          y = relu(y);
          break;
        case LayerKind::kLinear:
          y = linear(y, parameter(lbase + ".w"), parameter(lbase + ".b"));
          break;
      }
    }
    if (st.residual) {
      Tensor skip = x;
      if (st.needs_projection()) {
        skip = conv2d(x, parameter(sbase + ".proj.w"), parameter(sbase + ".proj.b"), st.stride(), 0);
      }
      y = relu(add(y, skip));
    }
    x = y;
  }
  return x;
}

ModelGraph::Features ModelGraph::run_backbone(const Tensor& image) const {
  require_built();
  if (image.ndim() != 4 || image.dim(0) != 1 || image.dim(1) != 3) {
    throw DimensionError("run_backbone: image must be (1,3,H,W), got " + shape_str(image.shape()));
  }
  Features f;
  f.shared = run_stages(spec_.shared_stages, "shared", image);
  f.cls = spec_.cls_stages.empty() ? f.shared : run_stages(spec_.cls_stages, "cls", f.shared);
  f.loc = spec_.loc_stages.empty() ? f.shared : run_stages(spec_.loc_stages, "loc", f.shared);
  return f;
}

AnchorGrid ModelGraph::anchor_grid_for(const Tensor& features) const {
  require_built();
  return generate_anchors(features.dim(2), features.dim(3), cls_stride(), options_.anchor_sizes,
                          options_.anchor_ratios);
}

ModelGraph::RpnRows ModelGraph::run_rpn(const Tensor& features, const AnchorGrid& grid,
                                        bool secondary) const {
  require_built();
  if (features.dim(2) != grid.feature_h || features.dim(3) != grid.feature_w) {
    throw DimensionError("run_rpn: feature dims " + std::to_string(features.dim(2)) + "x" +
                         std::to_string(features.dim(3)) + " do not match grid " +
                         std::to_string(grid.feature_h) + "x" + std::to_string(grid.feature_w));
  }
  const std::string prefix = secondary ? "rpn2" : "rpn";
  if (secondary && !options_.dual_rpn) throw StateError("secondary RPN requested without dual_rpn");
  Tensor mid = relu(conv2d(features, parameter(prefix + ".conv.w"), parameter(prefix + ".conv.b"), 1, 1));
  Tensor obj = conv2d(mid, parameter(prefix + ".obj.w"), parameter(prefix + ".obj.b"), 1, 0);
  Tensor box = conv2d(mid, parameter(prefix + ".box.w"), parameter(prefix + ".box.b"), 1, 0);
  RpnRows rows;
  rows.objectness = anchor_major_rows(obj, 2);
  rows.deltas = anchor_major_rows(box, 4);
  if (rows.objectness.dim(0) != grid.count()) {
    throw DimensionError("run_rpn: produced " + std::to_string(rows.objectness.dim(0)) +
                         " rows for " + std::to_string(grid.count()) + " anchors");
  }
  return rows;
}

Tensor ModelGraph::pool_rois(const Tensor& features, const BoxList& rois, int out_size, int stride,
                             RoiBinRecord* record) const {
  if (options_.use_roi_align) return roi_align(features, rois, out_size, stride);
  return roi_pool(features, rois, out_size, stride, record);
}

Tensor ModelGraph::mlp_trunk(const std::string& prefix, const Tensor& x) const {
  Tensor h = relu(linear(x, parameter(prefix + ".fc1.w"), parameter(prefix + ".fc1.b")));
  return relu(linear(h, parameter(prefix + ".fc2.w"), parameter(prefix + ".fc2.b")));
}

ModelGraph::HeadOut ModelGraph::run_heads(const Features& features, const BoxList& rois,
                                          HeadDebug* debug) const {
  require_built();
  if (rois.empty()) throw DimensionError("run_heads: empty ROI list");
  const int out_size = spec_.roi_out_size;
  const bool same_path = features.cls.node_id() == features.loc.node_id() &&
                         cls_stride() == loc_stride();

  Tensor cls_pooled = pool_rois(features.cls, rois, out_size, cls_stride(),
                                debug ? &debug->cls_bins : nullptr);
  Tensor loc_pooled = same_path ? cls_pooled
                                : pool_rois(features.loc, rois, out_size, loc_stride(),
                                            debug ? &debug->loc_bins : nullptr);
  if (debug) {
    debug->cls_pooled = cls_pooled.node_id();
    debug->loc_pooled = loc_pooled.node_id();
    if (same_path) debug->loc_bins = debug->cls_bins;
  }

  Tensor cls_in = cls_pooled;
  if (spec_.use_context_attention) {
    // Whole-image context from the same map the ROIs were pooled from.
    const int fh = features.cls.dim(2), fw = features.cls.dim(3);
    const double s = static_cast<double>(cls_stride());
    const BoxList full{{0.0, 0.0, fw * s, fh * s}};
    const int m = spec_.context_out_size;
    const int c = features.cls.dim(1);
    Tensor ctx = pool_rois(features.cls, full, m, cls_stride(), nullptr);
    Tensor ctx_rows = transpose2d(reshape(ctx, {c, m * m}));  // (m*m, C)
    const ProjectedContext projected = project_context(ctx_rows, attention_);

    const int q = out_size * out_size;
    Tensor pooled_flat = flatten2d(cls_pooled);  // (n, C*q)
    std::vector<Tensor> attended_rows;
    attended_rows.reserve(rois.size());
    for (std::size_t r = 0; r < rois.size(); ++r) {
      Tensor row = gather_rows(pooled_flat, {static_cast<int>(r)});       // (1, C*q)
      Tensor queries = transpose2d(reshape(row, {c, q}));                 // (q, C)
      Tensor updated = attend_with_context(queries, attention_, projected);
      attended_rows.push_back(reshape(transpose2d(updated), {1, c * q}));
    }
    Tensor all = attended_rows.size() == 1 ? attended_rows[0] : concat_rows(attended_rows);
    cls_in = reshape(all, {static_cast<int>(rois.size()), c, out_size, out_size});
  }

  HeadOut out;
  const Tensor cls_w = parameter("head.cls_out.w");
  const Tensor cls_b = parameter("head.cls_out.b");
  const Tensor box_w = parameter("head.box_out.w");
  const Tensor box_b = parameter("head.box_out.b");

  switch (spec_.head) {
    case HeadKind::kSharedMlp: {
      Tensor f_cls = mlp_trunk("head", flatten2d(cls_in));
      Tensor f_loc = same_path && !spec_.use_context_attention
                         ? f_cls
                         : mlp_trunk("head", flatten2d(loc_pooled));
      out.cls_logits = linear(f_cls, cls_w, cls_b);
      out.box_deltas = linear(f_loc, box_w, box_b);
      break;
    }
    case HeadKind::kSeparateMlp: {
      Tensor f_cls = mlp_trunk("head.cls", flatten2d(cls_in));
      Tensor f_loc = mlp_trunk("head.loc", flatten2d(loc_pooled));
      if (variant_ == Variant::kDetectS) {
        // Two heads, no task separation: both outputs read the mixed feature.
        Tensor mixed = scale(add(f_cls, f_loc), 0.5);
        out.cls_logits = linear(mixed, cls_w, cls_b);
        out.box_deltas = linear(mixed, box_w, box_b);
      } else {
        out.cls_logits = linear(f_cls, cls_w, cls_b);
        out.box_deltas = linear(f_loc, box_w, box_b);
      }
      break;
    }
    case HeadKind::kConvBlock: {
      Tensor h_cls = global_avg_pool(run_stages(spec_.head_stages, "head", cls_in));
      Tensor h_loc = same_path && !spec_.use_context_attention
                         ? h_cls
                         : global_avg_pool(run_stages(spec_.head_stages, "head", loc_pooled));
      out.cls_logits = linear(h_cls, cls_w, cls_b);
      out.box_deltas = linear(h_loc, box_w, box_b);
      break;
    }
  }
  return out;
}

ModelGraph::ForwardTrain ModelGraph::forward_train(const Tensor& image,
                                                   const ProposalSettings& settings) const {
  require_built();
  ForwardTrain fwd;
  fwd.features = run_backbone(image);
  fwd.anchors = anchor_grid_for(fwd.features.cls);
  fwd.rpn = run_rpn(fwd.features.cls, fwd.anchors);
  if (options_.dual_rpn) {
    AnchorGrid loc_grid = generate_anchors(fwd.features.loc.dim(2), fwd.features.loc.dim(3),
                                           loc_stride(), options_.anchor_sizes,
                                           options_.anchor_ratios);
    fwd.rpn_secondary = run_rpn(fwd.features.loc, loc_grid, true);
  }
  fwd.proposals =
      select_proposals(fwd.rpn.objectness.values(), fwd.rpn.deltas.values(), fwd.anchors,
                       image.dim(3), image.dim(2), settings.pre_nms_n, settings.post_nms_n,
                       settings.nms_threshold, &fwd.proposal_scores);
  return fwd;
}

std::vector<Detection> ModelGraph::forward_test(const Tensor& image,
                                                const TestSettings& settings) const {
  require_built();
  ForwardTrain fwd = forward_train(image, settings.proposals);
  if (fwd.proposals.empty()) return {};
  HeadOut heads = run_heads(fwd.features, fwd.proposals);

  const int k = options_.num_classes;
  const int n = static_cast<int>(fwd.proposals.size());
  const int img_w = image.dim(3), img_h = image.dim(2);
  const auto& stds = options_.bbox_reg_stds;

  // Plain softmax on the head logits; no gradients at test time.
  const auto& logits = heads.cls_logits.values();
  std::vector<double> probs(logits.size());
  for (int r = 0; r < n; ++r) {
    const double* row = logits.data() + static_cast<std::int64_t>(r) * (k + 1);
    double mx = row[0];
    for (int j = 1; j <= k; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j <= k; ++j) {
      probs[static_cast<std::size_t>(r) * (k + 1) + j] = std::exp(row[j] - mx);
      sum += probs[static_cast<std::size_t>(r) * (k + 1) + j];
    }
    for (int j = 0; j <= k; ++j) probs[static_cast<std::size_t>(r) * (k + 1) + j] /= sum;
  }
  const auto& deltas = heads.box_deltas.values();

  std::vector<Detection> detections;
  for (int c = 0; c < k; ++c) {
    BoxList boxes;
    std::vector<double> scores;
    for (int r = 0; r < n; ++r) {
      const auto& proposal = fwd.proposals[static_cast<std::size_t>(r)];
      if (proposal.width() <= 0.0 || proposal.height() <= 0.0) continue;  // clipped away
      const double score = probs[static_cast<std::size_t>(r) * (k + 1) + c + 1];
      if (score < settings.score_threshold) continue;
      const double* d = deltas.data() + static_cast<std::int64_t>(r) * 4 * k + 4 * c;
      Delta raw{d[0] * stds[0], d[1] * stds[1], d[2] * stds[2], d[3] * stds[3]};
      Box b = clip_box(decode_box(fwd.proposals[static_cast<std::size_t>(r)], raw), img_w, img_h);
      if (b.width() <= 0.0 || b.height() <= 0.0) continue;
      boxes.push_back(b);
      scores.push_back(score);
    }
    if (boxes.empty()) continue;
    for (int idx : nms(boxes, scores, settings.nms_threshold)) {
      detections.push_back({boxes[static_cast<std::size_t>(idx)], c,
                            scores[static_cast<std::size_t>(idx)]});
    }
  }
  std::stable_sort(detections.begin(), detections.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.class_id < b.class_id;
  });
  if (static_cast<int>(detections.size()) > settings.max_detections) {
    detections.resize(static_cast<std::size_t>(settings.max_detections));
  }
  return detections;
}

// ---- architecture table ------------------------------------------------------

namespace {

std::int64_t section_param_total(const std::vector<std::pair<std::string, Tensor>>& params,
                                 const std::string& prefix) {
  std::int64_t total = 0;
  for (const auto& [name, t] : params) {
    if (name.rfind(prefix, 0) == 0) total += t.size();
  }
  return total;
}

void describe_stages(std::ostringstream& os, const std::vector<StageSpec>& stages) {
  int cum = 1;
  int idx = 0;
  for (const auto& st : stages) {
    for (const auto& l : st.main) {
      cum *= l.stride;
      std::int64_t params = layer_param_count(l);
      os << "  " << idx++ << "  " << layer_kind_name(l.kind);
      if (l.kind == LayerKind::kConv || l.kind == LayerKind::kMaxPool) {
        os << " " << l.kernel_h << "x" << l.kernel_w << " s" << l.stride << " p" << l.padding;
      }
      if (l.kind == LayerKind::kConv || l.kind == LayerKind::kLinear) {
        os << " " << l.in_channels << "->" << l.out_channels;
      }
      os << "  params=" << params << "  cum_stride=" << cum << "\n";
    }
    if (st.needs_projection()) {
      os << "     +skip proj 1x1 s" << st.stride() << " " << st.in_channels() << "->"
         << st.out_channels() << "\n";
    } else if (st.residual) {
      os << "     +skip identity\n";
    }
  }
}

}  // namespace

std::string ModelGraph::describe() const {
  require_built();
  std::ostringstream os;
  os << "variant: " << to_string(variant_) << "\n";
  os << "backbone: " << to_string(backbone_) << "\n";
  os << "classes: " << options_.num_classes << "\n";
  os << "trunk:\n";
  describe_stages(os, spec_.shared_stages);
  if (!spec_.cls_stages.empty()) {
    os << "cls branch:\n";
    describe_stages(os, spec_.cls_stages);
  }
  if (!spec_.loc_stages.empty()) {
    os << "loc branch:\n";
    describe_stages(os, spec_.loc_stages);
  }
  if (!spec_.head_stages.empty()) {
    os << "head conv stages:\n";
    describe_stages(os, spec_.head_stages);
  }
  switch (spec_.head) {
    case HeadKind::kSharedMlp:
      os << "head: shared_mlp, two fully-connected layers (" << options_.head_hidden
         << " wide) shared by both tasks, sibling cls/box outputs\n";
      break;
    case HeadKind::kSeparateMlp:
      if (variant_ == Variant::kDetectS) {
        os << "head: separate_mlp x2 without task separation (detect_s mixing), "
           << options_.head_hidden << " wide\n";
      } else {
        os << "head: separate_mlp, independent two-fc trunks per task, " << options_.head_hidden
           << " wide\n";
      }
      break;
    case HeadKind::kConvBlock:
      os << "head: conv_block applied per ROI, then average pool and sibling outputs\n";
      break;
  }
  const int anchors = static_cast<int>(options_.anchor_sizes.size() * options_.anchor_ratios.size());
  os << "rpn: conv3x3 " << cls_channels() << "->" << options_.rpn_channels << ", 1x1 obj 2*"
     << anchors << ", 1x1 box 4*" << anchors << (options_.dual_rpn ? " (dual)" : "") << "\n";
  if (spec_.use_context_attention) {
    os << "attention: d=" << cls_channels() << " heads=" << options_.attention_heads
       << " value_projection=" << (options_.attention_value_projection ? "on" : "off")
       << " context=" << spec_.context_out_size << "x" << spec_.context_out_size << "\n";
  }
  os << "roi pooling: " << (options_.use_roi_align ? "align" : "max") << " out="
     << spec_.roi_out_size << "x" << spec_.roi_out_size << "\n";
  os << "trunk effective stride: " << trunk_stride() << "\n";
  os << "cls effective stride: " << cls_stride() << "\n";
  os << "loc effective stride: " << loc_stride() << "\n";
  os << "parameters by section:\n";
  os << "  trunk=" << section_param_total(params_, "shared.") << "\n";
  if (!spec_.cls_stages.empty()) os << "  cls_branch=" << section_param_total(params_, "cls.") << "\n";
  if (!spec_.loc_stages.empty()) os << "  loc_branch=" << section_param_total(params_, "loc.") << "\n";
  os << "  rpn=" << section_param_total(params_, "rpn") << "\n";
  os << "  head=" << section_param_total(params_, "head") << "\n";
  if (spec_.use_context_attention) {
    os << "  attention=" << section_param_total(params_, "attention.") << "\n";
  }
  os << "total parameters: " << parameter_count() << "\n";
  return os.str();
}

}  // namespace grcn
