#ifndef GRCN_MODEL_HPP
#define GRCN_MODEL_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "grcn/attention.hpp"
#include "grcn/boxes.hpp"
#include "grcn/layers.hpp"
#include "grcn/roi.hpp"
#include "grcn/tensor.hpp"

namespace grcn {

enum class Variant { kBaseline, kDetectF, kDetectRf, kDetectS, kGrcn, kResnetDet };
enum class BackboneFamily { kToyVgg, kToyResnet };
enum class HeadKind { kSharedMlp, kSeparateMlp, kConvBlock };

Variant variant_from_string(const std::string& name);
BackboneFamily backbone_from_string(const std::string& name);
std::string to_string(Variant v);
std::string to_string(BackboneFamily f);
std::string to_string(HeadKind h);
std::vector<std::string> known_variants();
std::vector<std::string> known_backbones();
// The variants each backbone family supports.
std::vector<std::string> valid_variants(BackboneFamily f);

// Branch layout of one architecture: trunk before the split, then the
// classification/localization tails. Empty tails mean both tasks read the
// trunk output directly.
struct BranchSpec {
  std::vector<StageSpec> shared_stages;
  std::vector<StageSpec> cls_stages;
  std::vector<StageSpec> loc_stages;
  std::vector<StageSpec> head_stages;  // conv_block heads only
  bool use_context_attention = false;
  HeadKind head = HeadKind::kSharedMlp;
  int roi_out_size = 7;
  int context_out_size = 14;

  std::vector<LayerSpec> shared_layers() const { return flatten_stages(shared_stages); }
  std::vector<LayerSpec> cls_layers() const { return flatten_stages(cls_stages); }
  std::vector<LayerSpec> loc_layers() const { return flatten_stages(loc_stages); }
};

struct ModelOptions {
  int num_classes = 3;  // object classes; background is an implicit extra label
  std::vector<double> anchor_sizes{32, 64, 128, 256, 512};
  std::vector<double> anchor_ratios{0.5, 1.0, 2.0};
  int rpn_channels = 128;
  int head_hidden = 256;
  int roi_out_size = 0;  // 0 = variant default (7, or 14 ahead of a conv head)
  int attention_heads = 1;
  bool attention_value_projection = false;
  int attention_context_size = 14;
  // auto: on for grcn, off otherwise.
  std::optional<bool> attention_override;
  bool use_roi_align = false;
  bool dual_rpn = false;
  std::vector<double> bbox_reg_stds{0.1, 0.1, 0.2, 0.2};
  std::uint64_t seed = 1;
};

struct ProposalSettings {
  int pre_nms_n = 6000;
  int post_nms_n = 2000;
  double nms_threshold = 0.7;
};

struct TestSettings {
  ProposalSettings proposals{6000, 300, 0.7};
  double score_threshold = 0.05;
  double nms_threshold = 0.3;
  int max_detections = 300;
};

struct Detection {
  Box box;
  int class_id = 0;  // dataset class id, 0-based
  double score = 0.0;
};

// Decode RPN outputs into scored proposals: apply the deltas to the anchors,
// clip to the image, keep the top pre_nms_n by foreground score, run NMS,
// truncate to post_nms_n. objectness_logits holds 2 values per anchor
// (bg, fg), deltas 4 per anchor.
BoxList select_proposals(const std::vector<double>& objectness_logits,
                         const std::vector<double>& deltas, const AnchorGrid& grid,
                         int image_w, int image_h, int pre_nms_n, int post_nms_n,
                         double nms_threshold, std::vector<double>* kept_scores = nullptr);

class ModelGraph {
 public:
  ModelGraph() = default;

  static ModelGraph build(Variant variant, BackboneFamily backbone, const ModelOptions& options);

  bool built() const { return built_; }
  Variant variant() const;
  BackboneFamily backbone() const;
  const ModelOptions& options() const;
  const BranchSpec& branch_spec() const;
  int num_classes() const;

  std::vector<std::pair<std::string, Tensor>>& parameters();
  const std::vector<std::pair<std::string, Tensor>>& parameters() const;
  Tensor parameter(const std::string& name) const;
  void zero_grads();
  std::int64_t parameter_count() const;

  int trunk_stride() const;
  int cls_stride() const;
  int loc_stride() const;
  int cls_channels() const;
  int loc_channels() const;

  struct Features {
    Tensor shared;
    Tensor cls;
    Tensor loc;
  };
  Features run_backbone(const Tensor& image) const;

  struct RpnRows {
    Tensor objectness;  // (A,2) rows in AnchorGrid order
    Tensor deltas;      // (A,4)
  };
  // 3x3 conv + two sibling 1x1 convs over the given feature map; validates
  // the grid against the feature dims. `secondary` selects the loc-branch
  // RPN built when dual_rpn is on.
  RpnRows run_rpn(const Tensor& features, const AnchorGrid& grid, bool secondary = false) const;

  AnchorGrid anchor_grid_for(const Tensor& features) const;

  struct HeadDebug {
    const void* cls_pooled = nullptr;
    const void* loc_pooled = nullptr;
    RoiBinRecord cls_bins;
    RoiBinRecord loc_bins;
  };
  struct HeadOut {
    Tensor cls_logits;  // (n, num_classes+1), background is label 0
    Tensor box_deltas;  // (n, 4*num_classes), class c at offset (c)*4
  };
  HeadOut run_heads(const Features& features, const BoxList& rois,
                    HeadDebug* debug = nullptr) const;

  struct ForwardTrain {
    Features features;
    RpnRows rpn;
    RpnRows rpn_secondary;  // defined only when dual_rpn
    AnchorGrid anchors;
    BoxList proposals;  // image coordinates, detached from the graph
    std::vector<double> proposal_scores;
  };
  ForwardTrain forward_train(const Tensor& image, const ProposalSettings& settings) const;

  std::vector<Detection> forward_test(const Tensor& image, const TestSettings& settings) const;

  // Plain-text layer table with per-branch cumulative strides and parameter
  // counts (the `inspect-arch` payload).
  std::string describe() const;

 private:
  void require_built() const;
  Tensor run_stages(const std::vector<StageSpec>& stages, const std::string& prefix,
                    Tensor x) const;
  Tensor mlp_trunk(const std::string& prefix, const Tensor& x) const;
  Tensor pool_rois(const Tensor& features, const BoxList& rois, int out_size, int stride,
                   RoiBinRecord* record) const;

  bool built_ = false;
  Variant variant_ = Variant::kBaseline;
  BackboneFamily backbone_ = BackboneFamily::kToyVgg;
  ModelOptions options_;
  BranchSpec spec_;
  AttentionWeights attention_;
  std::vector<std::pair<std::string, Tensor>> params_;
};

}  // namespace grcn

#endif  // GRCN_MODEL_HPP
