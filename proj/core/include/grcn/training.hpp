#ifndef GRCN_TRAINING_HPP
#define GRCN_TRAINING_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "grcn/boxes.hpp"
#include "grcn/model.hpp"
#include "grcn/rng.hpp"
#include "grcn/tensor.hpp"

namespace grcn {

using LrSchedule = std::vector<std::pair<std::int64_t, double>>;  // (iteration bound, lr)

struct TrainConfig {
  LrSchedule lr_schedule{{240000, 0.001}, {320000, 0.0001}};
  double momentum = 0.9;
  double weight_decay = 0.0;
  int rpn_batch = 256;
  int roi_batch = 128;
  double fg_fraction = 0.25;
  double rpn_fg_iou = 0.7;
  double rpn_bg_iou = 0.3;
  double roi_fg_iou = 0.5;
  double roi_bg_lo = 0.1;
  double roi_bg_hi = 0.5;
  bool hflip = false;
  std::uint64_t seed = 1;
  ProposalSettings proposals{6000, 2000, 0.7};

  void validate() const;  // throws ConfigError
};

// Step-schedule lookup: the lr of the first bound above `iteration`; past the
// final bound the last lr applies.
double lr_at(std::int64_t iteration, const LrSchedule& schedule);

// The schedules used for the full-size presets.
LrSchedule coco_lr_schedule();  // 0.001 for 240k iterations, 0.0001 to 320k
LrSchedule voc_lr_schedule();   // 0.001 for 150k iterations, 0.0001 to 180k

// One plain SGD+momentum update: v <- momentum*v + (g + weight_decay*w),
// w <- w - lr*v.
void sgd_momentum_step(std::vector<double>& weights, const std::vector<double>& grads,
                       std::vector<double>& velocity, double lr, double momentum,
                       double weight_decay = 0.0);

struct OptimizerState {
  // Velocity tensors aligned 1:1 with the model's named parameters.
  std::vector<std::pair<std::string, Tensor>> velocity;

  static OptimizerState zeros_like(const ModelGraph& model);
};

void sgd_momentum_step(ModelGraph& model, OptimizerState& state, double lr, double momentum,
                       double weight_decay = 0.0);

// ---- target assignment -------------------------------------------------------

struct RpnTarget {
  int anchor_index = 0;
  bool foreground = false;
  Delta delta;  // meaningful only when foreground
};

// fg: IoU >= rpn_fg_iou with some gt, plus the single best anchor per gt
// (lowest index on ties); bg: IoU < rpn_bg_iou against every gt. Samples up
// to 50% foreground, fills with background. No gts -> all-background sample.
std::vector<RpnTarget> assign_rpn_targets(const AnchorGrid& grid, const BoxList& gts,
                                          const TrainConfig& cfg, Rng& rng);

struct RoiTarget {
  Box roi;
  int label = 0;  // 0 = background, 1..K = object class + 1
  Delta delta;    // raw (un-normalized); meaningful only when label > 0
};

// Appends the gt boxes to the proposal pool, then: fg = IoU >= roi_fg_iou
// with the best-matching gt; bg = IoU in [roi_bg_lo, roi_bg_hi). Foreground
// capped at fg_fraction of roi_batch. When nothing qualifies the sample
// falls back to plain proposals as background so a batch always exists.
std::vector<RoiTarget> assign_roi_targets(const BoxList& proposals, const BoxList& gt_boxes,
                                          const std::vector<int>& gt_classes,
                                          const TrainConfig& cfg, Rng& rng);

// ---- losses -------------------------------------------------------------------

struct LossBreakdown {
  double total = 0.0;
  double rpn_cls = 0.0;
  double rpn_reg = 0.0;
  double cls = 0.0;
  double loc = 0.0;
};

struct MultitaskTargets {
  std::vector<int> rpn_rows;            // sampled anchor indices
  std::vector<int> rpn_labels;          // 1 fg / 0 bg, parallel to rpn_rows
  std::vector<int> rpn_fg_rows;         // foreground anchor indices
  std::vector<double> rpn_fg_deltas;    // 4 per foreground anchor
  std::vector<int> roi_labels;          // per sampled ROI, 0..K
  std::vector<int> roi_fg_rows;         // indices into the sampled ROI list
  std::vector<double> roi_fg_deltas;    // 4 per foreground ROI, std-normalized
};

// L = L_rpn_cls + L_rpn_reg + L_cls + L_loc, every term a mean over its
// sampled batch. Empty foreground sets contribute constant zeros.
Tensor multitask_loss(const Tensor& rpn_objectness, const Tensor& rpn_deltas,
                      const Tensor& cls_logits, const Tensor& box_deltas,
                      const MultitaskTargets& targets, int num_classes,
                      LossBreakdown* breakdown = nullptr);

// Builds MultitaskTargets from assignment results; exposed so tests can fix a
// batch and differentiate through a frozen sampling decision.
MultitaskTargets build_targets(const AnchorGrid& anchors, const std::vector<RpnTarget>& rpn,
                               const std::vector<RoiTarget>& rois,
                               const std::vector<double>& bbox_reg_stds);

// Loss of one image under externally fixed ROIs/targets. Proposal selection
// and sampling do not run; the result is a deterministic, differentiable
// function of the parameters.
Tensor loss_with_fixed_targets(const ModelGraph& model, const Tensor& image,
                               const BoxList& rois, const MultitaskTargets& targets,
                               LossBreakdown* breakdown = nullptr);

// ---- synthetic scenes ----------------------------------------------------------

struct SyntheticScene {
  Tensor image;  // (1,3,H,W), values in [0,1]
  BoxList gt_boxes;
  std::vector<int> gt_classes;  // dataset class ids, 0-based
};

// ---- training loop --------------------------------------------------------------

struct TrainStepInfo {
  std::int64_t iteration = 0;  // the iteration just executed
  LossBreakdown loss;
  double lr = 0.0;
  int scene_index = 0;
  int num_proposals = 0;
  int rpn_sampled = 0;
  int roi_sampled = 0;
  bool flipped = false;
};

// Drives SGD over a scene list. All per-iteration randomness is keyed by
// (seed, iteration), so resuming from a checkpoint replays identically.
class Trainer {
 public:
  Trainer(ModelGraph& model, TrainConfig config, std::vector<SyntheticScene> scenes);

  TrainStepInfo step();
  std::int64_t iteration() const { return iteration_; }
  void set_iteration(std::int64_t it) { iteration_ = it; }
  OptimizerState& optimizer_state() { return optimizer_; }
  const TrainConfig& config() const { return config_; }
  // One-line description of the last batch, for failure dumps.
  const std::string& last_batch_debug() const { return last_batch_debug_; }

 private:
  ModelGraph& model_;
  TrainConfig config_;
  std::vector<SyntheticScene> scenes_;
  OptimizerState optimizer_;
  std::int64_t iteration_ = 0;
  std::string last_batch_debug_;
};

// Mirror image and boxes about the vertical axis.
SyntheticScene hflip_scene(const SyntheticScene& scene);

// Rescale so the shorter image side equals `target`; boxes scale along.
SyntheticScene resize_scene_shorter_side(const SyntheticScene& scene, int target);

}  // namespace grcn

#endif  // GRCN_TRAINING_HPP
