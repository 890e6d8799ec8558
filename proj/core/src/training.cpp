#include "grcn/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "grcn/errors.hpp"
#include "grcn/ops.hpp"

namespace grcn {

void TrainConfig::validate() const {
  if (lr_schedule.empty()) throw ConfigError("lr schedule must not be empty");
  for (std::size_t i = 0; i + 1 < lr_schedule.size(); ++i) {
    if (lr_schedule[i].first >= lr_schedule[i + 1].first) {
      throw ConfigError("lr schedule bounds must be strictly increasing");
    }
  }
  for (const auto& [bound, lr] : lr_schedule) {
    if (bound <= 0 || lr <= 0.0) throw ConfigError("lr schedule entries must be positive");
  }
  if (rpn_batch <= 0 || roi_batch <= 0) throw ConfigError("batch sizes must be positive");
  if (fg_fraction <= 0.0 || fg_fraction > 1.0) throw ConfigError("fg_fraction must be in (0,1]");
  if (roi_bg_lo < 0.0 || roi_bg_lo >= roi_bg_hi) {
    throw ConfigError("roi background IoU range must satisfy 0 <= lo < hi");
  }
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0,1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
}

double lr_at(std::int64_t iteration, const LrSchedule& schedule) {
  if (schedule.empty()) throw ConfigError("lr_at: empty schedule");
  if (iteration < 0) throw ConfigError("lr_at: negative iteration");
  for (const auto& [bound, lr] : schedule) {
    if (iteration < bound) return lr;
  }
  return schedule.back().second;
}

LrSchedule coco_lr_schedule() { return {{240000, 0.001}, {320000, 0.0001}}; }
LrSchedule voc_lr_schedule() { return {{150000, 0.001}, {180000, 0.0001}}; }

void sgd_momentum_step(std::vector<double>& weights, const std::vector<double>& grads,
                       std::vector<double>& velocity, double lr, double momentum,
                       double weight_decay) {
  if (weights.size() != grads.size() || weights.size() != velocity.size()) {
    throw DimensionError("sgd_momentum_step: size mismatch (" + std::to_string(weights.size()) +
                         " weights, " + std::to_string(grads.size()) + " grads, " +
                         std::to_string(velocity.size()) + " velocity)");
  }
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double g = grads[i] + weight_decay * weights[i];
    velocity[i] = momentum * velocity[i] + g;
    weights[i] -= lr * velocity[i];
  }
}

OptimizerState OptimizerState::zeros_like(const ModelGraph& model) {
  OptimizerState state;
  for (const auto& [name, t] : model.parameters()) {
    state.velocity.emplace_back(name, Tensor::zeros(t.shape()));
  }
  return state;
}

void sgd_momentum_step(ModelGraph& model, OptimizerState& state, double lr, double momentum,
                       double weight_decay) {
  auto& params = model.parameters();
  if (state.velocity.size() != params.size()) {
    throw DimensionError("optimizer state does not match model parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.velocity[i].first != params[i].first) {
      throw DimensionError("optimizer state order does not match model parameters");
    }
    sgd_momentum_step(params[i].second.values(), params[i].second.grad(),
                      state.velocity[i].second.values(), lr, momentum, weight_decay);
  }
}

// ---- target assignment ---------------------------------------------------------

namespace {

// Deterministic k-of-n subsample: Fisher-Yates prefix driven by the rng.
std::vector<int> sample_subset(std::vector<int> pool, std::size_t k, Rng& rng) {
  if (pool.size() <= k) return pool;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next_below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace

std::vector<RpnTarget> assign_rpn_targets(const AnchorGrid& grid, const BoxList& gts,
                                          const TrainConfig& cfg, Rng& rng) {
  const int a = grid.count();
  if (a == 0) throw ConfigError("assign_rpn_targets: empty anchor grid");

  std::vector<double> best_iou(static_cast<std::size_t>(a), 0.0);
  std::vector<int> best_gt(static_cast<std::size_t>(a), -1);
  for (int i = 0; i < a; ++i) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(grid.boxes[static_cast<std::size_t>(i)], gts[g]);
      if (v > best_iou[static_cast<std::size_t>(i)]) {
        best_iou[static_cast<std::size_t>(i)] = v;
        best_gt[static_cast<std::size_t>(i)] = static_cast<int>(g);
      }
    }
  }

  std::vector<char> is_fg(static_cast<std::size_t>(a), 0);
  for (int i = 0; i < a; ++i) {
    if (!gts.empty() && best_iou[static_cast<std::size_t>(i)] >= cfg.rpn_fg_iou) {
      is_fg[static_cast<std::size_t>(i)] = 1;
    }
  }
  // The single best anchor per gt joins the foreground set (lowest index on
  // ties) even below the IoU bar. Its regression target stays the anchor's
  // own best-matching gt.
  for (std::size_t g = 0; g < gts.size(); ++g) {
    double best = 0.0;
    int best_idx = -1;
    for (int i = 0; i < a; ++i) {
      const double v = iou(grid.boxes[static_cast<std::size_t>(i)], gts[g]);
      if (v > best) {
        best = v;
        best_idx = i;
      }
    }
    if (best_idx >= 0) is_fg[static_cast<std::size_t>(best_idx)] = 1;
  }

  std::vector<int> fg_pool, bg_pool;
  for (int i = 0; i < a; ++i) {
    if (is_fg[static_cast<std::size_t>(i)]) {
      fg_pool.push_back(i);
    } else if (best_iou[static_cast<std::size_t>(i)] < cfg.rpn_bg_iou) {
      bg_pool.push_back(i);
    }
  }

  const std::size_t fg_quota = static_cast<std::size_t>(cfg.rpn_batch) / 2;
  std::vector<int> fg = sample_subset(fg_pool, fg_quota, rng);
  const std::size_t bg_quota = static_cast<std::size_t>(cfg.rpn_batch) - fg.size();
  std::vector<int> bg = sample_subset(bg_pool, bg_quota, rng);

  std::vector<RpnTarget> out;
  out.reserve(fg.size() + bg.size());
  for (int i : fg) {
    RpnTarget t;
    t.anchor_index = i;
    t.foreground = true;
    t.delta = encode_box(grid.boxes[static_cast<std::size_t>(i)],
                         gts[static_cast<std::size_t>(best_gt[static_cast<std::size_t>(i)])]);
    out.push_back(t);
  }
  for (int i : bg) out.push_back({i, false, {}});
  return out;
}

std::vector<RoiTarget> assign_roi_targets(const BoxList& proposals, const BoxList& gt_boxes,
                                          const std::vector<int>& gt_classes,
                                          const TrainConfig& cfg, Rng& rng) {
  if (gt_boxes.size() != gt_classes.size()) {
    throw DimensionError("assign_roi_targets: gt boxes and classes differ in length");
  }
  BoxList pool = proposals;
  pool.insert(pool.end(), gt_boxes.begin(), gt_boxes.end());
  if (pool.empty()) return {};

  const std::size_t n = pool.size();
  std::vector<double> best_iou(n, 0.0);
  std::vector<int> best_gt(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      const double v = iou(pool[i], gt_boxes[g]);
      if (v > best_iou[i]) {
        best_iou[i] = v;
        best_gt[i] = static_cast<int>(g);
      }
    }
  }

  std::vector<int> fg_pool, bg_pool;
  for (std::size_t i = 0; i < n; ++i) {
    if (best_gt[i] >= 0 && best_iou[i] >= cfg.roi_fg_iou) {
      fg_pool.push_back(static_cast<int>(i));
    } else if (best_iou[i] >= cfg.roi_bg_lo && best_iou[i] < cfg.roi_bg_hi) {
      bg_pool.push_back(static_cast<int>(i));
    }
  }

  const std::size_t fg_quota =
      static_cast<std::size_t>(std::floor(cfg.fg_fraction * cfg.roi_batch));
  std::vector<int> fg = sample_subset(fg_pool, fg_quota, rng);
  std::size_t bg_quota = static_cast<std::size_t>(cfg.roi_batch) - fg.size();
  std::vector<int> bg = sample_subset(bg_pool, bg_quota, rng);
  if (fg.empty() && bg.empty()) {
    // Degenerate scene: keep training alive on an all-background batch.
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    bg = sample_subset(all, static_cast<std::size_t>(cfg.roi_batch), rng);
  }

  std::vector<RoiTarget> out;
  out.reserve(fg.size() + bg.size());
  for (int i : fg) {
    RoiTarget t;
    t.roi = pool[static_cast<std::size_t>(i)];
    const int g = best_gt[static_cast<std::size_t>(i)];
    t.label = gt_classes[static_cast<std::size_t>(g)] + 1;
    t.delta = encode_box(t.roi, gt_boxes[static_cast<std::size_t>(g)]);
    out.push_back(t);
  }
  for (int i : bg) out.push_back({pool[static_cast<std::size_t>(i)], 0, {}});
  return out;
}

// ---- losses ----------------------------------------------------------------------

Tensor multitask_loss(const Tensor& rpn_objectness, const Tensor& rpn_deltas,
                      const Tensor& cls_logits, const Tensor& box_deltas,
                      const MultitaskTargets& targets, int num_classes,
                      LossBreakdown* breakdown) {
  if (targets.rpn_rows.empty()) throw DimensionError("multitask_loss: empty RPN sample");
  if (targets.roi_labels.empty()) throw DimensionError("multitask_loss: empty ROI sample");
  if (targets.rpn_rows.size() != targets.rpn_labels.size()) {
    throw DimensionError("multitask_loss: RPN rows/labels mismatch");
  }
  if (cls_logits.dim(0) != static_cast<int>(targets.roi_labels.size())) {
    throw DimensionError("multitask_loss: head rows do not match ROI labels");
  }

  Tensor l_rpn_cls =
      cross_entropy_rows(gather_rows(rpn_objectness, targets.rpn_rows), targets.rpn_labels);

  Tensor l_rpn_reg = Tensor::scalar(0.0);
  if (!targets.rpn_fg_rows.empty()) {
    l_rpn_reg = smooth_l1_loss(gather_rows(rpn_deltas, targets.rpn_fg_rows),
                               targets.rpn_fg_deltas,
                               static_cast<double>(targets.rpn_rows.size()));
  }

  Tensor l_cls = cross_entropy_rows(cls_logits, targets.roi_labels);

  Tensor l_loc = Tensor::scalar(0.0);
  if (!targets.roi_fg_rows.empty()) {
    std::vector<int> offsets;
    offsets.reserve(targets.roi_fg_rows.size());
    for (int row : targets.roi_fg_rows) {
      const int label = targets.roi_labels[static_cast<std::size_t>(row)];
      if (label <= 0 || label > num_classes) {
        throw DimensionError("multitask_loss: foreground row has background label");
      }
      offsets.push_back((label - 1) * 4);
    }
    Tensor fg_deltas = gather_row_slices(gather_rows(box_deltas, targets.roi_fg_rows), offsets, 4);
    l_loc = smooth_l1_loss(fg_deltas, targets.roi_fg_deltas,
                           static_cast<double>(targets.roi_labels.size()));
  }

  Tensor total = add(add(l_rpn_cls, l_rpn_reg), add(l_cls, l_loc));
  if (breakdown) {
    breakdown->rpn_cls = l_rpn_cls.item();
    breakdown->rpn_reg = l_rpn_reg.item();
    breakdown->cls = l_cls.item();
    breakdown->loc = l_loc.item();
    breakdown->total = total.item();
  }
  return total;
}

MultitaskTargets build_targets(const AnchorGrid& anchors, const std::vector<RpnTarget>& rpn,
                               const std::vector<RoiTarget>& rois,
                               const std::vector<double>& bbox_reg_stds) {
  if (bbox_reg_stds.size() != 4) throw ConfigError("bbox_reg_stds needs 4 entries");
  MultitaskTargets t;
  for (const auto& r : rpn) {
    t.rpn_rows.push_back(r.anchor_index);
    t.rpn_labels.push_back(r.foreground ? 1 : 0);
    if (r.foreground) {
      t.rpn_fg_rows.push_back(r.anchor_index);
      t.rpn_fg_deltas.insert(t.rpn_fg_deltas.end(),
                             {r.delta.dx, r.delta.dy, r.delta.dw, r.delta.dh});
    }
  }
  for (std::size_t i = 0; i < rois.size(); ++i) {
    t.roi_labels.push_back(rois[i].label);
    if (rois[i].label > 0) {
      t.roi_fg_rows.push_back(static_cast<int>(i));
      t.roi_fg_deltas.insert(t.roi_fg_deltas.end(),
                             {rois[i].delta.dx / bbox_reg_stds[0],
                              rois[i].delta.dy / bbox_reg_stds[1],
                              rois[i].delta.dw / bbox_reg_stds[2],
                              rois[i].delta.dh / bbox_reg_stds[3]});
    }
  }
  (void)anchors;
  return t;
}

Tensor loss_with_fixed_targets(const ModelGraph& model, const Tensor& image,
                               const BoxList& rois, const MultitaskTargets& targets,
                               LossBreakdown* breakdown) {
  ModelGraph::Features features = model.run_backbone(image);
  AnchorGrid grid = model.anchor_grid_for(features.cls);
  ModelGraph::RpnRows rpn = model.run_rpn(features.cls, grid);
  ModelGraph::HeadOut heads = model.run_heads(features, rois);
  return multitask_loss(rpn.objectness, rpn.deltas, heads.cls_logits, heads.box_deltas, targets,
                        model.num_classes(), breakdown);
}

// ---- training loop ------------------------------------------------------------------

SyntheticScene hflip_scene(const SyntheticScene& scene) {
  SyntheticScene out;
  const int c = scene.image.dim(1), h = scene.image.dim(2), w = scene.image.dim(3);
  out.image = Tensor::zeros({1, c, h, w});
  const auto& src = scene.image.values();
  auto& dst = out.image.values();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        dst[(static_cast<std::size_t>(ch) * h + y) * w + x] =
            src[(static_cast<std::size_t>(ch) * h + y) * w + (w - 1 - x)];
      }
  out.gt_classes = scene.gt_classes;
  for (const auto& b : scene.gt_boxes) {
    out.gt_boxes.push_back({static_cast<double>(w) - b.x2, b.y1, static_cast<double>(w) - b.x1, b.y2});
  }
  return out;
}

SyntheticScene resize_scene_shorter_side(const SyntheticScene& scene, int target) {
  if (target < 1) throw ConfigError("resize target must be >= 1");
  const int h = scene.image.dim(2), w = scene.image.dim(3);
  const int shorter = std::min(h, w);
  if (shorter == target) return scene;
  const double scale = static_cast<double>(target) / shorter;
  const int nh = static_cast<int>(std::lround(h * scale));
  const int nw = static_cast<int>(std::lround(w * scale));
  SyntheticScene out;
  out.image = resize_bilinear(scene.image, nh, nw);
  out.gt_classes = scene.gt_classes;
  const double sx = static_cast<double>(nw) / w;
  const double sy = static_cast<double>(nh) / h;
  for (const auto& b : scene.gt_boxes) {
    out.gt_boxes.push_back({b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy});
  }
  return out;
}

Trainer::Trainer(ModelGraph& model, TrainConfig config, std::vector<SyntheticScene> scenes)
    : model_(model), config_(std::move(config)), scenes_(std::move(scenes)) {
  config_.validate();
  if (scenes_.empty()) throw ConfigError("trainer needs at least one scene");
  optimizer_ = OptimizerState::zeros_like(model_);
}

TrainStepInfo Trainer::step() {
  const std::int64_t it = iteration_;
  TrainStepInfo info;
  info.iteration = it;

  Rng pick_rng(config_.seed, Rng::stream("iter:" + std::to_string(it) + ":scene"));
  info.scene_index = static_cast<int>(pick_rng.next_below(scenes_.size()));
  const SyntheticScene* scene = &scenes_[static_cast<std::size_t>(info.scene_index)];
  SyntheticScene flipped;
  if (config_.hflip && pick_rng.next_double() < 0.5) {
    flipped = hflip_scene(*scene);
    scene = &flipped;
    info.flipped = true;
  }

  ModelGraph::ForwardTrain fwd = model_.forward_train(scene->image, config_.proposals);
  info.num_proposals = static_cast<int>(fwd.proposals.size());

  Rng rpn_rng(config_.seed, Rng::stream("iter:" + std::to_string(it) + ":rpn"));
  std::vector<RpnTarget> rpn_targets = assign_rpn_targets(fwd.anchors, scene->gt_boxes, config_, rpn_rng);
  Rng roi_rng(config_.seed, Rng::stream("iter:" + std::to_string(it) + ":roi"));
  std::vector<RoiTarget> roi_targets =
      assign_roi_targets(fwd.proposals, scene->gt_boxes, scene->gt_classes, config_, roi_rng);
  info.rpn_sampled = static_cast<int>(rpn_targets.size());
  info.roi_sampled = static_cast<int>(roi_targets.size());

  BoxList rois;
  rois.reserve(roi_targets.size());
  for (const auto& t : roi_targets) rois.push_back(t.roi);

  MultitaskTargets targets =
      build_targets(fwd.anchors, rpn_targets, roi_targets, model_.options().bbox_reg_stds);

  ModelGraph::HeadOut heads = model_.run_heads(fwd.features, rois);
  Tensor loss = multitask_loss(fwd.rpn.objectness, fwd.rpn.deltas, heads.cls_logits,
                               heads.box_deltas, targets, model_.num_classes(), &info.loss);

  // Auxiliary losses for the loc-branch RPN, when configured.
  if (model_.options().dual_rpn && fwd.rpn_secondary.objectness.defined()) {
    AnchorGrid loc_grid =
        generate_anchors(fwd.features.loc.dim(2), fwd.features.loc.dim(3), model_.loc_stride(),
                         model_.options().anchor_sizes, model_.options().anchor_ratios);
    Rng rpn2_rng(config_.seed, Rng::stream("iter:" + std::to_string(it) + ":rpn2"));
    std::vector<RpnTarget> rpn2_targets =
        assign_rpn_targets(loc_grid, scene->gt_boxes, config_, rpn2_rng);
    MultitaskTargets aux;
    for (const auto& r : rpn2_targets) {
      aux.rpn_rows.push_back(r.anchor_index);
      aux.rpn_labels.push_back(r.foreground ? 1 : 0);
      if (r.foreground) {
        aux.rpn_fg_rows.push_back(r.anchor_index);
        aux.rpn_fg_deltas.insert(aux.rpn_fg_deltas.end(),
                                 {r.delta.dx, r.delta.dy, r.delta.dw, r.delta.dh});
      }
    }
    Tensor l2 = cross_entropy_rows(gather_rows(fwd.rpn_secondary.objectness, aux.rpn_rows),
                                   aux.rpn_labels);
    if (!aux.rpn_fg_rows.empty()) {
      l2 = add(l2, smooth_l1_loss(gather_rows(fwd.rpn_secondary.deltas, aux.rpn_fg_rows),
                                  aux.rpn_fg_deltas, static_cast<double>(aux.rpn_rows.size())));
    }
    loss = add(loss, l2);
    info.loss.total = loss.item();
  }

  {
    std::ostringstream os;
    os << "iter=" << it << " scene=" << info.scene_index << " flipped=" << (info.flipped ? 1 : 0)
       << " proposals=" << info.num_proposals << " rpn_sampled=" << info.rpn_sampled
       << " roi_sampled=" << info.roi_sampled;
    last_batch_debug_ = os.str();
  }

  if (!std::isfinite(info.loss.total)) {
    throw NumericError("non-finite loss at " + last_batch_debug_);
  }

  model_.zero_grads();
  loss.backward();
  info.lr = lr_at(it, config_.lr_schedule);
  sgd_momentum_step(model_, optimizer_, info.lr, config_.momentum, config_.weight_decay);

  iteration_ = it + 1;
  return info;
}

}  // namespace grcn
