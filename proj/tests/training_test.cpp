#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "grcn/errors.hpp"
#include "grcn/model.hpp"
#include "grcn/ops.hpp"
#include "grcn/synthetic.hpp"
#include "grcn/training.hpp"
#include "support/fd_check.hpp"
#include "support/reference_impls.hpp"
#include "support/test_util.hpp"

using namespace grcn;
using grcn_test::fd_compare;
using grcn_test::make_rng;
using grcn_test::random_tensor;

namespace {

TrainConfig small_train_config() {
  TrainConfig cfg;
  cfg.lr_schedule = {{1000, 0.01}};
  cfg.rpn_batch = 32;
  cfg.roi_batch = 16;
  cfg.seed = 5;
  cfg.proposals = {200, 50, 0.7};
  return cfg;
}

ModelOptions tiny_options() {
  ModelOptions opt;
  opt.num_classes = 3;
  opt.anchor_sizes = {16, 32};
  opt.anchor_ratios = {0.5, 1, 2};
  opt.rpn_channels = 8;
  opt.head_hidden = 16;
  opt.seed = 11;
  return opt;
}

}  // namespace

TEST(LrSchedule, PaperSchedules) {
  EXPECT_DOUBLE_EQ(lr_at(0, coco_lr_schedule()), 0.001);
  EXPECT_DOUBLE_EQ(lr_at(239999, coco_lr_schedule()), 0.001);
  EXPECT_DOUBLE_EQ(lr_at(240000, coco_lr_schedule()), 0.0001);
  EXPECT_DOUBLE_EQ(lr_at(300000, coco_lr_schedule()), 0.0001);
  // beyond the final bound the last lr applies
  EXPECT_DOUBLE_EQ(lr_at(1000000, coco_lr_schedule()), 0.0001);
  EXPECT_DOUBLE_EQ(lr_at(149999, voc_lr_schedule()), 0.001);
  EXPECT_DOUBLE_EQ(lr_at(150000, voc_lr_schedule()), 0.0001);
}

TEST(Sgd, SingleStepScalesGradByLr) {
  std::vector<double> w{1.0, 2.0}, g{3.0, -1.0}, v{0.0, 0.0};
  sgd_momentum_step(w, g, v, 0.001, 0.9);
  EXPECT_NEAR(w[0], 1.0 - 0.003, 1e-15);
  EXPECT_NEAR(w[1], 2.0 + 0.001, 1e-15);
}

TEST(Sgd, ZeroGradsLeaveParamsConstant) {
  std::vector<double> w{1.0, 2.0}, g{0.0, 0.0}, v{0.0, 0.0};
  for (int i = 0; i < 10; ++i) sgd_momentum_step(w, g, v, 0.01, 0.9);
  EXPECT_DOUBLE_EQ(w[0], 1.0);
  EXPECT_DOUBLE_EQ(w[1], 2.0);
}

TEST(Sgd, TwoStepClosedForm) {
  const double lr = 0.1, m = 0.9, grad = 2.0;
  std::vector<double> w{0.0}, g{grad}, v{0.0};
  sgd_momentum_step(w, g, v, lr, m);
  sgd_momentum_step(w, g, v, lr, m);
  EXPECT_NEAR(w[0], -lr * grad * (2.0 + m), 1e-12);
}

TEST(Sgd, ShapeMismatchThrows) {
  std::vector<double> w{1.0}, g{1.0, 2.0}, v{0.0};
  EXPECT_THROW(sgd_momentum_step(w, g, v, 0.1, 0.9), DimensionError);
}

TEST(RpnTargets, ExactAnchorMatchIsForegroundWithZeroDelta) {
  AnchorGrid grid = generate_anchors(4, 4, 16, {32}, {1});
  const Box gt = grid.boxes[5];
  auto rng = make_rng("rpn-exact");
  TrainConfig cfg = small_train_config();
  const auto targets = assign_rpn_targets(grid, {gt}, cfg, rng);
  bool found = false;
  for (const auto& t : targets) {
    if (t.anchor_index == 5) {
      found = true;
      EXPECT_TRUE(t.foreground);
      EXPECT_NEAR(t.delta.dx, 0.0, 1e-12);
      EXPECT_NEAR(t.delta.dw, 0.0, 1e-12);
    }
  }
  EXPECT_TRUE(found);
}

TEST(RpnTargets, NoGtsGiveAllBackground) {
  AnchorGrid grid = generate_anchors(4, 4, 16, {32}, {1});
  auto rng = make_rng("rpn-nogt");
  TrainConfig cfg = small_train_config();
  const auto targets = assign_rpn_targets(grid, {}, cfg, rng);
  EXPECT_FALSE(targets.empty());
  for (const auto& t : targets) EXPECT_FALSE(t.foreground);
}

TEST(RpnTargets, MatchesExhaustiveOracleOnRandomScenes) {
  TrainConfig cfg = small_train_config();
  auto scene_rng = make_rng("rpn-oracle-scenes");
  for (int trial = 0; trial < 50; ++trial) {
    AnchorGrid grid = generate_anchors(6, 6, 8, {12, 24}, {0.5, 1, 2});
    BoxList gts;
    const int n_gt = 1 + static_cast<int>(scene_rng.next_below(3));
    for (int g = 0; g < n_gt; ++g) {
      const double x = scene_rng.uniform(0, 30), y = scene_rng.uniform(0, 30);
      gts.push_back({x, y, x + scene_rng.uniform(6, 18), y + scene_rng.uniform(6, 18)});
    }
    auto rng = make_rng("rpn-oracle-" + std::to_string(trial));
    const auto targets = assign_rpn_targets(grid, gts, cfg, rng);
    const auto oracle =
        grcn_test::rpn_assignment_oracle(grid, gts, cfg.rpn_fg_iou, cfg.rpn_bg_iou);

    int fg_count = 0;
    for (const auto& t : targets) {
      if (t.foreground) {
        ++fg_count;
        EXPECT_TRUE(oracle.may_be_fg[static_cast<std::size_t>(t.anchor_index)])
            << "anchor " << t.anchor_index << " must satisfy IoU >= 0.7 or be a per-gt argmax";
        const int g = oracle.anchor_gt[static_cast<std::size_t>(t.anchor_index)];
        ASSERT_GE(g, 0);
        const Delta expect = encode_box(grid.boxes[static_cast<std::size_t>(t.anchor_index)],
                                        gts[static_cast<std::size_t>(g)]);
        EXPECT_NEAR(t.delta.dx, expect.dx, 1e-12);
        EXPECT_NEAR(t.delta.dh, expect.dh, 1e-12);
      } else {
        EXPECT_TRUE(oracle.may_be_bg[static_cast<std::size_t>(t.anchor_index)]);
      }
    }
    EXPECT_LE(fg_count, cfg.rpn_batch / 2);
    EXPECT_LE(static_cast<int>(targets.size()), cfg.rpn_batch);
  }
}

TEST(RoiTargets, ProposalEqualToGtIsForegroundWithZeroDelta) {
  TrainConfig cfg = small_train_config();
  const Box gt{10, 10, 42, 42};
  auto rng = make_rng("roi-exact");
  const auto targets = assign_roi_targets({gt, {60, 60, 90, 90}}, {gt}, {2}, cfg, rng);
  bool found = false;
  for (const auto& t : targets) {
    if (t.label == 3) {
      found = true;
      EXPECT_NEAR(t.delta.dx, 0.0, 1e-12);
      EXPECT_NEAR(t.delta.dw, 0.0, 1e-12);
    }
  }
  EXPECT_TRUE(found);
}

TEST(RoiTargets, DisjointProposalExcludedOrBackground) {
  TrainConfig cfg = small_train_config();
  auto rng = make_rng("roi-disjoint");
  const Box gt{10, 10, 30, 30};
  const Box far{200, 200, 240, 240};
  const auto targets = assign_roi_targets({far}, {gt}, {0}, cfg, rng);
  for (const auto& t : targets) {
    // `far` has IoU 0 with the gt: below the bg floor, it may never be fg
    if (t.roi.x1 == far.x1) EXPECT_EQ(t.label, 0) << "disjoint proposal must not be foreground";
  }
}

TEST(RoiTargets, MatchesExhaustiveOracleOnRandomScenes) {
  TrainConfig cfg = small_train_config();
  auto scene_rng = make_rng("roi-oracle-scenes");
  for (int trial = 0; trial < 50; ++trial) {
    BoxList gts;
    std::vector<int> classes;
    const int n_gt = 1 + static_cast<int>(scene_rng.next_below(3));
    for (int g = 0; g < n_gt; ++g) {
      const double x = scene_rng.uniform(0, 60), y = scene_rng.uniform(0, 60);
      gts.push_back({x, y, x + scene_rng.uniform(10, 40), y + scene_rng.uniform(10, 40)});
      classes.push_back(static_cast<int>(scene_rng.next_below(3)));
    }
    BoxList proposals;
    for (int p = 0; p < 40; ++p) {
      const double x = scene_rng.uniform(0, 70), y = scene_rng.uniform(0, 70);
      proposals.push_back({x, y, x + scene_rng.uniform(8, 40), y + scene_rng.uniform(8, 40)});
    }
    auto rng = make_rng("roi-oracle-" + std::to_string(trial));
    const auto targets = assign_roi_targets(proposals, gts, classes, cfg, rng);
    const auto oracle = grcn_test::roi_assignment_oracle(proposals, gts, classes, cfg.roi_fg_iou,
                                                         cfg.roi_bg_lo, cfg.roi_bg_hi);

    // find each sampled roi in the pool and check the label matches the oracle
    BoxList pool = proposals;
    pool.insert(pool.end(), gts.begin(), gts.end());
    int fg_count = 0;
    for (const auto& t : targets) {
      int pool_idx = -1;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        if (pool[i].x1 == t.roi.x1 && pool[i].y1 == t.roi.y1 && pool[i].x2 == t.roi.x2 &&
            pool[i].y2 == t.roi.y2) {
          pool_idx = static_cast<int>(i);
          break;
        }
      }
      ASSERT_GE(pool_idx, 0) << "sampled roi not found in proposal pool";
      EXPECT_EQ(t.label, oracle.label[static_cast<std::size_t>(pool_idx)]);
      if (t.label > 0) {
        ++fg_count;
        const int g = oracle.roi_gt[static_cast<std::size_t>(pool_idx)];
        const Delta expect = encode_box(t.roi, gts[static_cast<std::size_t>(g)]);
        EXPECT_NEAR(t.delta.dx, expect.dx, 1e-12);
        EXPECT_NEAR(t.delta.dy, expect.dy, 1e-12);
      }
    }
    EXPECT_LE(fg_count, static_cast<int>(cfg.fg_fraction * cfg.roi_batch));
    EXPECT_LE(static_cast<int>(targets.size()), cfg.roi_batch);
  }
}

TEST(MultitaskLoss, PerfectPredictionsApproachZero) {
  // two sampled anchors (1 fg, 1 bg), two rois (1 fg of class 1, 1 bg)
  Tensor rpn_obj = Tensor::from({4, 2}, {0, 30, 30, 0, 0, 0, 0, 0});
  Tensor rpn_del = Tensor::zeros({4, 4});
  Tensor cls_logits = Tensor::from({2, 4}, {0, 30, 0, 0, 30, 0, 0, 0});
  Tensor box_del = Tensor::zeros({2, 12});
  MultitaskTargets t;
  t.rpn_rows = {0, 1};
  t.rpn_labels = {1, 0};
  t.rpn_fg_rows = {0};
  t.rpn_fg_deltas = {0, 0, 0, 0};
  t.roi_labels = {1, 0};
  t.roi_fg_rows = {0};
  t.roi_fg_deltas = {0, 0, 0, 0};
  LossBreakdown bd;
  Tensor loss = multitask_loss(rpn_obj, rpn_del, cls_logits, box_del, t, 3, &bd);
  EXPECT_NEAR(bd.rpn_reg, 0.0, 1e-12);
  EXPECT_NEAR(bd.loc, 0.0, 1e-12);
  EXPECT_NEAR(bd.rpn_cls, 0.0, 1e-9);
  EXPECT_NEAR(bd.cls, 0.0, 1e-9);
  EXPECT_NEAR(loss.item(), 0.0, 1e-9);
}

TEST(MultitaskLoss, EmptyForegroundGivesZeroRegressionTerms) {
  Tensor rpn_obj = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor rpn_del = Tensor::from({2, 4}, std::vector<double>(8, 0.5));
  Tensor cls_logits = Tensor::from({2, 4}, std::vector<double>(8, 0.25));
  Tensor box_del = Tensor::from({2, 12}, std::vector<double>(24, 0.5));
  MultitaskTargets t;
  t.rpn_rows = {0, 1};
  t.rpn_labels = {0, 0};
  t.roi_labels = {0, 0};
  LossBreakdown bd;
  multitask_loss(rpn_obj, rpn_del, cls_logits, box_del, t, 3, &bd);
  EXPECT_DOUBLE_EQ(bd.rpn_reg, 0.0);
  EXPECT_DOUBLE_EQ(bd.loc, 0.0);
  EXPECT_GT(bd.rpn_cls, 0.0);
  EXPECT_GT(bd.cls, 0.0);
}

TEST(BranchIsolation, LocLossHasZeroGradInClsBranchAndViceVersa) {
  ModelGraph m = ModelGraph::build(Variant::kGrcn, BackboneFamily::kToyVgg, tiny_options());
  auto rng = make_rng("isolation");
  Tensor image = random_tensor({1, 3, 64, 64}, rng, 0.0, 1.0);
  auto features = m.run_backbone(image);
  BoxList rois{{8, 8, 40, 40}, {16, 20, 60, 58}};
  auto heads = m.run_heads(features, rois);

  // loc-only loss: smooth-l1 on the class-1 delta slice of both rois
  m.zero_grads();
  {
    Tensor fg = gather_row_slices(gather_rows(heads.box_deltas, {0, 1}), {0, 0}, 4);
    Tensor loss = smooth_l1_loss(fg, std::vector<double>(8, 0.3), 2.0);
    loss.backward();
  }
  double cls_branch_grad = 0.0, loc_branch_grad = 0.0;
  for (const auto& [name, t] : m.parameters()) {
    double norm = 0.0;
    for (double g : t.grad()) norm += std::abs(g);
    if (name.rfind("cls.", 0) == 0) cls_branch_grad += norm;
    if (name.rfind("loc.", 0) == 0) loc_branch_grad += norm;
    if (name.rfind("attention.", 0) == 0) cls_branch_grad += norm;
  }
  EXPECT_DOUBLE_EQ(cls_branch_grad, 0.0) << "loc loss must not touch cls-branch parameters";
  EXPECT_GT(loc_branch_grad, 0.0);

  // cls-only loss: cross-entropy on the class logits
  auto heads2 = m.run_heads(features, rois);
  m.zero_grads();
  {
    Tensor loss = cross_entropy_rows(heads2.cls_logits, {1, 0});
    loss.backward();
  }
  cls_branch_grad = 0.0;
  loc_branch_grad = 0.0;
  for (const auto& [name, t] : m.parameters()) {
    double norm = 0.0;
    for (double g : t.grad()) norm += std::abs(g);
    if (name.rfind("cls.", 0) == 0) cls_branch_grad += norm;
    if (name.rfind("loc.", 0) == 0) loc_branch_grad += norm;
  }
  EXPECT_DOUBLE_EQ(loc_branch_grad, 0.0) << "cls loss must not touch loc-branch parameters";
  EXPECT_GT(cls_branch_grad, 0.0);
}

TEST(EndToEnd, LossGradientMatchesFiniteDifferencesOnTinyModel) {
  ModelOptions opt = tiny_options();
  opt.head_hidden = 8;
  opt.rpn_channels = 4;
  opt.attention_context_size = 7;
  ModelGraph m = ModelGraph::build(Variant::kGrcn, BackboneFamily::kToyVgg, opt);
  auto rng = make_rng("e2e-fd");
  Tensor image = random_tensor({1, 3, 32, 32}, rng, 0.0, 1.0);

  // freeze a plausible batch (2x2 cls grid, 24 anchors)
  BoxList rois{{6, 6, 22, 22}, {12, 10, 30, 30}, {1, 1, 30, 20}};
  MultitaskTargets targets;
  targets.rpn_rows = {0, 7, 13, 21};
  targets.rpn_labels = {1, 0, 1, 0};
  targets.rpn_fg_rows = {0, 13};
  targets.rpn_fg_deltas = {0.1, -0.2, 0.05, 0.3, -0.1, 0.2, 0.0, -0.25};
  targets.roi_labels = {1, 3, 0};
  targets.roi_fg_rows = {0, 1};
  targets.roi_fg_deltas = {0.5, -0.5, 0.2, 0.1, -0.3, 0.2, 0.4, 0.0};

  m.zero_grads();
  Tensor loss = loss_with_fixed_targets(m, image, rois, targets);
  loss.backward();

  auto loss_fn = [&] { return loss_with_fixed_targets(m, image, rois, targets).item(); };
  // probe convs at several depths plus attention and head weights
  for (const char* name : {"shared.s0.l0.w", "cls.s0.l1.w", "loc.s0.l0.w", "rpn.conv.w",
                           "attention.w_p", "head.fc1.w", "head.box_out.w"}) {
    Tensor p = m.parameter(name);
    // eps below the per-op default: the deep stack crosses relu/argmax
    // kinks within a 1e-5 interval
    const auto report = fd_compare(p, loss_fn, 1e-6, 1e-8, 48);
    EXPECT_LT(report.max_rel_err, 1e-3) << "gradient mismatch in " << name;
  }
}

TEST(Trainer, DeterministicAcrossRuns) {
  auto scenes = generate_synthetic_dataset(3, 6, 3, 64, 64);
  ModelOptions opt = tiny_options();
  TrainConfig cfg = small_train_config();

  ModelGraph m1 = ModelGraph::build(Variant::kBaseline, BackboneFamily::kToyVgg, opt);
  Trainer t1(m1, cfg, scenes);
  ModelGraph m2 = ModelGraph::build(Variant::kBaseline, BackboneFamily::kToyVgg, opt);
  Trainer t2(m2, cfg, scenes);

  for (int i = 0; i < 3; ++i) {
    const auto a = t1.step();
    const auto b = t2.step();
    EXPECT_DOUBLE_EQ(a.loss.total, b.loss.total);
    EXPECT_EQ(a.scene_index, b.scene_index);
  }
  for (std::size_t p = 0; p < m1.parameters().size(); ++p) {
    const auto& va = m1.parameters()[p].second.values();
    const auto& vb = m2.parameters()[p].second.values();
    for (std::size_t i = 0; i < va.size(); ++i) EXPECT_DOUBLE_EQ(va[i], vb[i]);
  }
}

TEST(Trainer, ShortRunDecreasesLoss) {
  auto scenes = generate_synthetic_dataset(9, 20, 3, 64, 64);
  ModelOptions opt = tiny_options();
  opt.anchor_sizes = {16, 32, 48};
  TrainConfig cfg = small_train_config();
  cfg.lr_schedule = {{400, 0.02}};
  ModelGraph m = ModelGraph::build(Variant::kBaseline, BackboneFamily::kToyVgg, opt);
  Trainer tr(m, cfg, scenes);
  double first_avg = 0.0, last_avg = 0.0;
  const int n = 120, window = 30;
  for (int i = 0; i < n; ++i) {
    const auto info = tr.step();
    if (i < window) first_avg += info.loss.total;
    if (i >= n - window) last_avg += info.loss.total;
  }
  EXPECT_LT(last_avg, first_avg) << "loss should decrease within a short run";
}

TEST(Synthetic, DeterministicAndInBounds) {
  auto a = generate_synthetic_dataset(7, 5, 3, 96, 96);
  auto b = generate_synthetic_dataset(7, 5, 3, 96, 96);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image.values(), b[i].image.values());
    ASSERT_EQ(a[i].gt_boxes.size(), b[i].gt_boxes.size());
    for (std::size_t g = 0; g < a[i].gt_boxes.size(); ++g) {
      const Box& box = a[i].gt_boxes[g];
      EXPECT_DOUBLE_EQ(box.x1, b[i].gt_boxes[g].x1);
      EXPECT_GE(box.x1, 0.0);
      EXPECT_GE(box.y1, 0.0);
      EXPECT_LE(box.x2, 96.0);
      EXPECT_LE(box.y2, 96.0);
      EXPECT_GT(box.area(), 0.0);
      EXPECT_GE(a[i].gt_classes[g], 0);
      EXPECT_LT(a[i].gt_classes[g], 3);
    }
    EXPECT_GE(a[i].gt_boxes.size(), 1u);
    EXPECT_LE(a[i].gt_boxes.size(), 4u);
  }
}

TEST(Synthetic, SizeHistogramSpansAllThreeBuckets) {
  auto scenes = generate_synthetic_dataset(7, 120, 3, 128, 128);
  const auto hist = size_histogram(scenes);
  EXPECT_GT(hist.small, 0);
  EXPECT_GT(hist.medium, 0);
  EXPECT_GT(hist.large, 0);
}

TEST(Synthetic, FlipAndResizeKeepBoxesConsistent) {
  auto scenes = generate_synthetic_dataset(13, 1, 3, 64, 96);
  const auto& s = scenes[0];
  const auto flipped = hflip_scene(s);
  ASSERT_EQ(flipped.gt_boxes.size(), s.gt_boxes.size());
  for (std::size_t i = 0; i < s.gt_boxes.size(); ++i) {
    EXPECT_DOUBLE_EQ(flipped.gt_boxes[i].width(), s.gt_boxes[i].width());
    EXPECT_DOUBLE_EQ(flipped.gt_boxes[i].x1, 64.0 - s.gt_boxes[i].x2);
  }
  // double flip restores the scene bit-exactly
  const auto twice = hflip_scene(flipped);
  EXPECT_EQ(twice.image.values(), s.image.values());

  const auto resized = resize_scene_shorter_side(s, 32);
  EXPECT_EQ(resized.image.dim(2), 48);
  EXPECT_EQ(resized.image.dim(3), 32);
  for (std::size_t i = 0; i < s.gt_boxes.size(); ++i) {
    EXPECT_NEAR(resized.gt_boxes[i].x1, s.gt_boxes[i].x1 * 0.5, 1e-9);
  }
}

TEST(Synthetic, TooManyClassesThrows) {
  EXPECT_THROW(generate_synthetic_dataset(1, 1, synthetic_archetype_count() + 1, 64, 64),
               ConfigError);
}
