// Acceptance suite: one pass/fail line per criterion, exit nonzero if any
// fails. The smoke criteria drive the installed CLI binary end to end.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "grcn/attention.hpp"
#include "grcn/boxes.hpp"
#include "grcn/errors.hpp"
#include "grcn/eval.hpp"
#include "grcn/model.hpp"
#include "grcn/ops.hpp"
#include "grcn/roi.hpp"
#include "grcn/synthetic.hpp"
#include "grcn/training.hpp"
#include "support/fd_check.hpp"
#include "support/reference_impls.hpp"
#include "support/test_util.hpp"

using namespace grcn;
using grcn_test::fd_compare;
using grcn_test::random_tensor;
using grcn_test::random_values;

namespace {

struct Failure {
  std::string what;
};

void require(bool cond, const std::string& what) {
  if (!cond) throw Failure{what};
}

void require_lt(double value, double bound, const std::string& what) {
  if (!(value < bound)) {
    std::ostringstream os;
    os << what << " (got " << value << ", bound " << bound << ")";
    throw Failure{os.str()};
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- criterion 1: scale disclaimer -------------------------------------------

void criterion_scale_disclaimer() {
  std::cout << "      full-dataset detection scores are out of scope at this scale;\n"
            << "      correctness is established by the property suites below\n";
}

// ---- criterion 2: gradient suite ----------------------------------------------

void criterion_gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const double tol = 1e-4;
  const int instances = 20;

  // conv2d
  for (int i = 0; i < instances; ++i) {
    auto rng = grcn_test::make_rng("acc-conv-" + std::to_string(i));
    const int ci = 1 + static_cast<int>(rng.next_below(3));
    const int co = 1 + static_cast<int>(rng.next_below(3));
    const int h = 4 + static_cast<int>(rng.next_below(4));
    const int w = 4 + static_cast<int>(rng.next_below(4));
    const int k = 1 + 2 * static_cast<int>(rng.next_below(2));  // 1 or 3
    const int stride = 1 + static_cast<int>(rng.next_below(2));
    const int pad = static_cast<int>(rng.next_below(2));
    Tensor x = random_tensor({1, ci, h, w}, rng);
    Tensor wt = random_tensor({co, ci, k, k}, rng);
    Tensor b = random_tensor({co}, rng);
    x.set_requires_grad(true);
    wt.set_requires_grad(true);
    b.set_requires_grad(true);
    Tensor out = conv2d(x, wt, b, stride, pad);
    const auto proj = random_values(static_cast<std::size_t>(out.size()), rng);
    out.backward_with(proj);
    auto loss = [&] { return grcn_test::weighted_sum(conv2d(x, wt, b, stride, pad), proj); };
    require_lt(fd_compare(x, loss).max_rel_err, tol, "conv2d d/dinput");
    require_lt(fd_compare(wt, loss).max_rel_err, tol, "conv2d d/dweight");
    require_lt(fd_compare(b, loss).max_rel_err, tol, "conv2d d/dbias");
  }

  // maxpool2d
  for (int i = 0; i < instances; ++i) {
    auto rng = grcn_test::make_rng("acc-pool-" + std::to_string(i));
    const int h = 4 + static_cast<int>(rng.next_below(5));
    const int stride = 1 + static_cast<int>(rng.next_below(2));
    Tensor x = random_tensor({1, 2, h, h}, rng);
    x.set_requires_grad(true);
    Tensor out = maxpool2d(x, 2, 2, stride, 0);
    const auto proj = random_values(static_cast<std::size_t>(out.size()), rng);
    out.backward_with(proj);
    auto loss = [&] { return grcn_test::weighted_sum(maxpool2d(x, 2, 2, stride, 0), proj); };
    require_lt(fd_compare(x, loss).max_rel_err, tol, "maxpool2d d/dinput");
  }

  // linear
  for (int i = 0; i < instances; ++i) {
    auto rng = grcn_test::make_rng("acc-linear-" + std::to_string(i));
    const int n = 1 + static_cast<int>(rng.next_below(4));
    const int d = 1 + static_cast<int>(rng.next_below(6));
    const int m = 1 + static_cast<int>(rng.next_below(5));
    Tensor x = random_tensor({n, d}, rng);
    Tensor w = random_tensor({d, m}, rng);
    Tensor b = random_tensor({m}, rng);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    Tensor out = linear(x, w, b);
    const auto proj = random_values(static_cast<std::size_t>(out.size()), rng);
    out.backward_with(proj);
    auto loss = [&] { return grcn_test::weighted_sum(linear(x, w, b), proj); };
    require_lt(fd_compare(x, loss).max_rel_err, tol, "linear d/dx");
    require_lt(fd_compare(w, loss).max_rel_err, tol, "linear d/dw");
    require_lt(fd_compare(b, loss).max_rel_err, tol, "linear d/db");
  }

  // softmax_rows
  for (int i = 0; i < instances; ++i) {
    auto rng = grcn_test::make_rng("acc-softmax-" + std::to_string(i));
    const int n = 1 + static_cast<int>(rng.next_below(5));
    const int d = 2 + static_cast<int>(rng.next_below(6));
    Tensor x = random_tensor({n, d}, rng, -3.0, 3.0);
    x.set_requires_grad(true);
    Tensor out = softmax_rows(x);
    const auto proj = random_values(static_cast<std::size_t>(out.size()), rng);
    out.backward_with(proj);
    auto loss = [&] { return grcn_test::weighted_sum(softmax_rows(x), proj); };
    require_lt(fd_compare(x, loss).max_rel_err, tol, "softmax_rows jacobian");
  }

  // roi_pool
  for (int i = 0; i < instances; ++i) {
    auto rng = grcn_test::make_rng("acc-roi-" + std::to_string(i));
    Tensor features = random_tensor({1, 2, 10, 10}, rng);
    features.set_requires_grad(true);
    BoxList rois;
    const int nr = 1 + static_cast<int>(rng.next_below(4));
    for (int r = 0; r < nr; ++r) {
      const double x = rng.uniform(0, 24), y = rng.uniform(0, 24);
      rois.push_back({x, y, x + rng.uniform(6, 16), y + rng.uniform(6, 16)});
    }
    Tensor out = roi_pool(features, rois, 5, 4);
    const auto proj = random_values(static_cast<std::size_t>(out.size()), rng);
    out.backward_with(proj);
    auto loss = [&] { return grcn_test::weighted_sum(roi_pool(features, rois, 5, 4), proj); };
    require_lt(fd_compare(features, loss).max_rel_err, tol, "roi_pool d/dfeatures");
  }

  // global_context_attend (q=49, m=196, d=8 on the first instance, smaller after)
  for (int i = 0; i < instances; ++i) {
    auto rng = grcn_test::make_rng("acc-attn-" + std::to_string(i));
    const int q = i == 0 ? 49 : 3 + static_cast<int>(rng.next_below(8));
    const int m = i == 0 ? 196 : 4 + static_cast<int>(rng.next_below(12));
    const int d = 8;
    Tensor p = random_tensor({q, d}, rng);
    Tensor v = random_tensor({m, d}, rng);
    AttentionWeights w = make_attention_weights(d, 1, i % 3 == 2, 100 + i);
    p.set_requires_grad(true);
    v.set_requires_grad(true);
    Tensor out = global_context_attend(p, v, w);
    const auto proj = random_values(static_cast<std::size_t>(out.size()), rng);
    out.backward_with(proj);
    auto loss = [&] { return grcn_test::weighted_sum(global_context_attend(p, v, w), proj); };
    require_lt(fd_compare(p, loss, 1e-5, 1e-8, 48).max_rel_err, tol, "attention d/dP");
    require_lt(fd_compare(v, loss, 1e-5, 1e-8, 48).max_rel_err, tol, "attention d/dV");
    require_lt(fd_compare(w.w_p, loss, 1e-5, 1e-8, 48).max_rel_err, tol, "attention d/dW_P");
    require_lt(fd_compare(w.w_k, loss, 1e-5, 1e-8, 48).max_rel_err, tol, "attention d/dW_K");
  }

  // losses: cross entropy + smooth l1
  for (int i = 0; i < instances; ++i) {
    auto rng = grcn_test::make_rng("acc-loss-" + std::to_string(i));
    const int n = 2 + static_cast<int>(rng.next_below(6));
    const int d = 2 + static_cast<int>(rng.next_below(5));
    Tensor logits = random_tensor({n, d}, rng, -2.0, 2.0);
    logits.set_requires_grad(true);
    std::vector<int> labels;
    for (int r = 0; r < n; ++r) labels.push_back(static_cast<int>(rng.next_below(d)));
    Tensor ce = cross_entropy_rows(logits, labels);
    ce.backward();
    auto ce_loss = [&] { return cross_entropy_rows(logits, labels).item(); };
    require_lt(fd_compare(logits, ce_loss).max_rel_err, tol, "cross_entropy d/dlogits");

    Tensor pred = random_tensor({n, 4}, rng, -2.0, 2.0);
    pred.set_requires_grad(true);
    const auto target = random_values(static_cast<std::size_t>(n) * 4, rng, -2.0, 2.0);
    Tensor sl = smooth_l1_loss(pred, target, static_cast<double>(n));
    sl.backward();
    auto sl_loss = [&] { return smooth_l1_loss(pred, target, static_cast<double>(n)).item(); };
    require_lt(fd_compare(pred, sl_loss).max_rel_err, tol, "smooth_l1 d/dpred");
  }

  // end-to-end on a tiny model, fixed targets
  {
    ModelOptions opt;
    opt.num_classes = 3;
    opt.anchor_sizes = {16, 32};
    opt.anchor_ratios = {0.5, 1, 2};
    opt.rpn_channels = 4;
    opt.head_hidden = 8;
    opt.attention_context_size = 7;
    opt.seed = 77;
    ModelGraph m = ModelGraph::build(Variant::kGrcn, BackboneFamily::kToyVgg, opt);
    auto rng = grcn_test::make_rng("acc-e2e");
    Tensor image = random_tensor({1, 3, 32, 32}, rng, 0.0, 1.0);
    BoxList rois{{6, 6, 22, 22}, {12, 10, 30, 30}};
    MultitaskTargets targets;
    targets.rpn_rows = {0, 7, 13, 21};
    targets.rpn_labels = {1, 0, 1, 0};
    targets.rpn_fg_rows = {0, 13};
    targets.rpn_fg_deltas = {0.1, -0.2, 0.05, 0.3, -0.1, 0.2, 0.0, -0.25};
    targets.roi_labels = {1, 0};
    targets.roi_fg_rows = {0};
    targets.roi_fg_deltas = {0.5, -0.5, 0.2, 0.1};
    m.zero_grads();
    Tensor loss = loss_with_fixed_targets(m, image, rois, targets);
    loss.backward();
    auto loss_fn = [&] { return loss_with_fixed_targets(m, image, rois, targets).item(); };
    for (const char* name : {"shared.s0.l0.w", "cls.s0.l1.w", "loc.s0.l0.w", "rpn.conv.w",
                             "attention.w_k", "head.fc1.w"}) {
      // eps below the per-op default: the deep stack crosses relu/argmax
      // kinks within a 1e-5 interval
      require_lt(fd_compare(m.parameter(name), loss_fn, 1e-6, 1e-8, 32).max_rel_err, 1e-3,
                 std::string("end-to-end gradient through ") + name);
    }
  }

  require_lt(seconds_since(t0), 120.0, "gradient suite runtime (s)");
}

// ---- criterion 3: oracle suite --------------------------------------------------

void criterion_oracle_suite() {
  const auto t0 = std::chrono::steady_clock::now();

  // NMS vs brute force: 100 instances of 200 boxes
  for (int trial = 0; trial < 100; ++trial) {
    auto rng = grcn_test::make_rng("acc-nms-" + std::to_string(trial));
    BoxList boxes;
    std::vector<double> scores;
    for (int i = 0; i < 200; ++i) {
      const double x = rng.uniform(0, 80), y = rng.uniform(0, 80);
      boxes.push_back({x, y, x + rng.uniform(4, 40), y + rng.uniform(4, 40)});
      scores.push_back(rng.next_double());
    }
    require(nms(boxes, scores, 0.3) == grcn_test::brute_force_nms(boxes, scores, 0.3),
            "nms deviates from the O(n^2) reference");
  }

  // IoU vs rasterized pixel counting: exact on integer boxes
  {
    auto rng = grcn_test::make_rng("acc-iou");
    for (int i = 0; i < 100; ++i) {
      Box a, b;
      a.x1 = static_cast<double>(rng.next_below(40));
      a.y1 = static_cast<double>(rng.next_below(40));
      a.x2 = a.x1 + 1 + static_cast<double>(rng.next_below(25));
      a.y2 = a.y1 + 1 + static_cast<double>(rng.next_below(25));
      b.x1 = static_cast<double>(rng.next_below(40));
      b.y1 = static_cast<double>(rng.next_below(40));
      b.x2 = b.x1 + 1 + static_cast<double>(rng.next_below(25));
      b.y2 = b.y1 + 1 + static_cast<double>(rng.next_below(25));
      require(iou(a, b) == grcn_test::rasterized_iou(a, b),
              "iou deviates from the rasterized pixel-count oracle");
    }
  }

  // target assignment vs exhaustive reassignment on 50 random scenes
  {
    TrainConfig cfg;
    cfg.rpn_batch = 32;
    cfg.roi_batch = 16;
    auto scene_rng = grcn_test::make_rng("acc-assign-scenes");
    for (int trial = 0; trial < 50; ++trial) {
      AnchorGrid grid = generate_anchors(6, 6, 8, {12, 24}, {0.5, 1, 2});
      BoxList gts;
      std::vector<int> classes;
      const int n_gt = 1 + static_cast<int>(scene_rng.next_below(3));
      for (int g = 0; g < n_gt; ++g) {
        const double x = scene_rng.uniform(0, 30), y = scene_rng.uniform(0, 30);
        gts.push_back({x, y, x + scene_rng.uniform(6, 18), y + scene_rng.uniform(6, 18)});
        classes.push_back(static_cast<int>(scene_rng.next_below(3)));
      }
      auto rng = grcn_test::make_rng("acc-assign-" + std::to_string(trial));
      const auto rpn_targets = assign_rpn_targets(grid, gts, cfg, rng);
      const auto rpn_oracle =
          grcn_test::rpn_assignment_oracle(grid, gts, cfg.rpn_fg_iou, cfg.rpn_bg_iou);
      for (const auto& t : rpn_targets) {
        if (t.foreground) {
          require(rpn_oracle.may_be_fg[static_cast<std::size_t>(t.anchor_index)],
                  "sampled fg anchor fails the exhaustive IoU check");
          const int g = rpn_oracle.anchor_gt[static_cast<std::size_t>(t.anchor_index)];
          const Delta expect =
              encode_box(grid.boxes[static_cast<std::size_t>(t.anchor_index)],
                         gts[static_cast<std::size_t>(g)]);
          require(std::abs(t.delta.dx - expect.dx) < 1e-12 &&
                      std::abs(t.delta.dh - expect.dh) < 1e-12,
                  "rpn regression target deviates from the oracle");
        } else {
          require(rpn_oracle.may_be_bg[static_cast<std::size_t>(t.anchor_index)],
                  "sampled bg anchor fails the exhaustive IoU check");
        }
      }

      BoxList proposals;
      for (int p = 0; p < 30; ++p) {
        const double x = scene_rng.uniform(0, 40), y = scene_rng.uniform(0, 40);
        proposals.push_back({x, y, x + scene_rng.uniform(8, 20), y + scene_rng.uniform(8, 20)});
      }
      const auto roi_targets = assign_roi_targets(proposals, gts, classes, cfg, rng);
      const auto roi_oracle = grcn_test::roi_assignment_oracle(
          proposals, gts, classes, cfg.roi_fg_iou, cfg.roi_bg_lo, cfg.roi_bg_hi);
      BoxList pool = proposals;
      pool.insert(pool.end(), gts.begin(), gts.end());
      for (const auto& t : roi_targets) {
        int idx = -1;
        for (std::size_t i = 0; i < pool.size(); ++i) {
          if (pool[i].x1 == t.roi.x1 && pool[i].y1 == t.roi.y1 && pool[i].x2 == t.roi.x2 &&
              pool[i].y2 == t.roi.y2) {
            idx = static_cast<int>(i);
            break;
          }
        }
        require(idx >= 0, "sampled roi not in the proposal pool");
        require(t.label == roi_oracle.label[static_cast<std::size_t>(idx)],
                "roi label deviates from the exhaustive reassignment");
      }
    }
  }

  // AP report vs the hand-computed golden fixture
  {
    std::vector<GroundTruthRecord> gts{{0, {0, 0, 10, 10}, 0},
                                       {0, {20, 20, 60, 60}, 1},
                                       {1, {0, 0, 40, 40}, 0},
                                       {1, {50, 50, 150, 150}, 0},
                                       {2, {10, 10, 26, 26}, 1}};
    std::vector<DetectionRecord> dets{{0, {0, 0, 10, 10}, 0, 0.9},
                                      {0, {1, 1, 11, 11}, 0, 0.8},
                                      {0, {22, 22, 62, 62}, 1, 0.7},
                                      {1, {0, 0, 40, 40}, 0, 0.6},
                                      {2, {100, 100, 120, 120}, 1, 0.5}};
    const EvalReport r = coco_metrics(dets, gts);
    const double c0 = 56.0 / 101.0, c1 = 51.0 / 101.0;
    auto close = [](double a, double b) { return std::abs(a - b) < 1e-12; };
    require(close(r.ap50, (c0 + c1) / 2.0), "golden fixture ap50");
    require(close(r.ap70, (c0 + c1) / 2.0), "golden fixture ap70");
    require(close(r.ap75, (c0 + c1) / 2.0), "golden fixture ap75");
    require(close(r.ap, (10.0 * c0 + 7.0 * c1) / 20.0), "golden fixture ap");
    require(close(r.ap_small, 0.5), "golden fixture ap_small");
    require(close(r.ap_medium, 0.85), "golden fixture ap_medium");
    require(close(r.ap_large, 0.0), "golden fixture ap_large");
  }

  require_lt(seconds_since(t0), 60.0, "oracle suite runtime (s)");
}

// ---- criterion 4: structural suite -----------------------------------------------

void criterion_structural_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  ModelOptions opt;
  opt.num_classes = 3;
  opt.anchor_sizes = {16, 32};
  opt.anchor_ratios = {0.5, 1, 2};
  opt.rpn_channels = 8;
  opt.head_hidden = 16;
  opt.seed = 5;

  ModelGraph s = ModelGraph::build(Variant::kDetectS, BackboneFamily::kToyVgg, opt);
  ModelGraph rf = ModelGraph::build(Variant::kDetectRf, BackboneFamily::kToyVgg, opt);
  require(s.parameter_count() == rf.parameter_count(),
          "detect_s and detect_rf parameter counts differ");

  ModelGraph g = ModelGraph::build(Variant::kGrcn, BackboneFamily::kToyVgg, opt);
  require(g.loc_stride() * 2 == g.cls_stride(), "grcn loc stride is not half the cls stride");
  ModelGraph gr = ModelGraph::build(Variant::kGrcn, BackboneFamily::kToyResnet, opt);
  require(gr.loc_stride() * 2 == gr.cls_stride(),
          "grcn loc stride is not half the cls stride (toy-resnet)");

  ModelGraph det = ModelGraph::build(Variant::kResnetDet, BackboneFamily::kToyResnet, opt);
  require(det.trunk_stride() == 16, "resnet_det trunk stride is not 16");
  ModelGraph base = ModelGraph::build(Variant::kBaseline, BackboneFamily::kToyResnet, opt);
  std::vector<LayerSpec> full = base.branch_spec().shared_layers();
  const auto head_layers = flatten_stages(base.branch_spec().head_stages);
  full.insert(full.end(), head_layers.begin(), head_layers.end());
  require(effective_stride(full) == 32, "stride-2 last block does not yield stride 32");

  // branch isolation: loc-only loss leaves cls-branch gradients at zero
  {
    auto rng = grcn_test::make_rng("acc-isolation");
    Tensor image = random_tensor({1, 3, 64, 64}, rng, 0.0, 1.0);
    auto features = g.run_backbone(image);
    BoxList rois{{8, 8, 40, 40}, {16, 20, 60, 58}};
    auto heads = g.run_heads(features, rois);
    g.zero_grads();
    Tensor fg = gather_row_slices(gather_rows(heads.box_deltas, {0, 1}), {0, 0}, 4);
    smooth_l1_loss(fg, std::vector<double>(8, 0.3), 2.0).backward();
    for (const auto& [name, t] : g.parameters()) {
      if (name.rfind("cls.", 0) == 0 || name.rfind("attention.", 0) == 0) {
        for (double gv : t.grad()) {
          require(gv == 0.0, "loc loss leaked gradient into " + name);
        }
      }
    }
    auto heads2 = g.run_heads(features, rois);
    g.zero_grads();
    cross_entropy_rows(heads2.cls_logits, {1, 0}).backward();
    for (const auto& [name, t] : g.parameters()) {
      if (name.rfind("loc.", 0) == 0) {
        for (double gv : t.grad()) {
          require(gv == 0.0, "cls loss leaked gradient into " + name);
        }
      }
    }
  }

  // encode/decode round trip
  {
    auto rng = grcn_test::make_rng("acc-roundtrip");
    for (int i = 0; i < 100; ++i) {
      const double ax = rng.uniform(0, 100), ay = rng.uniform(0, 100);
      Box a{ax, ay, ax + rng.uniform(1, 60), ay + rng.uniform(1, 60)};
      const double tx = rng.uniform(0, 100), ty = rng.uniform(0, 100);
      Box t{tx, ty, tx + rng.uniform(1, 60), ty + rng.uniform(1, 60)};
      Box back = decode_box(a, encode_box(a, t));
      require(std::abs(back.x1 - t.x1) < 1e-9 && std::abs(back.y1 - t.y1) < 1e-9 &&
                  std::abs(back.x2 - t.x2) < 1e-9 && std::abs(back.y2 - t.y2) < 1e-9,
              "encode/decode round trip exceeds 1e-9");
    }
  }

  require_lt(seconds_since(t0), 30.0, "structural suite runtime (s)");
}

// ---- criterion 5: attention identities -------------------------------------------

void criterion_eq1_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  auto rng = grcn_test::make_rng("acc-eq1");
  const int q = 49, m = 196, d = 8;
  Tensor p = random_tensor({q, d}, rng);
  Tensor v = random_tensor({m, d}, rng);
  AttentionWeights w = make_attention_weights(d, 1, false, 9);

  std::vector<Tensor> rows;
  Tensor out = global_context_attend(p, v, w, &rows);
  for (int i = 0; i < q; ++i) {
    double sum = 0.0;
    for (int j = 0; j < m; ++j) sum += rows[0].at({i, j});
    require(std::abs(sum - 1.0) < 1e-9, "attention row does not sum to 1");
  }

  // zero weights -> residual add of the context mean
  AttentionWeights zero = make_attention_weights(d, 1, false, 10);
  std::fill(zero.w_p.values().begin(), zero.w_p.values().end(), 0.0);
  std::fill(zero.w_k.values().begin(), zero.w_k.values().end(), 0.0);
  Tensor out_zero = global_context_attend(p, v, zero);
  for (int i = 0; i < q; ++i)
    for (int c = 0; c < d; ++c) {
      double mean = 0.0;
      for (int j = 0; j < m; ++j) mean += v.at({j, c});
      mean /= m;
      require(std::abs(out_zero.at({i, c}) - (p.at({i, c}) + mean)) < 1e-9,
              "zero-weight attention is not the residual mean");
    }

  // permuting context rows leaves the output unchanged
  std::vector<int> perm(m);
  for (int i = 0; i < m; ++i) perm[static_cast<std::size_t>(i)] = (i * 37 + 11) % m;
  Tensor v_perm = Tensor::zeros({m, d});
  for (int i = 0; i < m; ++i)
    for (int c = 0; c < d; ++c) v_perm.at({i, c}) = v.at({perm[static_cast<std::size_t>(i)], c});
  Tensor out_perm = global_context_attend(p, v_perm, w);
  for (std::int64_t i = 0; i < out.size(); ++i) {
    require(std::abs(out.values()[static_cast<std::size_t>(i)] -
                     out_perm.values()[static_cast<std::size_t>(i)]) < 1e-9,
            "context permutation changed the attention output");
  }

  // discarded W_V == identity W_V
  AttentionWeights with_identity = w;
  with_identity.w_v = Tensor::zeros({d, d});
  for (int i = 0; i < d; ++i) with_identity.w_v.at({i, i}) = 1.0;
  Tensor out_id = global_context_attend(p, v, with_identity);
  for (std::int64_t i = 0; i < out.size(); ++i) {
    require(std::abs(out.values()[static_cast<std::size_t>(i)] -
                     out_id.values()[static_cast<std::size_t>(i)]) < 1e-12,
            "discarded-W_V and identity-W_V outputs differ");
  }

  require_lt(seconds_since(t0), 10.0, "attention suite runtime (s)");
}

// ---- criteria 6/7: smoke run + determinism ----------------------------------------

struct CliResult {
  int exit_code;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(GRCN_CLI_PATH) + " " + args + " 2>&1";
  std::array<char, 4096> buf;
  std::string output;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {127, "popen failed"};
  while (fgets(buf.data(), buf.size(), pipe)) output += buf.data();
  const int status = pclose(pipe);
  return {WEXITSTATUS(status), output};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double moving_average_at(const std::string& log, std::int64_t end_iter, int window) {
  // mean of `loss=` over iterations [end_iter-window, end_iter)
  std::istringstream ls(log);
  std::string line;
  double sum = 0.0;
  int count = 0;
  while (std::getline(ls, line)) {
    long long it = -1;
    double loss = 0.0;
    if (std::sscanf(line.c_str(), "iter=%lld loss=%lf", &it, &loss) == 2) {
      if (it >= end_iter - window && it < end_iter) {
        sum += loss;
        ++count;
      }
    }
  }
  if (count == 0) throw Failure{"train log has no lines in the averaging window"};
  return sum / count;
}

double report_value(const std::string& report, const std::string& key) {
  std::istringstream ls(report);
  std::string line;
  while (std::getline(ls, line)) {
    if (line.rfind(key + "=", 0) == 0) {
      const std::string v = line.substr(key.size() + 1);
      if (v == "undefined") return std::nan("");
      return std::stod(v);
    }
  }
  throw Failure{"report is missing key " + key};
}

struct SmokeArtifacts {
  std::string baseline_dir, grcn_dir, eval_baseline, eval_grcn;
  double baseline_train_s = 0.0, grcn_train_s = 0.0;
};

SmokeArtifacts run_smoke(const std::string& work, const std::string& data_dir,
                         const std::string& tag) {
  namespace fs = std::filesystem;
  SmokeArtifacts art;
  art.baseline_dir = work + "/baseline_" + tag;
  art.grcn_dir = work + "/grcn_" + tag;
  art.eval_baseline = work + "/eval_baseline_" + tag;
  art.eval_grcn = work + "/eval_grcn_" + tag;

  const std::string cfg_dir = GRCN_CONFIG_DIR;
  {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run_cli("train --config " + cfg_dir + "/smoke_baseline.cfg --dataset " +
                           data_dir + " --out " + art.baseline_dir);
    require(r.exit_code == 0, "baseline training failed: " + r.output.substr(0, 400));
    art.baseline_train_s = seconds_since(t0);
  }
  {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run_cli("train --config " + cfg_dir + "/smoke_grcn.cfg --dataset " + data_dir +
                           " --out " + art.grcn_dir);
    require(r.exit_code == 0, "grcn training failed: " + r.output.substr(0, 400));
    art.grcn_train_s = seconds_since(t0);
  }
  for (const auto& [ckpt, out] : {std::pair{art.baseline_dir, art.eval_baseline},
                                  std::pair{art.grcn_dir, art.eval_grcn}}) {
    const auto r = run_cli("eval --checkpoint " + ckpt + "/ckpt_final.bin --dataset " + data_dir +
                           " --begin 400 --end 500 --out " + out);
    require(r.exit_code == 0, "eval failed: " + r.output.substr(0, 400));
  }
  return art;
}

std::string g_work;
SmokeArtifacts g_first_run;

void criterion_smoke() {
  namespace fs = std::filesystem;
  fs::remove_all(g_work);
  fs::create_directories(g_work);
  const std::string data_dir = g_work + "/data";

  const auto r = run_cli("gen-data --seed 7 --n 500 --classes 3 --size 128x128 --out " + data_dir);
  require(r.exit_code == 0, "gen-data failed: " + r.output.substr(0, 400));

  g_first_run = run_smoke(g_work, data_dir, "a");
  require_lt(g_first_run.baseline_train_s, 900.0, "baseline training wall time (s)");
  require_lt(g_first_run.grcn_train_s, 900.0, "grcn training wall time (s)");

  for (const std::string dir : {g_first_run.baseline_dir, g_first_run.grcn_dir}) {
    const std::string log = slurp(dir + "/train_log.txt");
    const double early = moving_average_at(log, 200, 200);
    const double late = moving_average_at(log, 2000, 200);
    require(late < early, "loss moving average did not decrease (iter 200 -> 2000) in " + dir +
                              " (" + std::to_string(early) + " -> " + std::to_string(late) + ")");
  }

  const double ap50_baseline = report_value(slurp(g_first_run.eval_baseline + "/report.txt"), "ap50");
  const double ap50_grcn = report_value(slurp(g_first_run.eval_grcn + "/report.txt"), "ap50");
  const double ap70_baseline = report_value(slurp(g_first_run.eval_baseline + "/report.txt"), "ap70");
  const double ap70_grcn = report_value(slurp(g_first_run.eval_grcn + "/report.txt"), "ap70");
  std::cout << "      baseline: ap50=" << ap50_baseline << " ap70=" << ap70_baseline
            << " (train " << static_cast<int>(g_first_run.baseline_train_s) << "s)\n";
  std::cout << "      grcn:     ap50=" << ap50_grcn << " ap70=" << ap70_grcn << " (train "
            << static_cast<int>(g_first_run.grcn_train_s) << "s)\n";
  std::cout << "      ap70 delta (grcn - baseline): " << ap70_grcn - ap70_baseline
            << " (reported, not asserted)\n";
  require(ap50_baseline >= 0.6, "baseline ap50 below 0.6 on held-out scenes (got " +
                                    std::to_string(ap50_baseline) + ")");
  require(ap50_grcn >= 0.6,
          "grcn ap50 below 0.6 on held-out scenes (got " + std::to_string(ap50_grcn) + ")");
}

void criterion_determinism() {
  namespace fs = std::filesystem;
  require(!g_first_run.baseline_dir.empty(), "smoke run must execute first");
  // Re-issue the exact same commands (same output dirs, so the embedded
  // config snapshots match) after setting the first run's artifacts aside.
  for (const std::string dir : {g_first_run.baseline_dir, g_first_run.grcn_dir,
                                g_first_run.eval_baseline, g_first_run.eval_grcn}) {
    fs::rename(dir, dir + "_saved");
  }
  const SmokeArtifacts second = run_smoke(g_work, g_work + "/data", "a");
  require(slurp(second.baseline_dir + "_saved/ckpt_final.bin") ==
              slurp(second.baseline_dir + "/ckpt_final.bin"),
          "baseline checkpoints differ between identical runs");
  require(slurp(second.grcn_dir + "_saved/ckpt_final.bin") ==
              slurp(second.grcn_dir + "/ckpt_final.bin"),
          "grcn checkpoints differ between identical runs");
  require(slurp(second.eval_baseline + "_saved/report.txt") ==
              slurp(second.eval_baseline + "/report.txt"),
          "baseline eval reports differ between identical runs");
  require(slurp(second.eval_baseline + "_saved/report.json") ==
              slurp(second.eval_baseline + "/report.json"),
          "baseline eval json reports differ between identical runs");
  require(slurp(second.eval_grcn + "_saved/report.txt") ==
              slurp(second.eval_grcn + "/report.txt"),
          "grcn eval reports differ between identical runs");
  require(slurp(second.eval_grcn + "_saved/report.json") ==
              slurp(second.eval_grcn + "/report.json"),
          "grcn eval json reports differ between identical runs");
}

}  // namespace

int main(int argc, char** argv) {
  g_work = argc > 1 ? argv[1] : "acceptance_work";

  struct Criterion {
    const char* name;
    std::function<void()> run;
  };
  const std::vector<Criterion> criteria = {
      {"scale_disclaimer: property suites stand in for full-dataset scores",
       criterion_scale_disclaimer},
      {"gradient_suite: finite differences on every differentiable op (<2min)",
       criterion_gradient_suite},
      {"oracle_suite: nms/iou/assignment/ap against brute-force references (<1min)",
       criterion_oracle_suite},
      {"structural_suite: parameter counts, strides, branch isolation, round trips (<30s)",
       criterion_structural_suite},
      {"attention_suite: row sums, residual mean, permutation, value-projection modes (<10s)",
       criterion_eq1_suite},
      {"smoke: gen-data -> train baseline+grcn 2k iters -> eval ap50 >= 0.6", criterion_smoke},
      {"determinism: byte-identical checkpoints and reports on repeat", criterion_determinism},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run();
      std::printf("[PASS] %s (%.1fs)\n", c.name, seconds_since(t0));
    } catch (const Failure& f) {
      std::printf("[FAIL] %s: %s\n", c.name, f.what.c_str());
      ++failures;
    } catch (const std::exception& e) {
      std::printf("[FAIL] %s: unexpected error: %s\n", c.name, e.what());
      ++failures;
    }
    std::fflush(stdout);
  }
  if (failures) {
    std::printf("%d criterion(s) failed\n", failures);
    return 1;
  }
  std::printf("all acceptance criteria passed\n");
  return 0;
}
