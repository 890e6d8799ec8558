#include <benchmark/benchmark.h>

#include "grcn/attention.hpp"
#include "grcn/boxes.hpp"
#include "grcn/model.hpp"
#include "grcn/ops.hpp"
#include "grcn/rng.hpp"
#include "grcn/roi.hpp"
#include "grcn/training.hpp"

using namespace grcn;

namespace {

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed) {
  Tensor t = Tensor::zeros(std::move(shape));
  Rng rng(seed, 1);
  for (auto& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_Conv2dForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  Tensor x = random_tensor({1, c, 32, 32}, 1);
  Tensor w = random_tensor({c, c, 3, 3}, 2);
  Tensor b = Tensor::zeros({c});
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d(x, w, b, 1, 1));
  }
}
BENCHMARK(BM_Conv2dForward)->Arg(16)->Arg(64);

void BM_Conv2dTrainStep(benchmark::State& state) {
  Tensor x = random_tensor({1, 16, 32, 32}, 1);
  Tensor w = random_tensor({16, 16, 3, 3}, 2);
  Tensor b = Tensor::zeros({16});
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  for (auto _ : state) {
    w.zero_grad();
    b.zero_grad();
    Tensor out = conv2d(x, w, b, 1, 1);
    out.backward_with(std::vector<double>(static_cast<std::size_t>(out.size()), 1.0));
  }
}
BENCHMARK(BM_Conv2dTrainStep);

void BM_Nms200(benchmark::State& state) {
  Rng rng(3, 1);
  BoxList boxes;
  std::vector<double> scores;
  for (int i = 0; i < 200; ++i) {
    const double x = rng.uniform(0, 80), y = rng.uniform(0, 80);
    boxes.push_back({x, y, x + rng.uniform(4, 40), y + rng.uniform(4, 40)});
    scores.push_back(rng.next_double());
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(nms(boxes, scores, 0.3));
  }
}
BENCHMARK(BM_Nms200);

void BM_RoiPool(benchmark::State& state) {
  Tensor features = random_tensor({1, 64, 16, 16}, 5);
  BoxList rois;
  Rng rng(7, 1);
  for (int i = 0; i < 32; ++i) {
    const double x = rng.uniform(0, 100), y = rng.uniform(0, 100);
    rois.push_back({x, y, x + rng.uniform(16, 80), y + rng.uniform(16, 80)});
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(roi_pool(features, rois, 7, 8));
  }
}
BENCHMARK(BM_RoiPool);

void BM_GlobalContextAttend(benchmark::State& state) {
  Tensor p = random_tensor({49, 128}, 1);
  Tensor v = random_tensor({196, 128}, 2);
  AttentionWeights w = make_attention_weights(128, 1, false, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(global_context_attend(p, v, w));
  }
}
BENCHMARK(BM_GlobalContextAttend);

void BM_GrcnForwardTest(benchmark::State& state) {
  ModelOptions opt;
  opt.num_classes = 3;
  opt.anchor_sizes = {16, 32, 64};
  opt.anchor_ratios = {0.5, 1, 2};
  opt.rpn_channels = 48;
  opt.head_hidden = 96;
  opt.seed = 7;
  ModelGraph m = ModelGraph::build(Variant::kGrcn, BackboneFamily::kToyVgg, opt);
  Tensor image = random_tensor({1, 3, 128, 128}, 9);
  TestSettings settings;
  settings.proposals.post_nms_n = 50;
  for (auto _ : state) {
    benchmark::DoNotOptimize(m.forward_test(image, settings));
  }
}
BENCHMARK(BM_GrcnForwardTest);

}  // namespace

BENCHMARK_MAIN();
