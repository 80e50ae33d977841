// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <vector>

#include "duodet/model.hpp"
#include "duodet/rng.hpp"
#include "duodet/roi_align.hpp"

namespace {

duodet::Fmap<float> random_fmap(int h, int w, int c, std::uint64_t seed) {
  duodet::Rng rng(seed);
  duodet::Fmap<float> fmap(1, h, w, c);
  for (std::int64_t i = 0; i < fmap.size(); ++i)
    fmap.t[i] = static_cast<float>(rng.gaussian(0.0, 1.0));
  return fmap;
}

std::vector<duodet::Box> random_boxes(int n, double image, std::uint64_t seed) {
  duodet::Rng rng(seed);
  std::vector<duodet::Box> boxes;
  boxes.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double x = rng.uniform(0, image - 64);
    const double y = rng.uniform(0, image - 64);
    boxes.push_back({x, y, x + rng.uniform(16, 64), y + rng.uniform(16, 64)});
  }
  return boxes;
}

void BM_RoiAlign(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  auto fmap = random_fmap(32, 32, 256, 21);
  auto boxes = random_boxes(n, 512, 22);
  for (auto _ : state)
    benchmark::DoNotOptimize(duodet::roi_align(fmap, 0, boxes, 16.0, 7, 2));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_RoiAlign)->Arg(64)->Arg(256)->Arg(1024);

// One full optimization step of the miniature double-head lab model:
// backbone, pooling, both heads, backward, SGD.
void BM_TrainStep(benchmark::State& state) {
  duodet::DetectorConfig cfg;
  cfg.backbone_width = 4;
  cfg.fc_width = 64;
  cfg.conv_head.blocks = 3;
  cfg.conv_head.nonlocal_embed = 16;
  cfg.conv_head.mid_channels = 16;
  cfg.conv_head.trunk_channels = 32;
  duodet::Detector<float> model(cfg);
  duodet::Rng rng(23);
  model.init(rng);

  auto fmap = random_fmap(8, 8, 256, 24);
  auto boxes = random_boxes(32, 128, 25);
  auto rois = duodet::roi_align(fmap, 0, boxes, 16.0, cfg.roi_size, cfg.roi_samples);
  std::vector<int> labels;
  duodet::Tensor<float> targets({32, 4});
  for (int i = 0; i < 32; ++i) {
    labels.push_back(i % (cfg.num_classes + 1));
    for (int k = 0; k < 4; ++k)
      targets[static_cast<std::int64_t>(i) * 4 + k] = static_cast<float>(rng.gaussian(0.0, 0.1));
  }

  for (auto _ : state) {
    benchmark::DoNotOptimize(model.train_step_losses(rois, labels, targets));
    benchmark::DoNotOptimize(model.roi_grad());
  }
}
BENCHMARK(BM_TrainStep);

}  // namespace
