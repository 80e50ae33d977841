// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <vector>

#include "duodet/geometry.hpp"
#include "duodet/rng.hpp"

namespace {

std::vector<duodet::Detection> random_dets(int n, std::uint64_t seed) {
  duodet::Rng rng(seed);
  std::vector<duodet::Detection> dets;
  dets.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double x = rng.uniform(0, 200);
    const double y = rng.uniform(0, 200);
    dets.push_back({{x, y, x + rng.uniform(4, 56), y + rng.uniform(4, 56)},
                    rng.uniform_int(1, 3), rng.uniform()});
  }
  return dets;
}

void BM_Iou(benchmark::State& state) {
  duodet::Box a{10, 10, 50, 50}, b{30, 30, 70, 70};
  for (auto _ : state) benchmark::DoNotOptimize(duodet::iou(a, b));
}
BENCHMARK(BM_Iou);

void BM_Nms(benchmark::State& state) {
  const auto dets = random_dets(static_cast<int>(state.range(0)), 7);
  for (auto _ : state) benchmark::DoNotOptimize(duodet::nms(dets, 0.5));
}
BENCHMARK(BM_Nms)->Arg(64)->Arg(256)->Arg(1024);

}  // namespace
