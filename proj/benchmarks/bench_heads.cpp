// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "duodet/heads.hpp"
#include "duodet/objectives.hpp"
#include "duodet/rng.hpp"

namespace {

template <class T>
duodet::Fmap<T> random_rois(int n, int channels, std::uint64_t seed) {
  duodet::Rng rng(seed);
  duodet::Fmap<T> rois(n, 7, 7, channels);
  for (std::int64_t i = 0; i < rois.size(); ++i)
    rois.t[i] = static_cast<T>(rng.gaussian(0.0, 1.0));
  return rois;
}

void BM_FcHeadForward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  duodet::FcHead<float> head(256, 7, 7, 1024);
  duodet::Rng rng(11);
  head.init(rng);
  auto rois = random_rois<float>(n, 256, 12);
  for (auto _ : state) benchmark::DoNotOptimize(head.forward(rois));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_FcHeadForward)->Arg(32)->Arg(128)->Arg(512);

void BM_ConvHeadForward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  duodet::ConvHeadConfig cfg;  // paper-shaped: K=5 with one non-local block
  duodet::ConvHead<float> head(cfg);
  duodet::Rng rng(13);
  head.init(rng);
  auto rois = random_rois<float>(n, cfg.in_channels, 14);
  for (auto _ : state) benchmark::DoNotOptimize(head.forward(rois, false));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_ConvHeadForward)->Arg(32)->Arg(128);

void BM_NonLocalForward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  duodet::NonLocalBlock<float> block(1024, 256);
  duodet::Rng rng(15);
  block.init(rng);
  auto x = random_rois<float>(n, 1024, 16);
  for (auto _ : state) benchmark::DoNotOptimize(block.forward(x, false));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_NonLocalForward)->Arg(32)->Arg(128);

void BM_FuseScores(benchmark::State& state) {
  duodet::Rng rng(17);
  std::vector<double> fc(4096), conv(4096);
  for (auto& v : fc) v = rng.uniform();
  for (auto& v : conv) v = rng.uniform();
  for (auto _ : state) {
    double acc = 0;
    for (std::size_t i = 0; i < fc.size(); ++i)
      acc += duodet::fuse_complementary(fc[i], conv[i]);
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(fc.size()));
}
BENCHMARK(BM_FuseScores);

}  // namespace
