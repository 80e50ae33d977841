// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "duodet/proposals.hpp"

using namespace duodet;

namespace {

TrainConfig base_cfg() {
  TrainConfig cfg;
  cfg.proposals_per_image = 32;
  return cfg;
}

std::vector<GtObject> two_objects() {
  return {GtObject{Box{40, 40, 120, 110}, 1}, GtObject{Box{150, 160, 220, 230}, 3}};
}

}  // namespace

TEST_CASE("sampling is byte-identical under a fixed rng state") {
  auto cfg = base_cfg();
  auto gts = two_objects();
  Rng r1(99), r2(99);
  auto a = sample_proposals(gts, 256, 256, cfg, r1);
  auto b = sample_proposals(gts, 256, 256, cfg, r2);
  REQUIRE(a.proposals.size() == b.proposals.size());
  for (std::size_t i = 0; i < a.proposals.size(); ++i) {
    CHECK(a.proposals[i].box.x1 == b.proposals[i].box.x1);
    CHECK(a.proposals[i].box.y1 == b.proposals[i].box.y1);
    CHECK(a.proposals[i].box.x2 == b.proposals[i].box.x2);
    CHECK(a.proposals[i].box.y2 == b.proposals[i].box.y2);
    CHECK(a.proposals[i].label == b.proposals[i].label);
    CHECK(a.proposals[i].target.dx == b.proposals[i].target.dx);
  }
}

TEST_CASE("zero jitter makes every proposal a foreground copy of a ground truth") {
  auto cfg = base_cfg();
  cfg.jitter_magnitudes = {0.0};
  cfg.jitter_per_magnitude = 40;
  cfg.random_per_image = 0;
  auto gts = two_objects();
  Rng rng(7);
  auto batch = sample_proposals(gts, 256, 256, cfg, rng);
  CHECK(!batch.background_only);
  CHECK(batch.proposals.size() == 32);
  for (const auto& p : batch.proposals) {
    REQUIRE(p.label > 0);
    bool matches_a_gt = false;
    for (const auto& g : gts)
      if (p.box.x1 == g.box.x1 && p.box.y1 == g.box.y1 && p.box.x2 == g.box.x2 &&
          p.box.y2 == g.box.y2 && p.label == g.class_id)
        matches_a_gt = true;
    CHECK(matches_a_gt);
    CHECK(std::abs(p.target.dx) < 1e-12);
    CHECK(std::abs(p.target.dy) < 1e-12);
    CHECK(std::abs(p.target.dw) < 1e-12);
    CHECK(std::abs(p.target.dh) < 1e-12);
  }
}

TEST_CASE("labels respect the IoU thresholds against the best ground truth") {
  auto cfg = base_cfg();
  cfg.proposals_per_image = 64;
  auto gts = two_objects();
  Rng rng(8);
  auto batch = sample_proposals(gts, 256, 256, cfg, rng);
  REQUIRE(!batch.proposals.empty());
  int fg = 0;
  for (const auto& p : batch.proposals) {
    double best = 0;
    int best_cls = 0;
    for (const auto& g : gts) {
      const double v = iou(p.box, g.box);
      if (v > best) {
        best = v;
        best_cls = g.class_id;
      }
    }
    if (p.label > 0) {
      ++fg;
      CHECK(best >= cfg.fg_iou);
      CHECK(p.label == best_cls);
      // target decodes back to the matched ground truth
      bool recovered = false;
      for (const auto& g : gts) {
        auto back = decode_delta(p.box, p.target);
        if (std::abs(back.x1 - g.box.x1) < 1e-9 && std::abs(back.y1 - g.box.y1) < 1e-9 &&
            std::abs(back.x2 - g.box.x2) < 1e-9 && std::abs(back.y2 - g.box.y2) < 1e-9)
          recovered = true;
      }
      CHECK(recovered);
    } else {
      CHECK(best < cfg.bg_iou);
    }
  }
  // foreground stays near the requested fraction
  CHECK(fg >= 1);
  CHECK(fg <= static_cast<int>(std::ceil(cfg.fg_fraction * cfg.proposals_per_image)));
  CHECK(batch.proposals.size() == 64);
}

TEST_CASE("a mostly out-of-frame object can yield a background-only batch") {
  auto cfg = base_cfg();
  cfg.jitter_magnitudes = {};
  cfg.random_per_image = 64;
  // after clipping, the candidate copy of this box overlaps it by well under
  // the foreground threshold
  std::vector<GtObject> gts{GtObject{Box{-400, 10, 40, 90}, 2}};
  Rng rng(9);
  auto batch = sample_proposals(gts, 256, 256, cfg, rng);
  CHECK(batch.background_only);
  for (const auto& p : batch.proposals) CHECK(p.label == 0);
}

TEST_CASE("proposal boxes are clipped into the image") {
  auto cfg = base_cfg();
  cfg.jitter_magnitudes = {0.5, 1.0};
  cfg.jitter_per_magnitude = 20;
  auto gts = two_objects();
  Rng rng(10);
  auto batch = sample_proposals(gts, 256, 256, cfg, rng);
  for (const auto& p : batch.proposals) {
    CHECK(p.box.x1 >= 0);
    CHECK(p.box.y1 >= 0);
    CHECK(p.box.x2 <= 256);
    CHECK(p.box.y2 <= 256);
    CHECK(p.box.x2 > p.box.x1);
    CHECK(p.box.y2 > p.box.y1);
  }
}

TEST_CASE("sample_proposals requires ground truth") {
  auto cfg = base_cfg();
  Rng rng(11);
  CHECK_THROWS_AS(sample_proposals({}, 256, 256, cfg, rng), ContractViolation);
}

TEST_CASE("inference grid tiles the image at every scale and aspect") {
  auto grid = inference_grid(256, 192, 16.0, {24, 48}, {0.5, 1.0, 2.0});
  CHECK(!grid.empty());
  // centers advance by the stride: 16x12 centers, 2 scales, 3 aspects
  CHECK(grid.size() == 16 * 12 * 2 * 3);
  for (const auto& b : grid) {
    CHECK(b.x2 > b.x1);
    CHECK(b.y2 > b.y1);
    CHECK(b.x1 >= 0);
    CHECK(b.y1 >= 0);
    CHECK(b.x2 <= 256);
    CHECK(b.y2 <= 192);
  }
}
