// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "duodet/infer.hpp"
#include "support/fixtures.hpp"

using namespace duodet;
using duodet::testing::square_example;
using duodet::testing::tiny_config;

namespace {

InferConfig fast_infer() {
  InferConfig cfg;
  cfg.grid_scales = {24, 40};
  cfg.grid_aspects = {1.0};
  cfg.score_threshold = 0.05;
  cfg.roi_chunk = 64;
  return cfg;
}

template <class T>
Detector<T> fresh_model(DetectorVariant v, std::uint64_t seed) {
  Detector<T> model(tiny_config(v));
  Rng init(seed);
  model.init(init);
  return model;
}

}  // namespace

TEST_CASE("a score threshold of one empties the result set") {
  auto model = fresh_model<float>(DetectorVariant::DoubleHead, 61);
  auto image = square_example<float>(64, 1, 10, 10, 30).image;
  auto cfg = fast_infer();
  cfg.score_threshold = 1.0;
  CHECK(infer_image(model, image, cfg).empty());
}

TEST_CASE("detections stay inside the image, sorted by descending score") {
  auto model = fresh_model<float>(DetectorVariant::DoubleHead, 62);
  auto image = square_example<float>(64, 2, 6, 14, 28).image;
  auto cfg = fast_infer();
  cfg.score_threshold = 0.0;
  cfg.max_detections = 10;
  for (bool second : {false, true}) {
    cfg.second_pass = second;
    auto dets = infer_image(model, image, cfg);
    CHECK(!dets.empty());
    CHECK(static_cast<int>(dets.size()) <= 10);
    for (std::size_t i = 0; i < dets.size(); ++i) {
      const auto& d = dets[i];
      CHECK(d.box.x1 >= 0);
      CHECK(d.box.y1 >= 0);
      CHECK(d.box.x2 <= 64);
      CHECK(d.box.y2 <= 64);
      CHECK(d.box.x2 > d.box.x1);
      CHECK(d.box.y2 > d.box.y1);
      CHECK(d.class_id >= 1);
      CHECK(d.class_id <= 3);
      CHECK(d.score > 0);
      CHECK(d.score <= 1);
      if (i > 0) CHECK(dets[i - 1].score >= d.score);
    }
  }
}

TEST_CASE("chunked pooling does not change the result") {
  auto model = fresh_model<float>(DetectorVariant::DoubleHead, 63);
  auto image = square_example<float>(64, 3, 20, 8, 24).image;
  auto cfg = fast_infer();
  cfg.second_pass = false;
  cfg.roi_chunk = 7;
  auto small_chunks = infer_image(model, image, cfg);
  cfg.roi_chunk = 4096;
  auto one_chunk = infer_image(model, image, cfg);
  REQUIRE(small_chunks.size() == one_chunk.size());
  // batch size changes the GEMM tiling, so agreement is to rounding only
  for (std::size_t i = 0; i < one_chunk.size(); ++i) {
    CHECK(small_chunks[i].box.x1 == doctest::Approx(one_chunk[i].box.x1).epsilon(1e-5));
    CHECK(small_chunks[i].score == doctest::Approx(one_chunk[i].score).epsilon(1e-5));
    CHECK(small_chunks[i].class_id == one_chunk[i].class_id);
  }
}

TEST_CASE("infer validates the image and its own configuration") {
  auto model = fresh_model<float>(DetectorVariant::DoubleHead, 64);
  Fmap<float> gray(1, 64, 64, 1);
  CHECK_THROWS_AS(infer_image(model, gray, fast_infer()), ContractViolation);
  auto cfg = fast_infer();
  cfg.score_threshold = 2.0;
  auto image = square_example<float>(64, 1, 10, 10, 20).image;
  CHECK_THROWS_AS(infer_image(model, image, cfg), ConfigError);
  cfg = fast_infer();
  cfg.grid_scales = {};
  CHECK_THROWS_AS(infer_image(model, image, cfg), ConfigError);
}
