// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "duodet/run_config.hpp"

using namespace duodet;

TEST_CASE("run config: empty document keeps the defaults") {
  auto cfg = parse_run_config("{}", "cfg");
  CHECK(cfg.detector.variant == DetectorVariant::DoubleHead);
  CHECK(cfg.detector.weights.omega_fc == 2.0);
  CHECK(cfg.detector.weights.omega_conv == 2.5);
  CHECK(cfg.detector.weights.lambda_fc == 0.7);
  CHECK(cfg.detector.weights.lambda_conv == 0.8);
  CHECK(cfg.detector.conv_head.blocks == 5);
  CHECK(cfg.detector.conv_head.use_nonlocal);
  CHECK(cfg.out_dir == "out");
  CHECK(cfg.data_manifest.empty());
  cfg.validate();
}

TEST_CASE("run config: dump/parse roundtrip is exact") {
  auto cfg = parse_run_config("{}", "cfg");
  apply_override(cfg, "detector.variant=single-conv");
  apply_override(cfg, "train.lr=0.015");
  apply_override(cfg, "analysis.sliding.shifts=[0.0,0.25]");
  const auto dumped = dump_run_config(cfg);
  auto back = parse_run_config(dumped, "dump");
  CHECK(dump_run_config(back) == dumped);
  CHECK(back.detector.variant == DetectorVariant::SingleConv);
  CHECK(back.train.lr == 0.015);
  CHECK(back.analysis.sliding.shifts == std::vector<double>{0.0, 0.25});
}

TEST_CASE("run config: unknown keys are rejected with their path") {
  CHECK_THROWS_WITH_AS(parse_run_config(R"({"detectr": {}})", "cfg"),
                       "cfg: unknown key 'detectr'", ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config(R"({"detector": {"widht": 3}})", "cfg"),
                       "cfg.detector: unknown key 'widht'", ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_run_config(R"({"analysis": {"sliding": {"scales": 3}}})", "cfg"),
      "cfg.analysis.sliding: unknown key 'scales'", ConfigError);
  // loss weights live on the detector only
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"weights": {}}})", "cfg"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[1,2]", "cfg"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("{nope", "cfg"), ConfigError);
}

TEST_CASE("run config: values must have the declared type") {
  CHECK_THROWS_WITH_AS(parse_run_config(R"({"train": {"lr": "fast"}})", "cfg"),
                       "cfg.train.lr: expected a number", ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"detector": {"num_classes": 2.5}})", "cfg"),
                  ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"detector": {"variant": "triple-head"}})", "cfg"),
                  ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"dataset": {"seed": -1}})", "cfg"), ConfigError);
}

TEST_CASE("run config: overrides parse values and reject unknown paths") {
  auto cfg = parse_run_config("{}", "cfg");
  apply_override(cfg, "train.steps=250");
  CHECK(cfg.train.steps == 250);
  apply_override(cfg, "detector.conv_head.blocks=7");
  CHECK(cfg.detector.conv_head.blocks == 7);
  apply_override(cfg, "data_manifest=some/path.json");  // bare word stays a string
  CHECK(cfg.data_manifest == "some/path.json");
  apply_override(cfg, "detector.fusion_enabled=true");
  CHECK(cfg.detector.fusion_enabled);

  CHECK_THROWS_AS(apply_override(cfg, "nope.key=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "train.nope=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "train=1"), ConfigError);  // replaces an object
  CHECK_THROWS_AS(apply_override(cfg, "no-equals"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "train..lr=1"), ConfigError);
}

TEST_CASE("run config: detector weights are the single source of truth") {
  auto cfg = parse_run_config(R"({"detector": {"weights": {"lambda_fc": 0.55}}})", "cfg");
  CHECK(cfg.detector.weights.lambda_fc == 0.55);
  CHECK(cfg.train.weights.lambda_fc == 0.55);
  apply_override(cfg, "detector.weights.omega_conv=3.0");
  CHECK(cfg.train.weights.omega_conv == 3.0);
}

TEST_CASE("run config: missing file") {
  CHECK_THROWS_AS(load_run_config("/nonexistent/duodet.json"), ConfigError);
}
