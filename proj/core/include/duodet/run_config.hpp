// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "duodet/analysis.hpp"
#include "duodet/dataset.hpp"
#include "duodet/infer.hpp"
#include "duodet/model.hpp"
#include "duodet/proposals.hpp"

// Declarative run configuration: one JSON file drives every command. Parsing
// is strict (unknown keys and wrong types are rejected with their path) and
// absent keys keep the defaults below, so a config only lists what it
// changes. Loss weights live on the detector; the train schedule mirrors
// them so there is a single source of truth.
namespace duodet {

struct RunConfig {
  DetectorConfig detector;
  TrainConfig train;
  InferConfig infer;
  DatasetConfig dataset;  // synthetic corpus, used when no manifest is given
  AnalysisConfig analysis;
  std::string data_manifest;  // optional path to an annotation manifest
  std::string out_dir = "out";

  void validate() const;
};

/// Parses a config document. `where` names the source in error messages.
RunConfig parse_run_config(const std::string& text, const std::string& where);

RunConfig load_run_config(const std::string& path);

/// Applies one `dotted.path=value` assignment. The value is parsed as JSON
/// when possible and treated as a string otherwise, so `train.lr=0.01` and
/// `detector.variant=single-fc` both work. Unknown paths are rejected.
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Serializes the fully resolved configuration; reloading the dump
/// reproduces the config exactly.
std::string dump_run_config(const RunConfig& cfg);

void save_run_config(const RunConfig& cfg, const std::string& path);

}  // namespace duodet
