// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#include "duodet/run_config.hpp"

#include <fstream>
#include <sstream>

#include "config_codec.hpp"

namespace duodet {

using cfgjson::json;

void RunConfig::validate() const {
  detector.validate();
  train.validate();
  infer.validate();
  dataset.validate();
  analysis.validate();
  if (out_dir.empty()) throw ConfigError("run: out_dir must be non-empty");
}

namespace {

json run_to_json(const RunConfig& c) {
  return json{{"detector", cfgjson::detector_to_json(c.detector)},
              {"train", cfgjson::train_to_json(c.train)},
              {"infer", cfgjson::infer_to_json(c.infer)},
              {"dataset", cfgjson::dataset_to_json(c.dataset)},
              {"analysis", cfgjson::analysis_to_json(c.analysis)},
              {"data_manifest", c.data_manifest},
              {"out_dir", c.out_dir}};
}

RunConfig run_from_json(const json& j, const std::string& where) {
  cfgjson::check_keys(
      j, {"detector", "train", "infer", "dataset", "analysis", "data_manifest", "out_dir"},
      where);
  RunConfig c;
  if (j.contains("detector"))
    c.detector = cfgjson::detector_from_json(j.at("detector"), where + ".detector");
  if (j.contains("train")) c.train = cfgjson::train_from_json(j.at("train"), where + ".train");
  if (j.contains("infer")) c.infer = cfgjson::infer_from_json(j.at("infer"), where + ".infer");
  if (j.contains("dataset"))
    c.dataset = cfgjson::dataset_from_json(j.at("dataset"), where + ".dataset");
  if (j.contains("analysis"))
    c.analysis = cfgjson::analysis_from_json(j.at("analysis"), where + ".analysis");
  cfgjson::take(j, "data_manifest", c.data_manifest, where);
  cfgjson::take(j, "out_dir", c.out_dir, where);
  c.train.weights = c.detector.weights;
  return c;
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& where) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(where + ": not valid JSON: " + e.what());
  }
  return run_from_json(j, where);
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("run config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "': expected key.path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // bare words are strings
  }

  json doc = run_to_json(cfg);
  json* at = &doc;
  std::size_t begin = 0;
  while (true) {
    const auto dot = path.find('.', begin);
    const std::string key = path.substr(begin, dot - begin);
    if (key.empty()) throw ConfigError("override '" + assignment + "': empty path segment");
    if (dot == std::string::npos) {
      if (!at->contains(key))
        throw ConfigError("override: unknown key '" + path + "'");
      (*at)[key] = value;
      break;
    }
    if (!at->contains(key) || !(*at)[key].is_object())
      throw ConfigError("override: unknown key '" + path + "'");
    at = &(*at)[key];
    begin = dot + 1;
  }
  cfg = run_from_json(doc, "override");
}

std::string dump_run_config(const RunConfig& cfg) { return run_to_json(cfg).dump(2) + "\n"; }

void save_run_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("run config: cannot write " + path);
  out << dump_run_config(cfg);
}

}  // namespace duodet
