// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "duodet/analysis.hpp"
#include "duodet/dataset.hpp"
#include "duodet/errors.hpp"
#include "duodet/infer.hpp"
#include "duodet/model.hpp"
#include "duodet/proposals.hpp"
#include "json.hpp"

// JSON codec for the configuration structs. Shared between checkpoints and
// run configs, and deliberately strict: unknown keys and wrongly typed values
// are rejected with the offending path in the message. Absent keys keep the
// struct's default, so hand-written configs only list what they change.
namespace duodet::cfgjson {

using nlohmann::json;

inline void check_keys(const json& j, std::initializer_list<const char*> keys,
                       const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys)
      if (it.key() == k) known = true;
    if (!known) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

inline void take(const json& j, const char* k, bool& out, const std::string& where) {
  if (!j.contains(k)) return;
  if (!j.at(k).is_boolean()) throw ConfigError(where + "." + k + ": expected a boolean");
  out = j.at(k).get<bool>();
}

inline void take(const json& j, const char* k, int& out, const std::string& where) {
  if (!j.contains(k)) return;
  if (!j.at(k).is_number_integer()) throw ConfigError(where + "." + k + ": expected an integer");
  out = j.at(k).get<int>();
}

inline void take(const json& j, const char* k, std::int64_t& out, const std::string& where) {
  if (!j.contains(k)) return;
  if (!j.at(k).is_number_integer()) throw ConfigError(where + "." + k + ": expected an integer");
  out = j.at(k).get<std::int64_t>();
}

inline void take(const json& j, const char* k, std::uint64_t& out, const std::string& where) {
  if (!j.contains(k)) return;
  const auto& v = j.at(k);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                 v.get<std::int64_t>() < 0))
    throw ConfigError(where + "." + k + ": expected a non-negative integer");
  out = v.get<std::uint64_t>();
}

inline void take(const json& j, const char* k, double& out, const std::string& where) {
  if (!j.contains(k)) return;
  if (!j.at(k).is_number()) throw ConfigError(where + "." + k + ": expected a number");
  out = j.at(k).get<double>();
}

inline void take(const json& j, const char* k, std::string& out, const std::string& where) {
  if (!j.contains(k)) return;
  if (!j.at(k).is_string()) throw ConfigError(where + "." + k + ": expected a string");
  out = j.at(k).get<std::string>();
}

inline void take(const json& j, const char* k, std::vector<double>& out,
                 const std::string& where) {
  if (!j.contains(k)) return;
  const auto& v = j.at(k);
  if (!v.is_array()) throw ConfigError(where + "." + k + ": expected an array of numbers");
  std::vector<double> parsed;
  for (const auto& e : v) {
    if (!e.is_number()) throw ConfigError(where + "." + k + ": expected an array of numbers");
    parsed.push_back(e.get<double>());
  }
  out = std::move(parsed);
}

inline void take(const json& j, const char* k, std::vector<std::int64_t>& out,
                 const std::string& where) {
  if (!j.contains(k)) return;
  const auto& v = j.at(k);
  if (!v.is_array()) throw ConfigError(where + "." + k + ": expected an array of integers");
  std::vector<std::int64_t> parsed;
  for (const auto& e : v) {
    if (!e.is_number_integer())
      throw ConfigError(where + "." + k + ": expected an array of integers");
    parsed.push_back(e.get<std::int64_t>());
  }
  out = std::move(parsed);
}

// ---------------------------------------------------------------------------

inline json weights_to_json(const LossWeights& w) {
  return json{{"omega_fc", w.omega_fc},
              {"omega_conv", w.omega_conv},
              {"lambda_fc", w.lambda_fc},
              {"lambda_conv", w.lambda_conv}};
}

inline void weights_from_json(const json& j, LossWeights& w, const std::string& where) {
  check_keys(j, {"omega_fc", "omega_conv", "lambda_fc", "lambda_conv"}, where);
  take(j, "omega_fc", w.omega_fc, where);
  take(j, "omega_conv", w.omega_conv, where);
  take(j, "lambda_fc", w.lambda_fc, where);
  take(j, "lambda_conv", w.lambda_conv, where);
}

inline json conv_head_to_json(const ConvHeadConfig& c) {
  return json{{"blocks", c.blocks},
              {"use_nonlocal", c.use_nonlocal},
              {"nonlocal_embed", c.nonlocal_embed},
              {"in_channels", c.in_channels},
              {"mid_channels", c.mid_channels},
              {"trunk_channels", c.trunk_channels},
              {"norm", norm_kind_name(c.norm)},
              {"norm_groups", c.norm_groups}};
}

inline void conv_head_from_json(const json& j, ConvHeadConfig& c, const std::string& where) {
  check_keys(j,
             {"blocks", "use_nonlocal", "nonlocal_embed", "in_channels", "mid_channels",
              "trunk_channels", "norm", "norm_groups"},
             where);
  take(j, "blocks", c.blocks, where);
  take(j, "use_nonlocal", c.use_nonlocal, where);
  take(j, "nonlocal_embed", c.nonlocal_embed, where);
  take(j, "in_channels", c.in_channels, where);
  take(j, "mid_channels", c.mid_channels, where);
  take(j, "trunk_channels", c.trunk_channels, where);
  std::string norm = norm_kind_name(c.norm);
  take(j, "norm", norm, where);
  c.norm = parse_norm_kind(norm);
  take(j, "norm_groups", c.norm_groups, where);
}

inline json detector_to_json(const DetectorConfig& c) {
  return json{{"variant", variant_name(c.variant)},
              {"num_classes", c.num_classes},
              {"roi_size", c.roi_size},
              {"roi_samples", c.roi_samples},
              {"backbone_width", c.backbone_width},
              {"backbone_norm", norm_kind_name(c.backbone_norm)},
              {"fc_width", c.fc_width},
              {"conv_head", conv_head_to_json(c.conv_head)},
              {"weights", weights_to_json(c.weights)},
              {"fusion_enabled", c.fusion_enabled},
              {"fusion_mode", fusion_mode_name(c.fusion_mode)}};
}

inline DetectorConfig detector_from_json(const json& j, const std::string& where) {
  check_keys(j,
             {"variant", "num_classes", "roi_size", "roi_samples", "backbone_width",
              "backbone_norm", "fc_width", "conv_head", "weights", "fusion_enabled",
              "fusion_mode"},
             where);
  DetectorConfig c;
  std::string variant = variant_name(c.variant);
  take(j, "variant", variant, where);
  auto parsed = parse_variant(variant);
  if (!parsed) throw ConfigError(where + ".variant: unknown variant '" + variant + "'");
  c.variant = *parsed;
  take(j, "num_classes", c.num_classes, where);
  take(j, "roi_size", c.roi_size, where);
  take(j, "roi_samples", c.roi_samples, where);
  take(j, "backbone_width", c.backbone_width, where);
  std::string norm = norm_kind_name(c.backbone_norm);
  take(j, "backbone_norm", norm, where);
  c.backbone_norm = parse_norm_kind(norm);
  take(j, "fc_width", c.fc_width, where);
  if (j.contains("conv_head")) conv_head_from_json(j.at("conv_head"), c.conv_head, where + ".conv_head");
  if (j.contains("weights")) weights_from_json(j.at("weights"), c.weights, where + ".weights");
  take(j, "fusion_enabled", c.fusion_enabled, where);
  std::string mode = fusion_mode_name(c.fusion_mode);
  take(j, "fusion_mode", mode, where);
  c.fusion_mode = parse_fusion_mode(mode);
  return c;
}

// Loss weights deliberately absent: the detector config owns them, and the
// run-config loader mirrors them into the train schedule.
inline json train_to_json(const TrainConfig& c) {
  return json{{"lr", c.lr},
              {"lr_decay_steps", c.lr_decay_steps},
              {"lr_decay_factor", c.lr_decay_factor},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"steps", c.steps},
              {"batch_images", c.batch_images},
              {"proposals_per_image", c.proposals_per_image},
              {"fg_fraction", c.fg_fraction},
              {"fg_iou", c.fg_iou},
              {"bg_iou", c.bg_iou},
              {"jitter_magnitudes", c.jitter_magnitudes},
              {"jitter_per_magnitude", c.jitter_per_magnitude},
              {"random_per_image", c.random_per_image},
              {"seed", c.seed}};
}

inline TrainConfig train_from_json(const json& j, const std::string& where) {
  check_keys(j,
             {"lr", "lr_decay_steps", "lr_decay_factor", "momentum", "weight_decay",
              "steps", "batch_images", "proposals_per_image", "fg_fraction", "fg_iou", "bg_iou",
              "jitter_magnitudes", "jitter_per_magnitude", "random_per_image", "seed"},
             where);
  TrainConfig c;
  take(j, "lr", c.lr, where);
  take(j, "lr_decay_steps", c.lr_decay_steps, where);
  take(j, "lr_decay_factor", c.lr_decay_factor, where);
  take(j, "momentum", c.momentum, where);
  take(j, "weight_decay", c.weight_decay, where);
  take(j, "steps", c.steps, where);
  take(j, "batch_images", c.batch_images, where);
  take(j, "proposals_per_image", c.proposals_per_image, where);
  take(j, "fg_fraction", c.fg_fraction, where);
  take(j, "fg_iou", c.fg_iou, where);
  take(j, "bg_iou", c.bg_iou, where);
  take(j, "jitter_magnitudes", c.jitter_magnitudes, where);
  take(j, "jitter_per_magnitude", c.jitter_per_magnitude, where);
  take(j, "random_per_image", c.random_per_image, where);
  take(j, "seed", c.seed, where);
  return c;
}

inline json infer_to_json(const InferConfig& c) {
  return json{{"score_threshold", c.score_threshold},
              {"nms_threshold", c.nms_threshold},
              {"max_detections", c.max_detections},
              {"second_pass", c.second_pass},
              {"roi_chunk", c.roi_chunk},
              {"grid_scales", c.grid_scales},
              {"grid_aspects", c.grid_aspects}};
}

inline InferConfig infer_from_json(const json& j, const std::string& where) {
  check_keys(j,
             {"score_threshold", "nms_threshold", "max_detections", "second_pass", "roi_chunk",
              "grid_scales", "grid_aspects"},
             where);
  InferConfig c;
  take(j, "score_threshold", c.score_threshold, where);
  take(j, "nms_threshold", c.nms_threshold, where);
  take(j, "max_detections", c.max_detections, where);
  take(j, "second_pass", c.second_pass, where);
  take(j, "roi_chunk", c.roi_chunk, where);
  take(j, "grid_scales", c.grid_scales, where);
  take(j, "grid_aspects", c.grid_aspects, where);
  return c;
}

inline json dataset_to_json(const DatasetConfig& c) {
  return json{{"images", c.images},
              {"width", c.width},
              {"height", c.height},
              {"min_objects", c.min_objects},
              {"max_objects", c.max_objects},
              {"min_size", c.min_size},
              {"max_size", c.max_size},
              {"max_occlusion", c.max_occlusion},
              {"min_containment", c.min_containment},
              {"place_attempts", c.place_attempts},
              {"seed", c.seed}};
}

inline DatasetConfig dataset_from_json(const json& j, const std::string& where) {
  check_keys(j,
             {"images", "width", "height", "min_objects", "max_objects", "min_size", "max_size",
              "max_occlusion", "min_containment", "place_attempts", "seed"},
             where);
  DatasetConfig c;
  take(j, "images", c.images, where);
  take(j, "width", c.width, where);
  take(j, "height", c.height, where);
  take(j, "min_objects", c.min_objects, where);
  take(j, "max_objects", c.max_objects, where);
  take(j, "min_size", c.min_size, where);
  take(j, "max_size", c.max_size, where);
  take(j, "max_occlusion", c.max_occlusion, where);
  take(j, "min_containment", c.min_containment, where);
  take(j, "place_attempts", c.place_attempts, where);
  take(j, "seed", c.seed, where);
  return c;
}

inline json sliding_to_json(const SlidingConfig& c) {
  return json{{"scale_steps", c.scale_steps},
              {"scale_min", c.scale_min},
              {"scale_max", c.scale_max},
              {"aspect_steps", c.aspect_steps},
              {"aspect_max", c.aspect_max},
              {"shifts", c.shifts}};
}

inline void sliding_from_json(const json& j, SlidingConfig& c, const std::string& where) {
  check_keys(j, {"scale_steps", "scale_min", "scale_max", "aspect_steps", "aspect_max", "shifts"},
             where);
  take(j, "scale_steps", c.scale_steps, where);
  take(j, "scale_min", c.scale_min, where);
  take(j, "scale_max", c.scale_max, where);
  take(j, "aspect_steps", c.aspect_steps, where);
  take(j, "aspect_max", c.aspect_max, where);
  take(j, "shifts", c.shifts, where);
}

// per_class_ap is runtime input (an evaluation artifact), never a file key
inline json analysis_to_json(const AnalysisConfig& c) {
  return json{{"sliding", sliding_to_json(c.sliding)},
              {"roi_chunk", c.roi_chunk},
              {"workers", c.workers},
              {"fc_unit", c.fc_unit},
              {"conv_unit", c.conv_unit}};
}

inline AnalysisConfig analysis_from_json(const json& j, const std::string& where) {
  check_keys(j, {"sliding", "roi_chunk", "workers", "fc_unit", "conv_unit"}, where);
  AnalysisConfig c;
  if (j.contains("sliding")) sliding_from_json(j.at("sliding"), c.sliding, where + ".sliding");
  take(j, "roi_chunk", c.roi_chunk, where);
  take(j, "workers", c.workers, where);
  take(j, "fc_unit", c.fc_unit, where);
  take(j, "conv_unit", c.conv_unit, where);
  return c;
}

}  // namespace duodet::cfgjson
