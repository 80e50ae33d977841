// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "duodet/geometry.hpp"
#include "duodet/proposals.hpp"

// 101-point interpolated average precision over a threshold sweep, with
// area-based size grouping rescaled to the image resolution.
namespace duodet {

struct EvalImage {
  std::vector<Detection> detections;
  std::vector<GtObject> ground_truth;
  int width = 0, height = 0;
};

enum class SizeGroup { Small, Medium, Large };

/// Area thresholds follow the 32^2 / 96^2 convention at a 640px reference
/// side and scale quadratically with min(width, height). An area exactly at
/// a boundary belongs to the larger group.
SizeGroup size_group(double area, int image_width, int image_height);

struct EvalOptions {
  std::vector<double> thresholds;  // defaults to 0.50:0.05:0.95
  bool size_groups = true;

  static std::vector<double> default_thresholds();
};

struct ClassAp {
  int class_id = 0;
  double ap = 0;  // mean over thresholds
};

struct ApReport {
  double mean_ap = 0;  // classes with ground truth, all thresholds
  double ap50 = 0;
  double ap75 = 0;
  std::vector<ClassAp> per_class;
  std::vector<int> classes_without_gt;  // excluded from every mean
  // per-size means; disengaged when the group has no ground truth at all
  std::optional<double> ap_small, ap_medium, ap_large;
};

/// Greedy matching (score descending, best IoU, earliest ground truth wins
/// ties) and 101-point interpolation per class and threshold.
ApReport evaluate_ap(const std::vector<EvalImage>& images, int num_classes,
                     const EvalOptions& opt = {});

}  // namespace duodet
