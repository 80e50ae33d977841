// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#include "duodet/eval.hpp"

#include <algorithm>
#include <cmath>

#include "duodet/errors.hpp"

namespace duodet {

SizeGroup size_group(double area, int image_width, int image_height) {
  const double side = std::min(image_width, image_height);
  const double k = (side / 640.0) * (side / 640.0);
  if (area < 32.0 * 32.0 * k) return SizeGroup::Small;
  if (area < 96.0 * 96.0 * k) return SizeGroup::Medium;
  return SizeGroup::Large;
}

std::vector<double> EvalOptions::default_thresholds() {
  std::vector<double> out;
  for (int i = 0; i <= 9; ++i) out.push_back(0.5 + 0.05 * i);
  return out;
}

namespace {

struct DetRef {
  std::size_t image = 0;
  std::size_t index = 0;  // original position, for stable tie-breaks
  double score = 0;
  Box box;
};

struct GtRef {
  Box box;
  bool real = true;  // false = outside the size group under evaluation
};

/// AP for one class at one threshold; nullopt when the (possibly filtered)
/// ground-truth set is empty.
std::optional<double> class_ap(const std::vector<EvalImage>& images, int class_id,
                               double threshold, const std::optional<SizeGroup>& group) {
  std::vector<DetRef> dets;
  std::vector<std::vector<GtRef>> gts(images.size());
  std::int64_t n_real = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = images[i];
    for (std::size_t d = 0; d < im.detections.size(); ++d)
      if (im.detections[d].class_id == class_id)
        dets.push_back(DetRef{i, d, im.detections[d].score, im.detections[d].box});
    for (const auto& g : im.ground_truth) {
      if (g.class_id != class_id) continue;
      GtRef ref{g.box, true};
      if (group) ref.real = size_group(g.box.area(), im.width, im.height) == *group;
      n_real += ref.real ? 1 : 0;
      gts[i].push_back(ref);
    }
  }
  if (n_real == 0) return std::nullopt;

  std::sort(dets.begin(), dets.end(), [](const DetRef& a, const DetRef& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.index < b.index;
  });

  std::vector<std::vector<char>> used(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) used[i].assign(gts[i].size(), 0);

  std::vector<double> precision, recall;
  std::int64_t tp = 0, fp = 0;
  for (const auto& det : dets) {
    const auto& candidates = gts[det.image];
    auto& taken = used[det.image];
    int best_real = -1, best_ignore = -1;
    double best_real_iou = 0, best_ignore_iou = 0;
    for (std::size_t g = 0; g < candidates.size(); ++g) {
      if (taken[g]) continue;
      const double v = iou(det.box, candidates[g].box);
      if (v < threshold) continue;
      if (candidates[g].real) {
        if (v > best_real_iou) {
          best_real_iou = v;
          best_real = static_cast<int>(g);
        }
      } else if (v > best_ignore_iou) {
        best_ignore_iou = v;
        best_ignore = static_cast<int>(g);
      }
    }
    if (best_real >= 0) {
      taken[static_cast<std::size_t>(best_real)] = 1;
      ++tp;
    } else if (best_ignore >= 0) {
      continue;  // matched an out-of-group object
    } else if (group) {
      const auto& im = images[det.image];
      if (size_group(det.box.area(), im.width, im.height) != *group)
        continue;  // unmatched detection belonging to another size regime
      ++fp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_real));
  }

  double ap = 0;
  for (int r = 0; r <= 100; ++r) {
    const double want = r / 100.0;
    double best = 0;
    for (std::size_t i = 0; i < precision.size(); ++i)
      if (recall[i] >= want) best = std::max(best, precision[i]);
    ap += best;
  }
  return ap / 101.0;
}

}  // namespace

ApReport evaluate_ap(const std::vector<EvalImage>& images, int num_classes,
                     const EvalOptions& opt) {
  check_contract(num_classes >= 1, "evaluate_ap: num_classes must be positive");
  for (const auto& im : images)
    check_contract(im.width > 0 && im.height > 0, "evaluate_ap: image sizes are required");
  auto thresholds = opt.thresholds.empty() ? EvalOptions::default_thresholds() : opt.thresholds;

  ApReport report;
  std::vector<int> classes_with_gt;
  for (int c = 1; c <= num_classes; ++c) {
    bool has_gt = false;
    for (const auto& im : images)
      for (const auto& g : im.ground_truth)
        if (g.class_id == c) has_gt = true;
    if (has_gt) {
      classes_with_gt.push_back(c);
    } else {
      report.classes_without_gt.push_back(c);
    }
  }
  if (classes_with_gt.empty()) return report;

  double sum_all = 0, sum50 = 0, sum75 = 0;
  for (int c : classes_with_gt) {
    double sum_c = 0;
    for (double t : thresholds) sum_c += class_ap(images, c, t, std::nullopt).value_or(0.0);
    report.per_class.push_back(ClassAp{c, sum_c / static_cast<double>(thresholds.size())});
    sum_all += report.per_class.back().ap;
    sum50 += class_ap(images, c, 0.5, std::nullopt).value_or(0.0);
    sum75 += class_ap(images, c, 0.75, std::nullopt).value_or(0.0);
  }
  const auto n_cls = static_cast<double>(classes_with_gt.size());
  report.mean_ap = sum_all / n_cls;
  report.ap50 = sum50 / n_cls;
  report.ap75 = sum75 / n_cls;

  if (opt.size_groups) {
    for (auto group : {SizeGroup::Small, SizeGroup::Medium, SizeGroup::Large}) {
      double sum = 0;
      int engaged = 0;
      for (int c : classes_with_gt) {
        double sum_c = 0;
        int have = 0;
        for (double t : thresholds) {
          if (auto ap = class_ap(images, c, t, group)) {
            sum_c += *ap;
            ++have;
          }
        }
        if (have > 0) {
          sum += sum_c / have;
          ++engaged;
        }
      }
      std::optional<double> value;
      if (engaged > 0) value = sum / engaged;
      switch (group) {
        case SizeGroup::Small: report.ap_small = value; break;
        case SizeGroup::Medium: report.ap_medium = value; break;
        case SizeGroup::Large: report.ap_large = value; break;
      }
    }
  }
  return report;
}

}  // namespace duodet
