// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstring>
#include <vector>

#include "duodet/errors.hpp"
#include "duodet/model.hpp"
#include "duodet/proposals.hpp"
#include "duodet/roi_align.hpp"

// Grid-proposal inference. A dense anchor grid stands in for an RPN; an
// optional second pass re-pools the refined boxes, which tightens
// localization the same way a cascade stage would.
namespace duodet {

struct InferConfig {
  double score_threshold = 0.05;  // detections must score strictly above this
  double nms_threshold = 0.5;
  int max_detections = 100;
  bool second_pass = true;
  int roi_chunk = 512;  // bound on RoIs pooled per head batch
  std::vector<double> grid_scales{24, 48, 96, 176};
  std::vector<double> grid_aspects{0.5, 1.0, 2.0};

  void validate() const {
    if (!(score_threshold >= 0 && score_threshold <= 1))
      throw ConfigError("infer: score_threshold must lie in [0,1]");
    if (!(nms_threshold >= 0 && nms_threshold <= 1))
      throw ConfigError("infer: nms_threshold must lie in [0,1]");
    if (max_detections < 1) throw ConfigError("infer: max_detections must be positive");
    if (roi_chunk < 1) throw ConfigError("infer: roi_chunk must be positive");
    if (grid_scales.empty() || grid_aspects.empty())
      throw ConfigError("infer: the proposal grid needs scales and aspects");
  }
};

namespace detail {

/// Scores and decodes one batch of proposal boxes against a feature map.
template <class T>
void score_boxes(Detector<T>& model, const Fmap<T>& fmap, const std::vector<Box>& boxes,
                 double image_w, double image_h, const InferConfig& cfg,
                 std::vector<Detection>& out) {
  const double stride = model.stride();
  const int roi_size = model.config().roi_size;
  const int roi_samples = model.config().roi_samples;
  const int C = model.num_classes();
  for (std::size_t base = 0; base < boxes.size(); base += static_cast<std::size_t>(cfg.roi_chunk)) {
    const std::size_t n = std::min(boxes.size() - base, static_cast<std::size_t>(cfg.roi_chunk));
    std::vector<Box> chunk(boxes.begin() + static_cast<std::ptrdiff_t>(base),
                           boxes.begin() + static_cast<std::ptrdiff_t>(base + n));
    auto pooled = roi_align(fmap, 0, chunk, stride, roi_size, roi_samples);
    auto scores = model.infer_rois(pooled);
    auto pm = scores.probs.mat();
    auto dm = scores.deltas.mat();
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<std::int64_t>(i);
      int best = 1;
      for (int c = 2; c <= C; ++c)
        if (pm(r, c) > pm(r, best)) best = c;
      const double score = pm(r, best);
      if (!(score > cfg.score_threshold)) continue;
      const int off = 4 * (best - 1);
      BoxDelta d{dm(r, off), dm(r, off + 1), dm(r, off + 2), dm(r, off + 3)};
      auto refined = clip_box(decode_delta(chunk[i], d), image_w, image_h);
      if (!refined) continue;
      out.push_back(Detection{*refined, best, score});
    }
  }
}

}  // namespace detail

/// Full-image detection. Returns at most max_detections boxes sorted by
/// descending score.
template <class T>
std::vector<Detection> infer_image(Detector<T>& model, const Fmap<T>& image,
                                   const InferConfig& cfg) {
  cfg.validate();
  check_contract(image.n == 1 && image.c == 3, "infer: image must be (1,h,w,3)");
  const double image_w = image.w;
  const double image_h = image.h;
  auto fmap = model.backbone_forward(image, false);

  auto grid = inference_grid(image_w, image_h, model.stride(), cfg.grid_scales,
                             cfg.grid_aspects);
  std::vector<Detection> dets;
  detail::score_boxes(model, fmap, grid, image_w, image_h, cfg, dets);
  dets = nms(std::move(dets), cfg.nms_threshold);
  if (static_cast<int>(dets.size()) > cfg.max_detections)
    dets.resize(static_cast<std::size_t>(cfg.max_detections));

  if (cfg.second_pass && !dets.empty()) {
    std::vector<Box> refined;
    refined.reserve(dets.size());
    for (const auto& d : dets) refined.push_back(d.box);
    std::vector<Detection> second;
    detail::score_boxes(model, fmap, refined, image_w, image_h, cfg, second);
    second = nms(std::move(second), cfg.nms_threshold);
    if (static_cast<int>(second.size()) > cfg.max_detections)
      second.resize(static_cast<std::size_t>(cfg.max_detections));
    dets = std::move(second);
  }
  return dets;
}

}  // namespace duodet
