// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#include "duodet/geometry.hpp"

#include <algorithm>

#include "duodet/errors.hpp"

namespace duodet {

double iou(const Box& a, const Box& b) {
  check_contract(a.valid() && b.valid(), "iou: boxes must be valid");
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

BoxDelta encode_delta(const Box& proposal, const Box& target) {
  check_contract(proposal.valid() && target.valid(), "encode_delta: boxes must be valid");
  const double pw = proposal.width();
  const double ph = proposal.height();
  return {(target.cx() - proposal.cx()) / pw, (target.cy() - proposal.cy()) / ph,
          std::log(target.width() / pw), std::log(target.height() / ph)};
}

Box decode_delta(const Box& proposal, const BoxDelta& delta) {
  check_contract(proposal.valid(), "decode_delta: proposal must be valid");
  check_contract(std::isfinite(delta.dx) && std::isfinite(delta.dy) &&
                     std::isfinite(delta.dw) && std::isfinite(delta.dh),
                 "decode_delta: delta must be finite");
  const double pw = proposal.width();
  const double ph = proposal.height();
  const double cx = proposal.cx() + delta.dx * pw;
  const double cy = proposal.cy() + delta.dy * ph;
  const double w = pw * std::exp(std::min(delta.dw, kDeltaClamp));
  const double h = ph * std::exp(std::min(delta.dh, kDeltaClamp));
  return Box::from_center(cx, cy, w, h);
}

std::optional<Box> clip_box(const Box& b, double width, double height) {
  check_contract(b.valid(), "clip_box: box must be valid");
  check_contract(width > 0 && height > 0, "clip_box: image size must be positive");
  Box out{std::clamp(b.x1, 0.0, width), std::clamp(b.y1, 0.0, height),
          std::clamp(b.x2, 0.0, width), std::clamp(b.y2, 0.0, height)};
  if (!(out.x2 > out.x1 && out.y2 > out.y1)) return std::nullopt;
  return out;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  check_contract(iou_threshold > 0.0 && iou_threshold <= 1.0,
                 "nms: threshold must be in (0, 1]");
  // Stable sort keeps insertion order on score ties, which pins the result.
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  kept.reserve(dets.size());
  std::vector<char> removed(dets.size(), 0);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (removed[i]) continue;
    kept.push_back(dets[i]);
    for (std::size_t j = i + 1; j < dets.size(); ++j) {
      if (removed[j] || dets[j].class_id != dets[i].class_id) continue;
      if (iou(dets[i].box, dets[j].box) > iou_threshold) removed[j] = 1;
    }
  }
  return kept;
}

}  // namespace duodet
