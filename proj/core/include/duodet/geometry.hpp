// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <optional>
#include <vector>

namespace duodet {

/// Axis-aligned box, corner convention, continuous pixel coordinates.
/// Valid boxes have strictly positive width and height.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }

  bool valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
           std::isfinite(y2) && x2 > x1 && y2 > y1;
  }

  static Box from_center(double cx, double cy, double w, double h) {
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }

  bool operator==(const Box& o) const = default;
};

/// Box regression parameterization: center offsets normalized by the
/// proposal size and log-space size ratios.
struct BoxDelta {
  double dx = 0, dy = 0, dw = 0, dh = 0;
};

struct Detection {
  Box box;
  int class_id = 0;  // in [1, C]; never the background index
  double score = 0;  // in [0, 1]
};

/// Guard against exp overflow when decoding far-off proposals.
inline const double kDeltaClamp = std::log(1000.0 / 16.0);

double iou(const Box& a, const Box& b);

BoxDelta encode_delta(const Box& proposal, const Box& target);

/// Inverse of encode_delta; dw/dh are clamped to kDeltaClamp before
/// exponentiation.
Box decode_delta(const Box& proposal, const BoxDelta& delta);

/// Clamps into [0, width] x [0, height]. Returns nullopt when the clipped
/// box is degenerate (zero area) so the caller can drop it.
std::optional<Box> clip_box(const Box& b, double width, double height);

/// Greedy per-class NMS. Output sorted by descending score; no surviving
/// same-class pair has IoU above the threshold.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

}  // namespace duodet
