// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "duodet/errors.hpp"
#include "duodet/geometry.hpp"
#include "duodet/tensor.hpp"

// RoIAlign over a single-image feature map: each output cell averages a
// fixed 2x2 pattern of bilinear samples taken at exact continuous
// coordinates (no rounding). Pixel (ix, iy) is centered at (ix+0.5, iy+0.5)
// in feature units; out-of-range samples clamp to the border.
namespace duodet {

namespace detail {

template <class T, class Visit>
void bilinear_visit(const Fmap<T>& f, double px, double py, Visit&& visit) {
  const double qx = px - 0.5, qy = py - 0.5;
  const int x0 = static_cast<int>(std::floor(qx));
  const int y0 = static_cast<int>(std::floor(qy));
  const double fx = qx - x0, fy = qy - y0;
  const auto clampx = [&](int v) { return v < 0 ? 0 : (v >= f.w ? f.w - 1 : v); };
  const auto clampy = [&](int v) { return v < 0 ? 0 : (v >= f.h ? f.h - 1 : v); };
  const int xs[2] = {clampx(x0), clampx(x0 + 1)};
  const int ys[2] = {clampy(y0), clampy(y0 + 1)};
  const double wx[2] = {1.0 - fx, fx};
  const double wy[2] = {1.0 - fy, fy};
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx) visit(ys[dy], xs[dx], wy[dy] * wx[dx]);
}

}  // namespace detail

/// Pools each box (image coordinates) from one sample of the feature-map
/// batch into an (out_size, out_size) grid. Returns an Fmap with one sample
/// per box.
template <class T>
Fmap<T> roi_align(const Fmap<T>& fmap, int sample, const std::vector<Box>& boxes, double stride,
                  int out_size = 7, int samples = 2) {
  check_contract(sample >= 0 && sample < fmap.n, "roi_align: sample index out of range");
  check_contract(out_size >= 1 && samples >= 1, "roi_align: invalid grid spec");
  const int c = fmap.c;
  Fmap<T> out(static_cast<int>(boxes.size()), out_size, out_size, c);
  const double inv_count = 1.0 / (samples * samples);
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    const Box& box = boxes[b];
    check_contract(box.valid(), "roi_align: degenerate box");
    const double fx1 = box.x1 / stride, fy1 = box.y1 / stride;
    const double cw = (box.x2 - box.x1) / stride / out_size;
    const double ch = (box.y2 - box.y1) / stride / out_size;
    for (int gy = 0; gy < out_size; ++gy) {
      for (int gx = 0; gx < out_size; ++gx) {
        T* cell = out.row(out.row_index(static_cast<int>(b), gy, gx));
        for (int sy = 0; sy < samples; ++sy) {
          const double py = fy1 + (gy + (sy + 0.5) / samples) * ch;
          for (int sx = 0; sx < samples; ++sx) {
            const double px = fx1 + (gx + (sx + 0.5) / samples) * cw;
            detail::bilinear_visit(fmap, px, py, [&](int iy, int ix, double w) {
              const T* src = fmap.row(fmap.row_index(sample, iy, ix));
              const T wv = static_cast<T>(w * inv_count);
              for (int ci = 0; ci < c; ++ci) cell[ci] += wv * src[ci];
            });
          }
        }
      }
    }
  }
  return out;
}

/// Scatters RoI gradients back onto one sample of the feature-map batch
/// using the same sample pattern as the forward pass. Accumulates into
/// dfmap.
template <class T>
void roi_align_backward(const Fmap<T>& dout, int sample, const std::vector<Box>& boxes,
                        double stride, Fmap<T>& dfmap, int samples = 2) {
  check_contract(dout.n == static_cast<int>(boxes.size()),
                 "roi_align_backward: box count mismatch");
  check_contract(sample >= 0 && sample < dfmap.n,
                 "roi_align_backward: sample index out of range");
  const int out_size = dout.h;
  const int c = dout.c;
  check_contract(dfmap.c == c, "roi_align_backward: channel mismatch");
  const double inv_count = 1.0 / (samples * samples);
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    const Box& box = boxes[b];
    const double fx1 = box.x1 / stride, fy1 = box.y1 / stride;
    const double cw = (box.x2 - box.x1) / stride / out_size;
    const double ch = (box.y2 - box.y1) / stride / out_size;
    for (int gy = 0; gy < out_size; ++gy) {
      for (int gx = 0; gx < out_size; ++gx) {
        const T* cell = dout.row(dout.row_index(static_cast<int>(b), gy, gx));
        for (int sy = 0; sy < samples; ++sy) {
          const double py = fy1 + (gy + (sy + 0.5) / samples) * ch;
          for (int sx = 0; sx < samples; ++sx) {
            const double px = fx1 + (gx + (sx + 0.5) / samples) * cw;
            detail::bilinear_visit(dfmap, px, py, [&](int iy, int ix, double w) {
              T* dst = dfmap.row(dfmap.row_index(sample, iy, ix));
              const T wv = static_cast<T>(w * inv_count);
              for (int ci = 0; ci < c; ++ci) dst[ci] += wv * cell[ci];
            });
          }
        }
      }
    }
  }
}

}  // namespace duodet
