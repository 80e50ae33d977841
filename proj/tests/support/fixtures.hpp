// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "duodet/model.hpp"
#include "duodet/train.hpp"

// Miniature model configurations and synthetic images shared across suites.
namespace duodet::testing {

/// Detector small enough for finite-difference work but structurally
/// complete: the conv head keeps one non-local block.
inline DetectorConfig tiny_config(DetectorVariant v) {
  DetectorConfig cfg;
  cfg.variant = v;
  cfg.num_classes = 3;
  cfg.backbone_width = 4;
  cfg.fc_width = 32;
  cfg.conv_head.blocks = 3;
  cfg.conv_head.nonlocal_embed = 8;
  cfg.conv_head.mid_channels = 8;
  cfg.conv_head.trunk_channels = 16;
  return cfg;
}

/// Uniform background with one axis-aligned bright square per class.
template <class T>
TrainExample<T> square_example(int size, int cls, int x, int y, int side) {
  TrainExample<T> ex;
  ex.image = Fmap<T>(1, size, size, 3);
  ex.image.t.fill(static_cast<T>(0.1));
  for (int iy = y; iy < y + side; ++iy) {
    for (int ix = x; ix < x + side; ++ix) {
      T* px = ex.image.row(ex.image.row_index(0, iy, ix));
      px[0] = cls == 1 ? T(0.9) : T(0.2);
      px[1] = cls == 2 ? T(0.9) : T(0.2);
      px[2] = cls == 3 ? T(0.9) : T(0.2);
    }
  }
  ex.objects.push_back(GtObject{Box{static_cast<double>(x), static_cast<double>(y),
                                    static_cast<double>(x + side),
                                    static_cast<double>(y + side)},
                                cls});
  return ex;
}

}  // namespace duodet::testing
