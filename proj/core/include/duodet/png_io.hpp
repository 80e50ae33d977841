// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "duodet/tensor.hpp"

namespace duodet {

/// Writes a (1,h,w,3) image with values in [0,1] as an 8-bit RGB PNG.
/// Out-of-range values are clamped.
void write_png(const std::string& path, const Fmap<float>& image);

/// Reads an RGB(A) PNG into a (1,h,w,3) float map scaled to [0,1].
Fmap<float> read_png(const std::string& path);

}  // namespace duodet
