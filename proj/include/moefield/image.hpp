// Copyright (c) 2026 moefield authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace moefield {

// Float RGB image, row-major, values nominally in [0,1]. PPM output is
// binary P6, 8-bit, round(255*clamp(v,0,1)) per channel.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;  // 3 * width * height

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<size_t>(3) * w * h, 0.f) {}

  float* pixel(int x, int y) {
    return rgb.data() + 3 * (static_cast<size_t>(y) * width + x);
  }
  const float* pixel(int x, int y) const {
    return rgb.data() + 3 * (static_cast<size_t>(y) * width + x);
  }
};

void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

}  // namespace moefield
