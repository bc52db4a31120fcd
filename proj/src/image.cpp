// Copyright (c) 2026 moefield authors
// SPDX-License-Identifier: Apache-2.0

#include "moefield/image.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace moefield {

void write_ppm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_ppm: cannot open " + path);
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(3) * img.width);
  for (int y = 0; y < img.height; ++y) {
    const float* src = img.rgb.data() + 3 * static_cast<size_t>(y) * img.width;
    for (int i = 0; i < 3 * img.width; ++i) {
      float v = src[i];
      v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
      row[static_cast<size_t>(i)] =
          static_cast<unsigned char>(std::lround(255.0 * v));
    }
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw std::runtime_error("write_ppm: write failed for " + path);
}

Image read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  is >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: not a P6 file: " + path);
  auto next_token = [&is, &path]() {
    std::string tok;
    while (is >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(is, rest);
        continue;
      }
      return tok;
    }
    throw std::runtime_error("read_ppm: truncated header in " + path);
  };
  int w = std::stoi(next_token());
  int h = std::stoi(next_token());
  int maxval = std::stoi(next_token());
  if (maxval != 255) throw std::runtime_error("read_ppm: expected maxval 255");
  is.get();  // single whitespace after header
  Image img(w, h);
  std::vector<unsigned char> buf(static_cast<size_t>(3) * w * h);
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (!is) throw std::runtime_error("read_ppm: truncated pixel data in " + path);
  for (size_t i = 0; i < buf.size(); ++i)
    img.rgb[i] = static_cast<float>(buf[i]) / 255.f;
  return img;
}

}  // namespace moefield
