#pragma once

#include <string>
#include <vector>

#include "eqpose/error.hpp"

namespace eqpose {

// In-memory raster: grayscale (1 channel) or RGB (3), values in [0, 1],
// row-major, interleaved channels.
struct Image {
  int width = 0, height = 0, channels = 1;
  std::vector<double> pix;

  Image() = default;
  Image(int w, int h, int c = 1, double fill = 0.0)
      : width(w), height(h), channels(c), pix((size_t)w * h * c, fill) {
    contract(w >= 1 && h >= 1 && (c == 1 || c == 3), "image: bad geometry");
  }

  double& at(int x, int y, int c = 0) {
    return pix[((size_t)y * width + x) * channels + c];
  }
  double at(int x, int y, int c = 0) const {
    return pix[((size_t)y * width + x) * channels + c];
  }
};

// 8-bit binary PGM (P5) / PPM (P6). Writing quantizes with round(v * 255)
// after clamping to [0, 1]; reading maps byte b to b / 255.
Image read_pnm(const std::string& path);
void write_pnm(const Image& img, const std::string& path);

// The exact bytes write_pnm would store for this image; lets callers compare
// a freshly rendered image against a file without re-reading it.
std::vector<unsigned char> quantize_bytes(const Image& img);

}  // namespace eqpose
