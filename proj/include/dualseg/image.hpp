#pragma once

#include <cstdint>
#include <vector>

#include "dualseg/tensor.hpp"

namespace dualseg {

constexpr int kIgnoreClass = 255;

// Dense [channels][y][x] image, values in [0, 1].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<real> data;

  Image() = default;
  Image(int c, int h, int w) : channels(c), height(h), width(w),
                               data(static_cast<size_t>(c) * h * w, 0.0) {}

  real& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  real at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
};

// Per-pixel integer class ids; kIgnoreClass marks excluded pixels.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<int> data;

  Mask() = default;
  Mask(int h, int w, int fill = 0) : height(h), width(w),
                                     data(static_cast<size_t>(h) * w, fill) {}

  int& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
  int at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
};

// Contiguous [B][C][H][W] batch fed to the encoders.
struct ImageBatch {
  int batch = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<real> data;

  ImageBatch() = default;
  ImageBatch(int b, int c, int h, int w)
      : batch(b), channels(c), height(h), width(w),
        data(static_cast<size_t>(b) * c * h * w, 0.0) {}

  void set(int i, const Image& img);
  Image get(int i) const;
};

Image resize_bilinear(const Image& src, int out_h, int out_w);
Mask resize_nearest(const Mask& src, int out_h, int out_w);
Image hflip(const Image& src);
Mask hflip(const Mask& src);
Image gaussian_blur(const Image& src, real sigma);

// ITU-R 601 luma; single-channel images pass through.
std::vector<real> luma(const Image& src);

void clip01(Image& img);

}  // namespace dualseg
