#include "dualseg/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dualseg {

void ImageBatch::set(int i, const Image& img) {
  if (img.channels != channels || img.height != height || img.width != width)
    throw std::invalid_argument("ImageBatch::set: shape mismatch");
  std::copy(img.data.begin(), img.data.end(),
            data.begin() + static_cast<size_t>(i) * channels * height * width);
}

Image ImageBatch::get(int i) const {
  Image img(channels, height, width);
  const size_t n = static_cast<size_t>(channels) * height * width;
  std::copy_n(data.begin() + static_cast<size_t>(i) * n, n, img.data.begin());
  return img;
}

Image resize_bilinear(const Image& src, int out_h, int out_w) {
  Image out(src.channels, out_h, out_w);
  const real ry = static_cast<real>(src.height) / out_h;
  const real rx = static_cast<real>(src.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    real sy = std::clamp<real>((y + 0.5) * ry - 0.5, 0.0, src.height - 1.0);
    int y0 = static_cast<int>(std::floor(sy));
    int y1 = std::min(y0 + 1, src.height - 1);
    real fy = sy - y0;
    for (int x = 0; x < out_w; ++x) {
      real sx = std::clamp<real>((x + 0.5) * rx - 0.5, 0.0, src.width - 1.0);
      int x0 = static_cast<int>(std::floor(sx));
      int x1 = std::min(x0 + 1, src.width - 1);
      real fx = sx - x0;
      for (int c = 0; c < src.channels; ++c) {
        real v = (1 - fy) * ((1 - fx) * src.at(c, y0, x0) + fx * src.at(c, y0, x1)) +
                 fy * ((1 - fx) * src.at(c, y1, x0) + fx * src.at(c, y1, x1));
        out.at(c, y, x) = v;
      }
    }
  }
  return out;
}

Mask resize_nearest(const Mask& src, int out_h, int out_w) {
  Mask out(out_h, out_w);
  const real ry = static_cast<real>(src.height) / out_h;
  const real rx = static_cast<real>(src.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    int sy = std::min(static_cast<int>(std::floor((y + 0.5) * ry)), src.height - 1);
    for (int x = 0; x < out_w; ++x) {
      int sx = std::min(static_cast<int>(std::floor((x + 0.5) * rx)), src.width - 1);
      out.at(y, x) = src.at(sy, sx);
    }
  }
  return out;
}

Image hflip(const Image& src) {
  Image out(src.channels, src.height, src.width);
  for (int c = 0; c < src.channels; ++c)
    for (int y = 0; y < src.height; ++y)
      for (int x = 0; x < src.width; ++x) out.at(c, y, x) = src.at(c, y, src.width - 1 - x);
  return out;
}

Mask hflip(const Mask& src) {
  Mask out(src.height, src.width);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) out.at(y, x) = src.at(y, src.width - 1 - x);
  return out;
}

Image gaussian_blur(const Image& src, real sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<real> kernel(2 * radius + 1);
  real sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (auto& k : kernel) k /= sum;

  // separable, clamp-to-edge
  Image tmp(src.channels, src.height, src.width);
  for (int c = 0; c < src.channels; ++c)
    for (int y = 0; y < src.height; ++y)
      for (int x = 0; x < src.width; ++x) {
        real v = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          int xi = std::clamp(x + i, 0, src.width - 1);
          v += kernel[i + radius] * src.at(c, y, xi);
        }
        tmp.at(c, y, x) = v;
      }
  Image out(src.channels, src.height, src.width);
  for (int c = 0; c < src.channels; ++c)
    for (int y = 0; y < src.height; ++y)
      for (int x = 0; x < src.width; ++x) {
        real v = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          int yi = std::clamp(y + i, 0, src.height - 1);
          v += kernel[i + radius] * tmp.at(c, yi, x);
        }
        out.at(c, y, x) = v;
      }
  return out;
}

std::vector<real> luma(const Image& src) {
  std::vector<real> out(static_cast<size_t>(src.height) * src.width);
  if (src.channels == 1) {
    out = src.data;
    return out;
  }
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      out[static_cast<size_t>(y) * src.width + x] =
          0.299 * src.at(0, y, x) + 0.587 * src.at(1, y, x) + 0.114 * src.at(2, y, x);
  return out;
}

void clip01(Image& img) {
  for (auto& v : img.data) v = std::clamp<real>(v, 0.0, 1.0);
}

}  // namespace dualseg
