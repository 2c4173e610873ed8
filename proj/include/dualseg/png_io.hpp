#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "dualseg/image.hpp"

namespace dualseg {

using Rgb = std::array<std::uint8_t, 3>;

// 8-bit PNG in, [0,1] image out. Gray stays single-channel; alpha is dropped;
// palette images are expanded to RGB.
Image read_image_png(const std::filesystem::path& path);

// Index masks: palette PNGs yield raw palette indices, gray PNGs yield the
// gray value as the class id.
Mask read_mask_png(const std::filesystem::path& path);

void write_image_png(const std::filesystem::path& path, const Image& img);

// Single-channel indexed PNG; entry 255 renders white (ignore).
void write_mask_png(const std::filesystem::path& path, const Mask& mask,
                    const std::vector<Rgb>& palette);

}  // namespace dualseg
