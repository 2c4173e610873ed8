#include "dualseg/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <stdexcept>

namespace dualseg {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void fail(const std::filesystem::path& path, const char* what) {
  throw std::runtime_error("png: " + std::string(what) + ": " + path.string());
}

struct PngRead {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngRead() {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
  }
};

struct PngWrite {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWrite() {
    if (png) png_destroy_write_struct(&png, &info);
  }
};

void read_rows(const std::filesystem::path& path, int transforms, PngRead& ctx,
               std::vector<std::vector<png_byte>>& rows, int& width, int& height,
               int& color_type, int& channels) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) fail(path, "cannot open");
  ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.png || !ctx.info) fail(path, "init failed");
  if (setjmp(png_jmpbuf(ctx.png))) fail(path, "decode error");
  png_init_io(ctx.png, fp.get());
  png_read_info(ctx.png, ctx.info);

  width = static_cast<int>(png_get_image_width(ctx.png, ctx.info));
  height = static_cast<int>(png_get_image_height(ctx.png, ctx.info));
  color_type = png_get_color_type(ctx.png, ctx.info);
  int bit_depth = png_get_bit_depth(ctx.png, ctx.info);

  if (transforms & PNG_TRANSFORM_EXPAND) {
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(ctx.png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(ctx.png);
  }
  if (bit_depth == 16) png_set_strip_16(ctx.png);
  if (bit_depth < 8) png_set_packing(ctx.png);
  if (transforms & PNG_TRANSFORM_STRIP_ALPHA) png_set_strip_alpha(ctx.png);
  png_read_update_info(ctx.png, ctx.info);

  color_type = png_get_color_type(ctx.png, ctx.info);
  channels = png_get_channels(ctx.png, ctx.info);
  const size_t rowbytes = png_get_rowbytes(ctx.png, ctx.info);
  rows.assign(height, std::vector<png_byte>(rowbytes));
  std::vector<png_bytep> row_ptrs(height);
  for (int y = 0; y < height; ++y) row_ptrs[y] = rows[y].data();
  png_read_image(ctx.png, row_ptrs.data());
  png_read_end(ctx.png, nullptr);
}

}  // namespace

Image read_image_png(const std::filesystem::path& path) {
  PngRead ctx;
  std::vector<std::vector<png_byte>> rows;
  int w, h, color_type, channels;
  read_rows(path, PNG_TRANSFORM_EXPAND | PNG_TRANSFORM_STRIP_ALPHA, ctx, rows, w, h, color_type,
            channels);
  if (channels != 1 && channels != 3) fail(path, "unsupported channel count");
  Image img(channels, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(c, y, x) = rows[y][static_cast<size_t>(x) * channels + c] / 255.0;
  return img;
}

Mask read_mask_png(const std::filesystem::path& path) {
  PngRead ctx;
  std::vector<std::vector<png_byte>> rows;
  int w, h, color_type, channels;
  read_rows(path, 0, ctx, rows, w, h, color_type, channels);
  if (channels != 1) fail(path, "mask must be single-channel (indexed or gray)");
  Mask mask(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) mask.at(y, x) = rows[y][x];
  return mask;
}

void write_image_png(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("write_image_png: 1 or 3 channels required");
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) fail(path, "cannot open for write");
  PngWrite ctx;
  ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.png || !ctx.info) fail(path, "init failed");
  if (setjmp(png_jmpbuf(ctx.png))) fail(path, "encode error");
  png_init_io(ctx.png, fp.get());
  const int color_type = img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(ctx.png, ctx.info, img.width, img.height, 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(ctx.png, ctx.info);

  std::vector<png_byte> row(static_cast<size_t>(img.width) * img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        real v = std::min(std::max(img.at(c, y, x), 0.0), 1.0);
        row[static_cast<size_t>(x) * img.channels + c] =
            static_cast<png_byte>(v * 255.0 + 0.5);
      }
    png_write_row(ctx.png, row.data());
  }
  png_write_end(ctx.png, nullptr);
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask,
                    const std::vector<Rgb>& palette) {
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) fail(path, "cannot open for write");
  PngWrite ctx;
  ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.png || !ctx.info) fail(path, "init failed");
  if (setjmp(png_jmpbuf(ctx.png))) fail(path, "encode error");
  png_init_io(ctx.png, fp.get());
  png_set_IHDR(ctx.png, ctx.info, mask.width, mask.height, 8, PNG_COLOR_TYPE_PALETTE,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);

  png_color plte[256];
  std::memset(plte, 0, sizeof(plte));
  for (size_t i = 0; i < palette.size() && i < 255; ++i) {
    plte[i].red = palette[i][0];
    plte[i].green = palette[i][1];
    plte[i].blue = palette[i][2];
  }
  plte[kIgnoreClass] = {255, 255, 255};
  png_set_PLTE(ctx.png, ctx.info, plte, 256);
  png_write_info(ctx.png, ctx.info);

  std::vector<png_byte> row(mask.width);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const int v = mask.at(y, x);
      if (v < 0 || v > 255)
        throw std::invalid_argument("write_mask_png: class id out of byte range");
      row[x] = static_cast<png_byte>(v);
    }
    png_write_row(ctx.png, row.data());
  }
  png_write_end(ctx.png, nullptr);
}

}  // namespace dualseg
