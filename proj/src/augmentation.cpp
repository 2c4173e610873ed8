#include "dualseg/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dualseg/rng.hpp"

namespace dualseg {

GeometryRecord draw_geometry(int in_h, int in_w, int target_h, int target_w, std::uint64_t seed) {
  Rng rng(seed);
  GeometryRecord geo;
  geo.scale = rng.uniform(0.5, 2.0);
  geo.out_h = target_h;
  geo.out_w = target_w;
  const int rh = std::max(1, static_cast<int>(std::lround(in_h * geo.scale)));
  const int rw = std::max(1, static_cast<int>(std::lround(in_w * geo.scale)));
  const int canvas_h = std::max(rh, target_h);
  const int canvas_w = std::max(rw, target_w);
  geo.crop_row = rng.uniform_int(0, canvas_h - target_h);
  geo.crop_col = rng.uniform_int(0, canvas_w - target_w);
  geo.flipped = rng.bernoulli(0.5);
  return geo;
}

WeakView apply_geometry(const Sample& sample, const GeometryRecord& geo) {
  const int rh = std::max(1, static_cast<int>(std::lround(sample.image.height * geo.scale)));
  const int rw = std::max(1, static_cast<int>(std::lround(sample.image.width * geo.scale)));

  Image resized = (rh == sample.image.height && rw == sample.image.width)
                      ? sample.image
                      : resize_bilinear(sample.image, rh, rw);
  std::optional<Mask> rmask;
  if (sample.mask)
    rmask = (rh == sample.mask->height && rw == sample.mask->width)
                ? *sample.mask
                : resize_nearest(*sample.mask, rh, rw);

  // pad (zeros / ignore) to fit the crop, never fail
  const int canvas_h = std::max(rh, geo.out_h);
  const int canvas_w = std::max(rw, geo.out_w);
  if (geo.crop_row < 0 || geo.crop_col < 0 || geo.crop_row + geo.out_h > canvas_h ||
      geo.crop_col + geo.out_w > canvas_w)
    throw std::invalid_argument("apply_geometry: crop outside padded canvas");

  WeakView view;
  view.geometry = geo;
  view.image = Image(resized.channels, geo.out_h, geo.out_w);
  for (int c = 0; c < resized.channels; ++c)
    for (int y = 0; y < geo.out_h; ++y)
      for (int x = 0; x < geo.out_w; ++x) {
        const int sy = geo.crop_row + y;
        const int sx = geo.crop_col + x;
        view.image.at(c, y, x) = (sy < rh && sx < rw) ? resized.at(c, sy, sx) : 0.0;
      }
  if (rmask) {
    Mask m(geo.out_h, geo.out_w, kIgnoreClass);
    for (int y = 0; y < geo.out_h; ++y)
      for (int x = 0; x < geo.out_w; ++x) {
        const int sy = geo.crop_row + y;
        const int sx = geo.crop_col + x;
        if (sy < rh && sx < rw) m.at(y, x) = rmask->at(sy, sx);
      }
    view.mask = std::move(m);
  }
  if (geo.flipped) {
    view.image = hflip(view.image);
    if (view.mask) view.mask = hflip(*view.mask);
  }
  return view;
}

WeakView weak_view(const Sample& sample, int target_h, int target_w, std::uint64_t seed) {
  return apply_geometry(sample, draw_geometry(sample.image.height, sample.image.width, target_h,
                                              target_w, seed));
}

namespace {

void rgb_to_hsv(real r, real g, real b, real& h, real& s, real& v) {
  const real mx = std::max({r, g, b});
  const real mn = std::min({r, g, b});
  v = mx;
  const real d = mx - mn;
  s = mx > 0 ? d / mx : 0.0;
  if (d <= 0) {
    h = 0.0;
    return;
  }
  if (mx == r)
    h = std::fmod((g - b) / d, 6.0);
  else if (mx == g)
    h = (b - r) / d + 2.0;
  else
    h = (r - g) / d + 4.0;
  h /= 6.0;
  if (h < 0) h += 1.0;
}

void hsv_to_rgb_px(real h, real s, real v, real& r, real& g, real& b) {
  h = h - std::floor(h);
  const real c = v * s;
  const real hp = h * 6.0;
  const real x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  r = g = b = 0.0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const real m = v - c;
  r += m;
  g += m;
  b += m;
}

}  // namespace

Image strong_view(const Image& weak_image, const StrongAugParams& p, std::uint64_t seed) {
  Rng rng(seed);
  Image img = weak_image;

  // fixed draw order keeps the chain reproducible per seed
  const real f_bri = rng.uniform(1.0 - p.brightness, 1.0 + p.brightness);
  const real f_con = rng.uniform(1.0 - p.contrast, 1.0 + p.contrast);
  const real f_sat = rng.uniform(1.0 - p.saturation, 1.0 + p.saturation);
  const real d_hue = rng.uniform(-p.hue, p.hue);
  const bool to_gray = rng.bernoulli(p.grayscale_prob);
  const bool do_blur = rng.bernoulli(p.blur_prob);
  const real sigma = rng.uniform(p.blur_sigma_min, p.blur_sigma_max);

  if (f_bri != 1.0)
    for (auto& v : img.data) v *= f_bri;

  if (f_con != 1.0) {
    const auto l = luma(img);
    real mean = 0.0;
    for (real v : l) mean += v;
    mean /= static_cast<real>(l.size());
    for (auto& v : img.data) v = mean + (v - mean) * f_con;
  }

  if (f_sat != 1.0 && img.channels == 3) {
    const auto l = luma(img);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const real g = l[static_cast<size_t>(y) * img.width + x];
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = g + (img.at(c, y, x) - g) * f_sat;
      }
  }

  if (d_hue != 0.0 && img.channels == 3) {
    clip01(img);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        real h, s, v;
        rgb_to_hsv(img.at(0, y, x), img.at(1, y, x), img.at(2, y, x), h, s, v);
        real r, g, b;
        hsv_to_rgb_px(h + d_hue, s, v, r, g, b);
        img.at(0, y, x) = r;
        img.at(1, y, x) = g;
        img.at(2, y, x) = b;
      }
  }

  if (to_gray && img.channels == 3) {
    const auto l = luma(img);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
          img.at(c, y, x) = l[static_cast<size_t>(y) * img.width + x];
  }

  if (do_blur) img = gaussian_blur(img, sigma);

  clip01(img);
  return img;
}

ViewBundle make_view_bundle(const Sample& sample, int target_h, int target_w,
                            const StrongAugParams& params, std::uint64_t seed) {
  WeakView weak = weak_view(sample, target_h, target_w, derive_seed(seed, "weak"));
  ViewBundle bundle;
  bundle.strong1 = strong_view(weak.image, params, derive_seed(seed, "strong1"));
  bundle.strong2 = strong_view(weak.image, params, derive_seed(seed, "strong2"));
  bundle.weak = std::move(weak.image);
  bundle.geometry = weak.geometry;
  bundle.mask = std::move(weak.mask);
  return bundle;
}

std::vector<CutMixBox> draw_cutmix_boxes(int batch, int h, int w, std::uint64_t seed) {
  std::vector<CutMixBox> boxes;
  if (batch < 2) return boxes;  // recorded no-op
  Rng rng(seed);
  for (int i = 0; i < batch; ++i) {
    CutMixBox box;
    box.item = i;
    box.donor = rng.uniform_int(0, batch - 2);
    if (box.donor >= i) ++box.donor;
    const real area_frac = rng.uniform(0.1, 0.5);
    const real aspect = rng.uniform(0.5, 2.0);
    const real area = area_frac * h * w;
    box.h = std::clamp(static_cast<int>(std::lround(std::sqrt(area / aspect))), 1, h);
    box.w = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, w);
    box.row = rng.uniform_int(0, h - box.h);
    box.col = rng.uniform_int(0, w - box.w);
    boxes.push_back(box);
  }
  return boxes;
}

void apply_cutmix_images(std::vector<Image>& images, const std::vector<CutMixBox>& boxes) {
  if (boxes.empty()) return;
  const std::vector<Image> originals = images;  // donors read pre-mix content
  for (const auto& b : boxes) {
    Image& dst = images[b.item];
    const Image& src = originals[b.donor];
    for (int c = 0; c < dst.channels; ++c)
      for (int y = b.row; y < b.row + b.h; ++y)
        for (int x = b.col; x < b.col + b.w; ++x) dst.at(c, y, x) = src.at(c, y, x);
  }
}

void apply_cutmix_labels(std::vector<std::vector<int>>& pseudo,
                         std::vector<std::vector<real>>& confidence, int h, int w,
                         const std::vector<CutMixBox>& boxes) {
  if (boxes.empty()) return;
  const auto orig_pseudo = pseudo;
  const auto orig_conf = confidence;
  for (const auto& b : boxes) {
    for (int y = b.row; y < b.row + b.h; ++y)
      for (int x = b.col; x < b.col + b.w; ++x) {
        const size_t px = static_cast<size_t>(y) * w + x;
        pseudo[b.item][px] = orig_pseudo[b.donor][px];
        confidence[b.item][px] = orig_conf[b.donor][px];
      }
  }
}

CutMixResult cutmix_batch(const std::vector<Image>& strong_views,
                          const std::vector<std::vector<int>>& pseudo,
                          const std::vector<std::vector<real>>& confidence, std::uint64_t seed) {
  if (strong_views.size() != pseudo.size() || pseudo.size() != confidence.size())
    throw std::invalid_argument("cutmix_batch: batch size mismatch");
  CutMixResult out;
  out.images = strong_views;
  out.pseudo = pseudo;
  out.confidence = confidence;
  if (strong_views.empty()) return out;
  const int h = strong_views[0].height, w = strong_views[0].width;
  out.boxes = draw_cutmix_boxes(static_cast<int>(strong_views.size()), h, w, seed);
  apply_cutmix_images(out.images, out.boxes);
  apply_cutmix_labels(out.pseudo, out.confidence, h, w, out.boxes);
  return out;
}

}  // namespace dualseg
