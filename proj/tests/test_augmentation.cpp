#include <doctest.h>

#include <set>

#include "dualseg/augmentation.hpp"
#include "dualseg/rng.hpp"

using namespace dualseg;

namespace {

Sample make_sample(int side, std::uint64_t seed) {
  Corpus c = generate_synthetic(4, 3, side, seed);
  return c.samples[0];
}

std::uint64_t image_hash(const Image& img) {
  std::uint64_t h = 0;
  for (real v : img.data) h = mix64(h ^ static_cast<std::uint64_t>(v * 1e9));
  return h;
}

}  // namespace

TEST_CASE("augmentation: identity geometry reproduces the crop") {
  Sample s = make_sample(32, 1);
  GeometryRecord geo;
  geo.scale = 1.0;
  geo.crop_row = 0;
  geo.crop_col = 0;
  geo.flipped = false;
  geo.out_h = 32;
  geo.out_w = 32;
  WeakView v = apply_geometry(s, geo);
  CHECK(v.image.data == s.image.data);
  CHECK(v.mask->data == s.mask->data);
}

TEST_CASE("augmentation: flip involution on columns") {
  Sample s = make_sample(32, 2);
  GeometryRecord geo;
  geo.scale = 1.0;
  geo.out_h = 32;
  geo.out_w = 32;
  geo.flipped = false;
  WeakView plain = apply_geometry(s, geo);
  geo.flipped = true;
  WeakView flipped = apply_geometry(s, geo);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        CHECK(flipped.image.at(c, y, x) == plain.image.at(c, y, 31 - x));
}

TEST_CASE("augmentation: mask classes survive nearest-neighbor geometry") {
  Sample s = make_sample(40, 3);
  std::set<int> before(s.mask->data.begin(), s.mask->data.end());
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    WeakView v = weak_view(s, 32, 32, seed);
    for (int val : v.mask->data) {
      if (val == kIgnoreClass) continue;  // padding
      CHECK(before.count(val) == 1);
    }
    CHECK(v.image.height == 32);
    CHECK(v.geometry.scale >= 0.5);
    CHECK(v.geometry.scale <= 2.0);
  }
}

TEST_CASE("augmentation: weak view deterministic per seed") {
  Sample s = make_sample(40, 4);
  WeakView a = weak_view(s, 32, 32, 99);
  WeakView b = weak_view(s, 32, 32, 99);
  CHECK(a.image.data == b.image.data);
  CHECK(a.geometry.scale == b.geometry.scale);
  CHECK(a.geometry.crop_row == b.geometry.crop_row);
  WeakView c = weak_view(s, 32, 32, 100);
  CHECK(image_hash(a.image) != image_hash(c.image));
}

TEST_CASE("augmentation: padding covers any crop, never fails") {
  Sample s = make_sample(32, 5);
  // target much larger than the downscaled source
  GeometryRecord geo;
  geo.scale = 0.5;
  geo.out_h = 48;
  geo.out_w = 48;
  geo.crop_row = 0;
  geo.crop_col = 0;
  WeakView v = apply_geometry(s, geo);
  CHECK(v.image.height == 48);
  CHECK(v.mask->at(47, 47) == kIgnoreClass);  // padded region
  CHECK(v.image.at(0, 47, 47) == 0.0);
}

TEST_CASE("augmentation: strong view identity chain") {
  Sample s = make_sample(32, 6);
  StrongAugParams p;
  p.brightness = p.contrast = p.saturation = p.hue = 0.0;
  p.grayscale_prob = 0.0;
  p.blur_prob = 0.0;
  Image out = strong_view(s.image, p, 42);
  CHECK(out.data == s.image.data);
}

TEST_CASE("augmentation: forced grayscale equalizes channels") {
  Sample s = make_sample(32, 7);
  StrongAugParams p;
  p.brightness = p.contrast = p.saturation = p.hue = 0.0;
  p.grayscale_prob = 1.0;
  p.blur_prob = 0.0;
  Image out = strong_view(s.image, p, 43);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      CHECK(out.at(0, y, x) == doctest::Approx(out.at(1, y, x)).epsilon(1e-12));
      CHECK(out.at(1, y, x) == doctest::Approx(out.at(2, y, x)).epsilon(1e-12));
    }
}

TEST_CASE("augmentation: strong view is photometric and seed-sensitive") {
  Sample s = make_sample(32, 8);
  StrongAugParams p;  // defaults
  Image a = strong_view(s.image, p, 1);
  Image b = strong_view(s.image, p, 1);
  Image c = strong_view(s.image, p, 2);
  CHECK(a.data == b.data);
  CHECK(image_hash(a) != image_hash(c));
  CHECK(a.height == s.image.height);
  CHECK(a.width == s.image.width);
  for (real v : a.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("augmentation: cutmix boxes respect batch, empty and full boxes work") {
  CHECK(draw_cutmix_boxes(1, 16, 16, 0).empty());  // recorded no-op

  std::vector<Image> imgs;
  for (int i = 0; i < 2; ++i) {
    Image img(1, 4, 4);
    std::fill(img.data.begin(), img.data.end(), static_cast<real>(i));
    imgs.push_back(img);
  }
  // zero-area box: nothing changes
  std::vector<Image> zero = imgs;
  apply_cutmix_images(zero, {{0, 1, 0, 0, 0, 0}});
  CHECK(zero[0].data == imgs[0].data);
  // full box: item becomes its donor entirely
  std::vector<Image> full = imgs;
  apply_cutmix_images(full, {{0, 1, 0, 0, 4, 4}});
  CHECK(full[0].data == imgs[1].data);
  CHECK(full[1].data == imgs[1].data);  // untouched
}

TEST_CASE("augmentation: cutmix pixel-wise oracle on an 8x8 batch") {
  const int B = 3, S = 8;
  std::vector<Image> imgs;
  std::vector<std::vector<int>> pseudo(B);
  std::vector<std::vector<real>> conf(B);
  Rng rng(77);
  for (int i = 0; i < B; ++i) {
    Image img(2, S, S);
    for (auto& v : img.data) v = rng.uniform();
    imgs.push_back(img);
    for (int p = 0; p < S * S; ++p) {
      pseudo[i].push_back(rng.uniform_int(0, 3));
      conf[i].push_back(rng.uniform());
    }
  }

  CutMixResult out = cutmix_batch(imgs, pseudo, conf, 123);
  REQUIRE(out.boxes.size() == B);
  for (const auto& box : out.boxes) {
    CHECK(box.donor != box.item);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        const bool inside =
            y >= box.row && y < box.row + box.h && x >= box.col && x < box.col + box.w;
        const int src = inside ? box.donor : box.item;
        const int px = y * S + x;
        CHECK(out.pseudo[box.item][px] == pseudo[src][px]);
        CHECK(out.confidence[box.item][px] == conf[src][px]);
        for (int c = 0; c < 2; ++c)
          CHECK(out.images[box.item].at(c, y, x) == imgs[src].at(c, y, x));
      }
  }
}

TEST_CASE("augmentation: view bundle keeps all views aligned") {
  Sample s = make_sample(48, 9);
  StrongAugParams p;
  ViewBundle b = make_view_bundle(s, 32, 32, p, 555);
  CHECK(b.weak.height == 32);
  CHECK(b.strong1.height == 32);
  CHECK(b.strong2.height == 32);
  CHECK(b.mask->height == 32);
  CHECK(image_hash(b.strong1) != image_hash(b.strong2));

  ViewBundle b2 = make_view_bundle(s, 32, 32, p, 555);
  CHECK(b.weak.data == b2.weak.data);
  CHECK(b.strong1.data == b2.strong1.data);
}
