#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "dualseg/corpus.hpp"
#include "dualseg/image.hpp"

namespace dualseg {

struct GeometryRecord {
  real scale = 1.0;              // uniform resize factor
  int crop_row = 0, crop_col = 0;  // origin within the resized (padded) canvas
  bool flipped = false;
  int out_h = 0, out_w = 0;
};

// Photometric chain magnitudes; zeros make strong_view the identity.
struct StrongAugParams {
  real brightness = 0.5;
  real contrast = 0.5;
  real saturation = 0.5;
  real hue = 0.25;  // fraction of the hue circle
  real grayscale_prob = 0.2;
  real blur_prob = 0.5;
  real blur_sigma_min = 0.1;
  real blur_sigma_max = 2.0;
};

struct WeakView {
  Image image;
  GeometryRecord geometry;
  std::optional<Mask> mask;  // transformed alongside when the sample has one
};

struct ViewBundle {
  Image weak;
  Image strong1;
  Image strong2;
  GeometryRecord geometry;
  std::optional<Mask> mask;
};

struct CutMixBox {
  int item = 0;   // receiver index within the batch
  int donor = 0;  // source index
  int row = 0, col = 0, h = 0, w = 0;
};

// scale in [0.5, 2.0], crop/pad to target, horizontal flip with p=0.5.
GeometryRecord draw_geometry(int in_h, int in_w, int target_h, int target_w, std::uint64_t seed);
WeakView apply_geometry(const Sample& sample, const GeometryRecord& geo);
WeakView weak_view(const Sample& sample, int target_h, int target_w, std::uint64_t seed);

// Photometric-only: output pixel (i,j) corresponds to input pixel (i,j).
Image strong_view(const Image& weak_image, const StrongAugParams& params, std::uint64_t seed);

ViewBundle make_view_bundle(const Sample& sample, int target_h, int target_w,
                            const StrongAugParams& params, std::uint64_t seed);

// Box draw and application are split so the same boxes can mix images at
// batch assembly and pseudo-label/confidence maps later in the step.
std::vector<CutMixBox> draw_cutmix_boxes(int batch, int h, int w, std::uint64_t seed);
void apply_cutmix_images(std::vector<Image>& images, const std::vector<CutMixBox>& boxes);
void apply_cutmix_labels(std::vector<std::vector<int>>& pseudo,
                         std::vector<std::vector<real>>& confidence, int h, int w,
                         const std::vector<CutMixBox>& boxes);

struct CutMixResult {
  std::vector<Image> images;
  std::vector<std::vector<int>> pseudo;
  std::vector<std::vector<real>> confidence;
  std::vector<CutMixBox> boxes;
};
// One-call form: mixes views, pseudo-labels and confidences with identical
// boxes. A batch of one is a recorded no-op.
CutMixResult cutmix_batch(const std::vector<Image>& strong_views,
                          const std::vector<std::vector<int>>& pseudo,
                          const std::vector<std::vector<real>>& confidence, std::uint64_t seed);

}  // namespace dualseg
