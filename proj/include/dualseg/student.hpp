#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dualseg/checkpoint.hpp"
#include "dualseg/guidance.hpp"
#include "dualseg/image.hpp"
#include "dualseg/nn.hpp"
#include "dualseg/tensor.hpp"

namespace dualseg {

enum class BackboneVariant { tiny_desk, vitb16_checkpoint };

struct BackboneSpec {
  BackboneVariant variant = BackboneVariant::tiny_desk;
  int patch_size = 8;
  int embed_dim = 64;
  int depth = 4;
  int heads = 4;
  int mlp_ratio = 4;
  int channel_count = 3;
  std::string checkpoint_path;            // vitb16_checkpoint only
  std::vector<std::string> freeze;        // parameter-name prefixes excluded from updates

  static BackboneSpec tiny_global() { return {}; }
  static BackboneSpec tiny_local() {
    BackboneSpec s;
    s.embed_dim = 48;
    s.depth = 3;
    return s;
  }
  static BackboneSpec vitb16(const std::string& checkpoint) {
    BackboneSpec s;
    s.variant = BackboneVariant::vitb16_checkpoint;
    s.patch_size = 16;
    s.embed_dim = 768;
    s.depth = 12;
    s.heads = 12;
    s.checkpoint_path = checkpoint;
    return s;
  }
};

// Dense patch-token features at stride patch_size; h = ceil(H/ps).
struct FeatureMap {
  Tensor tokens;  // [batch*h*w, dim]
  int batch = 0;
  int h = 0;
  int w = 0;
  int stride = 0;

  int dim() const { return tokens.cols(); }
};

struct StudentOutput {
  Tensor logits;  // [batch*H*W, K]
  Tensor probs;   // softmax over K per pixel
  std::vector<real> confidence;  // max_k probs
  std::vector<int> pseudo;       // argmax_k probs, ties -> lowest index
  int batch = 0, height = 0, width = 0, classes = 0;
};

class VitEncoder {
 public:
  VitEncoder(const BackboneSpec& spec, int train_h, int train_w, std::uint64_t seed);

  FeatureMap forward(const ImageBatch& images, bool train) const;
  void collect(std::vector<NamedParam>& out, const std::string& prefix) const;
  const BackboneSpec& spec() const { return spec_; }

  void load_store(const TensorStore& store);

 private:
  BackboneSpec spec_;
  Linear patch_proj_;
  Tensor pos_;  // [pos_h*pos_w, dim]
  int pos_h_ = 0, pos_w_ = 0;
  std::vector<TransformerBlock> blocks_;
  LayerNormLayer norm_;
};

FeatureMap encode(const VitEncoder& backbone, const ImageBatch& images, bool train = false);

// logit[k, pixel] = <query_k, feature_pixel> at token resolution, then
// bilinear upsample to (out_h, out_w).
Tensor decode(const Tensor& queries, const FeatureMap& features, int out_h, int out_w);

// channel-element dropout scaled by 1/(1-rate); identity in eval mode
FeatureMap feature_perturb(const FeatureMap& features, real rate, std::uint64_t seed,
                           bool train = true);

// One student: encoder + its semantic guidance + the shared decode form.
class Student {
 public:
  static Student with_explicit_guidance(const BackboneSpec& spec, int train_h, int train_w,
                                        PrototypeMatrix prototypes, std::uint64_t seed);
  // init_std 0.02 is the learnable-query embedding; a plain-head init
  // (1/sqrt(dim)) realizes the guidance-off ablation arm.
  static Student with_implicit_guidance(const BackboneSpec& spec, int train_h, int train_w,
                                        int class_count, std::uint64_t seed, real init_std = 0.02);

  FeatureMap encode_images(const ImageBatch& images, bool train) const;
  Tensor decode_features(const FeatureMap& features, int out_h, int out_w) const;
  StudentOutput output_from_logits(Tensor logits, int batch, int h, int w) const;
  StudentOutput forward(const ImageBatch& images, bool train) const;

  Tensor current_queries() const;  // phi(prototypes) or Q
  QueryKind query_kind() const { return kind_; }
  const PrototypeMatrix* prototypes() const { return prototypes_ ? &*prototypes_ : nullptr; }
  const VitEncoder& encoder() const { return *encoder_; }

  // trainable parameters honoring the backbone freeze list
  std::vector<NamedParam> trainable_params(const std::string& prefix) const;
  // every parameter, frozen included (snapshots)
  std::vector<NamedParam> all_params(const std::string& prefix) const;

 private:
  std::shared_ptr<VitEncoder> encoder_;
  QueryKind kind_ = QueryKind::implicit_learnable;
  std::optional<PrototypeMatrix> prototypes_;
  std::optional<Linear> projection_;  // explicit guidance
  Tensor queries_;                    // implicit guidance
  int class_count_ = 0;
};

StudentOutput forward_student(const Student& student, const ImageBatch& images);

}  // namespace dualseg
