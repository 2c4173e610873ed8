#include "dualseg/student.hpp"

#include <cmath>
#include <stdexcept>

#include "dualseg/checkpoint.hpp"
#include "dualseg/rng.hpp"

namespace dualseg {

namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

// [B*h*w, C*ps*ps] patch matrix; images are zero-padded to patch multiples
Tensor im2col(const ImageBatch& batch, int ps) {
  const int h = ceil_div(batch.height, ps);
  const int w = ceil_div(batch.width, ps);
  const int C = batch.channels;
  const int cols = C * ps * ps;
  std::vector<real> data(static_cast<size_t>(batch.batch) * h * w * cols, 0.0);
  for (int b = 0; b < batch.batch; ++b) {
    const size_t img_off = static_cast<size_t>(b) * C * batch.height * batch.width;
    for (int ty = 0; ty < h; ++ty)
      for (int tx = 0; tx < w; ++tx) {
        real* row = data.data() +
                    ((static_cast<size_t>(b) * h + ty) * w + tx) * cols;
        for (int c = 0; c < C; ++c)
          for (int py = 0; py < ps; ++py) {
            const int y = ty * ps + py;
            if (y >= batch.height) continue;
            for (int px = 0; px < ps; ++px) {
              const int x = tx * ps + px;
              if (x >= batch.width) continue;
              row[(static_cast<size_t>(c) * ps + py) * ps + px] =
                  batch.data[img_off + (static_cast<size_t>(c) * batch.height + y) * batch.width +
                             x];
            }
          }
      }
  }
  return Tensor::from(batch.batch * h * w, cols, std::move(data));
}

}  // namespace

VitEncoder::VitEncoder(const BackboneSpec& spec, int train_h, int train_w, std::uint64_t seed)
    : spec_(spec),
      patch_proj_(spec.channel_count * spec.patch_size * spec.patch_size, spec.embed_dim,
                  derive_seed(seed, "patch")),
      norm_(spec.embed_dim) {
  pos_h_ = ceil_div(train_h, spec.patch_size);
  pos_w_ = ceil_div(train_w, spec.patch_size);
  pos_ = Tensor::param(pos_h_ * pos_w_, spec.embed_dim,
                       trunc_normal(pos_h_ * pos_w_ * spec.embed_dim, 0.02,
                                    derive_seed(seed, "pos")));
  blocks_.reserve(spec.depth);
  for (int i = 0; i < spec.depth; ++i)
    blocks_.emplace_back(spec.embed_dim, spec.heads, spec.mlp_ratio * spec.embed_dim,
                         derive_seed(seed, "block", i));
  if (spec.variant == BackboneVariant::vitb16_checkpoint) {
    if (spec.checkpoint_path.empty())
      throw std::runtime_error("backbone: vitb16_checkpoint requires checkpoint_path");
    load_store(TensorStore::load(spec.checkpoint_path));
  }
}

void VitEncoder::load_store(const TensorStore& store) {
  std::vector<NamedParam> params;
  collect(params, "");
  for (auto& p : params) {
    const std::string name = p.name.substr(1);  // drop the leading '.'
    const StoredTensor& src = store.get(name);
    if (name == "pos" && (src.rows != p.tensor.rows() || src.cols != p.tensor.cols())) {
      // resize a square positional grid to the configured token grid
      if (src.cols != p.tensor.cols())
        throw std::runtime_error("backbone: pos embedding dim mismatch (" +
                                 std::to_string(src.cols) + " vs " +
                                 std::to_string(p.tensor.cols()) + ")");
      const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(src.rows))));
      if (side * side != src.rows)
        throw std::runtime_error("backbone: cannot infer grid for pos embedding of " +
                                 std::to_string(src.rows) + " tokens");
      Tensor raw = Tensor::from(src.rows, src.cols, src.data);
      Tensor resized = row_interp(raw, InterpPlan::grid_resize(side, side, pos_h_, pos_w_), 1);
      p.tensor.value_mut() = resized.value();
      continue;
    }
    if (src.rows != p.tensor.rows() || src.cols != p.tensor.cols())
      throw std::runtime_error("backbone: shape mismatch for '" + name + "': checkpoint " +
                               std::to_string(src.rows) + "x" + std::to_string(src.cols) +
                               " vs model " + std::to_string(p.tensor.rows()) + "x" +
                               std::to_string(p.tensor.cols()));
    p.tensor.value_mut() = src.data;
  }
}

FeatureMap VitEncoder::forward(const ImageBatch& images, bool train) const {
  (void)train;  // the encoder itself is deterministic; perturbation is a separate op
  if (images.channels != spec_.channel_count)
    throw std::invalid_argument("encode: image has " + std::to_string(images.channels) +
                                " channels, backbone expects " +
                                std::to_string(spec_.channel_count));
  const int ps = spec_.patch_size;
  const int h = ceil_div(images.height, ps);
  const int w = ceil_div(images.width, ps);

  Tensor tokens = patch_proj_.forward(im2col(images, ps));

  Tensor pos = pos_;
  if (h != pos_h_ || w != pos_w_)
    pos = row_interp(pos_, InterpPlan::grid_resize(pos_h_, pos_w_, h, w), 1);
  std::vector<int> tile(static_cast<size_t>(images.batch) * h * w);
  for (int b = 0; b < images.batch; ++b)
    for (int i = 0; i < h * w; ++i) tile[static_cast<size_t>(b) * h * w + i] = i;
  tokens = add(tokens, gather_rows(pos, std::move(tile)));

  for (const auto& block : blocks_) tokens = block.forward(tokens, images.batch);
  tokens = norm_.forward(tokens);

  FeatureMap fm;
  fm.tokens = std::move(tokens);
  fm.batch = images.batch;
  fm.h = h;
  fm.w = w;
  fm.stride = ps;
  return fm;
}

void VitEncoder::collect(std::vector<NamedParam>& out, const std::string& prefix) const {
  patch_proj_.collect(out, prefix + ".embed");
  out.push_back({prefix + ".pos", pos_});
  for (size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].collect(out, prefix + ".blocks." + std::to_string(i));
  norm_.collect(out, prefix + ".norm");
}

FeatureMap encode(const VitEncoder& backbone, const ImageBatch& images, bool train) {
  return backbone.forward(images, train);
}

Tensor decode(const Tensor& queries, const FeatureMap& features, int out_h, int out_w) {
  if (queries.cols() != features.dim())
    throw std::invalid_argument("decode: query dim " + std::to_string(queries.cols()) +
                                " != feature dim " + std::to_string(features.dim()));
  Tensor low = matmul(features.tokens, transpose(queries));  // [B*h*w, K]
  const InterpPlan plan =
      InterpPlan::token_to_pixel(features.h, features.w, out_h, out_w, features.stride);
  return row_interp(low, plan, features.batch);
}

FeatureMap feature_perturb(const FeatureMap& features, real rate, std::uint64_t seed, bool train) {
  FeatureMap out = features;
  out.tokens = dropout(features.tokens, rate, seed, train);
  return out;
}

Student Student::with_explicit_guidance(const BackboneSpec& spec, int train_h, int train_w,
                                        PrototypeMatrix prototypes, std::uint64_t seed) {
  Student s;
  s.encoder_ = std::make_shared<VitEncoder>(spec, train_h, train_w, derive_seed(seed, "enc"));
  s.kind_ = QueryKind::explicit_projected;
  s.class_count_ = prototypes.values.rows();
  s.projection_ = Linear(prototypes.text_dim, spec.embed_dim, derive_seed(seed, "phi"));
  s.prototypes_ = std::move(prototypes);
  return s;
}

Student Student::with_implicit_guidance(const BackboneSpec& spec, int train_h, int train_w,
                                        int class_count, std::uint64_t seed, real init_std) {
  Student s;
  s.encoder_ = std::make_shared<VitEncoder>(spec, train_h, train_w, derive_seed(seed, "enc"));
  s.kind_ = QueryKind::implicit_learnable;
  s.class_count_ = class_count;
  s.queries_ = init_learnable_queries(class_count, spec.embed_dim, derive_seed(seed, "q")).values;
  if (init_std != 0.02) {
    const real factor = init_std / 0.02;
    for (auto& v : s.queries_.value_mut()) v *= factor;
  }
  return s;
}

FeatureMap Student::encode_images(const ImageBatch& images, bool train) const {
  return encoder_->forward(images, train);
}

Tensor Student::current_queries() const {
  if (kind_ == QueryKind::explicit_projected)
    return project_prototypes(*prototypes_, *projection_).values;
  return queries_;
}

Tensor Student::decode_features(const FeatureMap& features, int out_h, int out_w) const {
  return decode(current_queries(), features, out_h, out_w);
}

StudentOutput Student::output_from_logits(Tensor logits, int batch, int h, int w) const {
  StudentOutput out;
  out.batch = batch;
  out.height = h;
  out.width = w;
  out.classes = class_count_;
  out.probs = softmax_rows(logits);
  out.logits = std::move(logits);
  rows_argmax(out.probs, out.pseudo, out.confidence);
  return out;
}

StudentOutput Student::forward(const ImageBatch& images, bool train) const {
  FeatureMap fm = encode_images(images, train);
  Tensor logits = decode_features(fm, images.height, images.width);
  return output_from_logits(std::move(logits), images.batch, images.height, images.width);
}

std::vector<NamedParam> Student::all_params(const std::string& prefix) const {
  std::vector<NamedParam> out;
  encoder_->collect(out, prefix);
  if (kind_ == QueryKind::explicit_projected)
    projection_->collect(out, prefix + ".phi");
  else
    out.push_back({prefix + ".queries", queries_});
  return out;
}

std::vector<NamedParam> Student::trainable_params(const std::string& prefix) const {
  std::vector<NamedParam> all = all_params(prefix);
  if (encoder_->spec().freeze.empty()) return all;
  std::vector<NamedParam> out;
  for (auto& p : all) {
    const std::string local = p.name.substr(prefix.size() + 1);  // strip "<prefix>."
    bool frozen = false;
    for (const auto& f : encoder_->spec().freeze)
      if (local.rfind(f, 0) == 0) {
        frozen = true;
        break;
      }
    if (!frozen) out.push_back(std::move(p));
  }
  return out;
}

StudentOutput forward_student(const Student& student, const ImageBatch& images) {
  return student.forward(images, false);
}

}  // namespace dualseg
