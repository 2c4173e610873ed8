#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "dualseg/checkpoint.hpp"
#include "dualseg/corpus.hpp"
#include "dualseg/objectives.hpp"
#include "dualseg/student.hpp"
#include "test_utils.hpp"

using namespace dualseg;
using namespace dualseg::testutil;

namespace {

BackboneSpec tiny_spec(int dim = 16, int depth = 1, int heads = 2) {
  BackboneSpec s;
  s.patch_size = 8;
  s.embed_dim = dim;
  s.depth = depth;
  s.heads = heads;
  return s;
}

ImageBatch random_batch(int b, int h, int w, std::uint64_t seed) {
  ImageBatch batch(b, 3, h, w);
  Rng rng(seed);
  for (auto& v : batch.data) v = rng.uniform();
  return batch;
}

}  // namespace

TEST_CASE("student: encode shape arithmetic and padding contract") {
  VitEncoder enc(tiny_spec(), 64, 64, 1);
  FeatureMap fm = encode(enc, random_batch(2, 64, 64, 2));
  CHECK(fm.h == 8);
  CHECK(fm.w == 8);
  CHECK(fm.stride == 8);
  CHECK(fm.tokens.rows() == 2 * 64);
  CHECK(fm.tokens.cols() == 16);

  // 60x60 input pads to the same token grid as native 64x64
  FeatureMap fm2 = encode(enc, random_batch(1, 60, 60, 3));
  CHECK(fm2.h == 8);
  CHECK(fm2.w == 8);

  ImageBatch wrong(1, 1, 64, 64);
  CHECK_THROWS(encode(enc, wrong));
}

TEST_CASE("student: encode deterministic in eval mode") {
  VitEncoder enc(tiny_spec(24, 2), 32, 32, 5);
  ImageBatch b = random_batch(1, 32, 32, 7);
  NoGradGuard ng;
  FeatureMap a = encode(enc, b, false);
  FeatureMap c = encode(enc, b, false);
  CHECK(a.tokens.value() == c.tokens.value());
}

TEST_CASE("student: decode matches a triple-loop oracle and scales linearly") {
  const int K = 4, d = 5, h = 3, w = 3;
  FeatureMap fm;
  fm.tokens = random_tensor(h * w, d, 10);
  fm.batch = 1;
  fm.h = h;
  fm.w = w;
  fm.stride = 1;  // token grid == pixel grid: upsample is identity
  Tensor queries = random_tensor(K, d, 11);

  Tensor logits = decode(queries, fm, h, w);
  for (int k = 0; k < K; ++k)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        real ref = 0.0;
        for (int c = 0; c < d; ++c) ref += queries(k, c) * fm.tokens(i * w + j, c);
        CHECK(logits(i * w + j, k) == doctest::Approx(ref).epsilon(1e-9));
      }

  Tensor scaled = decode(scale(queries, 3.5), fm, h, w);
  std::vector<int> arg_a, arg_b;
  std::vector<real> max_a, max_b;
  rows_argmax(logits, arg_a, max_a);
  rows_argmax(scaled, arg_b, max_b);
  CHECK(arg_a == arg_b);  // positive scaling preserves the argmax
  for (int i = 0; i < scaled.size(); ++i)
    CHECK(scaled.value()[i] == doctest::Approx(3.5 * logits.value()[i]).epsilon(1e-9));

  CHECK_THROWS(decode(random_tensor(K, d + 1, 12), fm, h, w));
}

TEST_CASE("student: decode orthonormal case") {
  FeatureMap fm;
  fm.tokens = Tensor::from(1, 2, {1.0, 0.0});
  fm.batch = 1;
  fm.h = 1;
  fm.w = 1;
  fm.stride = 1;
  Tensor q = Tensor::from(2, 2, {1.0, 0.0, 0.0, 1.0});
  Tensor logits = decode(q, fm, 1, 1);
  CHECK(logits(0, 0) == doctest::Approx(1.0));
  CHECK(logits(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("student: feature perturbation contracts") {
  FeatureMap fm;
  fm.tokens = random_tensor(12, 8, 20);
  fm.batch = 1;
  fm.h = 3;
  fm.w = 4;
  fm.stride = 8;

  CHECK(feature_perturb(fm, 0.0, 9, true).tokens.value() == fm.tokens.value());
  CHECK(feature_perturb(fm, 0.5, 9, false).tokens.value() == fm.tokens.value());  // eval mode
  FeatureMap p = feature_perturb(fm, 0.5, 9, true);
  CHECK(p.tokens.value() != fm.tokens.value());
  CHECK_THROWS(feature_perturb(fm, 1.0, 9, true));
}

TEST_CASE("student: forward output invariants") {
  Corpus corpus = generate_synthetic(4, 3, 32, 30);
  TextEncoder enc = make_stub_text_encoder(32);
  ConceptSet cs = ConceptSet::defaults_for(corpus.class_names, "a photo of {}.");
  Student global = Student::with_explicit_guidance(tiny_spec(), 32, 32,
                                                   encode_concepts(cs, enc), 100);
  ImageBatch batch(1, 3, 32, 32);
  batch.set(0, corpus.samples[0].image);
  StudentOutput out = forward_student(global, batch);
  CHECK(out.classes == 3);
  CHECK(out.logits.rows() == 32 * 32);

  // probs re-softmaxed from logits match stored probs
  NoGradGuard ng;
  Tensor re = softmax_rows(out.logits);
  for (int i = 0; i < re.size(); ++i)
    CHECK(re.value()[i] == doctest::Approx(out.probs.value()[i]).epsilon(1e-9));

  for (int r = 0; r < out.probs.rows(); ++r) {
    real sum = 0.0;
    for (int k = 0; k < 3; ++k) sum += out.probs(r, k);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(out.confidence[r] == doctest::Approx(out.probs(r, out.pseudo[r])));
    CHECK(out.confidence[r] >= 1.0 / 3 - 1e-12);
  }
}

TEST_CASE("student: uniform logits give 1/K confidence and lowest-index pseudo") {
  Student s = Student::with_implicit_guidance(tiny_spec(), 32, 32, 4, 7);
  // zero queries force identical (zero) logits for every class
  std::fill(s.current_queries().value_mut().begin(), s.current_queries().value_mut().end(), 0.0);
  StudentOutput out = s.forward(random_batch(1, 32, 32, 8), false);
  for (int r = 0; r < out.probs.rows(); ++r) {
    CHECK(out.confidence[r] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(out.pseudo[r] == 0);
  }
}

TEST_CASE("student: heterogeneity - no parameter sharing between students") {
  Corpus corpus = generate_synthetic(4, 3, 32, 40);
  Student a = Student::with_implicit_guidance(tiny_spec(16, 2), 32, 32, 3, 1);
  Student b = Student::with_implicit_guidance(tiny_spec(12, 1), 32, 32, 3, 2);

  auto pa = a.all_params("a");
  auto pb = b.all_params("b");
  for (const auto& x : pa)
    for (const auto& y : pb) CHECK(x.tensor.node().get() != y.tensor.node().get());

  // a step driven only by student a leaves b bit-identical
  std::vector<std::uint64_t> before;
  for (const auto& p : pb) before.push_back(checksum(p.tensor.value()));

  AdamW opt;
  opt.register_params(pa);
  ImageBatch batch = random_batch(2, 32, 32, 9);
  Tensor logits = a.decode_features(a.encode_images(batch, true), 32, 32);
  std::vector<int> labels(2 * 32 * 32, 1);
  backward(supervised_loss(logits, labels));
  opt.step(1e-3);

  for (size_t i = 0; i < pb.size(); ++i) CHECK(checksum(pb[i].tensor.value()) == before[i]);
}

TEST_CASE("student: checkpoint variant loads named parameters exactly") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "dualseg_test_backbone_ckpt";
  fs::remove_all(dir);

  BackboneSpec spec = tiny_spec(16, 2);
  VitEncoder original(spec, 32, 32, 77);
  {
    TensorStore store;
    std::vector<NamedParam> params;
    original.collect(params, "");
    for (const auto& p : params) store.put(p.name.substr(1), p.tensor);
    store.save(dir);
  }

  BackboneSpec from_ckpt = spec;
  from_ckpt.variant = BackboneVariant::vitb16_checkpoint;
  from_ckpt.checkpoint_path = dir.string();
  VitEncoder loaded(from_ckpt, 32, 32, 999);  // different init seed, overwritten by the load

  ImageBatch batch = random_batch(1, 32, 32, 10);
  NoGradGuard ng;
  FeatureMap fa = original.forward(batch, false);
  FeatureMap fb = loaded.forward(batch, false);
  CHECK(fa.tokens.value() == fb.tokens.value());

  // shape mismatch is an explicit error
  BackboneSpec wrong = from_ckpt;
  wrong.embed_dim = 24;
  wrong.heads = 2;
  CHECK_THROWS(VitEncoder(wrong, 32, 32, 1));
}

TEST_CASE("student: freeze list excludes parameters from training") {
  BackboneSpec spec = tiny_spec(16, 2);
  spec.freeze = {"embed", "blocks.0"};
  Student s = Student::with_implicit_guidance(spec, 32, 32, 3, 5);
  auto trainable = s.trainable_params("x");
  auto all = s.all_params("x");
  CHECK(trainable.size() < all.size());
  for (const auto& p : trainable) {
    CHECK(p.name.find("x.embed") != 0);
    CHECK(p.name.find("x.blocks.0") != 0);
  }
}

TEST_CASE("student: gradcheck through the full tiny forward") {
  // end-to-end: patch embed -> block -> norm -> decode -> upsample -> loss
  Student s = Student::with_implicit_guidance(tiny_spec(8, 1, 2), 16, 16, 2, 3);
  ImageBatch batch = random_batch(1, 16, 16, 11);
  std::vector<int> labels(16 * 16);
  Rng rng(12);
  for (auto& l : labels) l = rng.uniform_int(0, 1);

  auto build = [&] {
    Tensor logits = s.decode_features(s.encode_images(batch, true), 16, 16);
    return supervised_loss(logits, labels);
  };
  std::vector<Tensor> params;
  for (auto& p : s.trainable_params("s")) params.push_back(p.tensor);
  // subsampled sweep over every tensor (the acceptance gradient criterion
  // runs the full two-student version)
  check_gradients(build, params, 1e-4, 1e-6, 6);
}
