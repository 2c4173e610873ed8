#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dualseg/checkpoint.hpp"
#include "dualseg/guidance.hpp"
#include "dualseg/nn.hpp"
#include "dualseg/rng.hpp"

using namespace dualseg;

TEST_CASE("guidance: stub encoder determinism and normalization") {
  auto a = stub_text_encoder("a remote sensing image of water.", 512);
  auto b = stub_text_encoder("a remote sensing image of water.", 512);
  CHECK(a == b);
  real norm2 = 0.0;
  for (real v : a) norm2 += v * v;
  CHECK(std::sqrt(norm2) == doctest::Approx(1.0).epsilon(1e-6));

  // tokenization ignores case and punctuation, keeps order
  auto c = stub_text_encoder("A Remote, sensing IMAGE of water", 512);
  CHECK(a == c);
  auto d = stub_text_encoder("water of image sensing remote a", 512);
  CHECK(a != d);
}

TEST_CASE("guidance: distinct strings are near-orthogonal") {
  std::vector<std::vector<real>> embs;
  Rng rng(4242);
  for (int i = 0; i < 16; ++i) {
    std::string s = "concept";
    for (int j = 0; j < 4; ++j) s += static_cast<char>('a' + rng.uniform_int(0, 25));
    embs.push_back(stub_text_encoder(s, 512));
  }
  real worst = 0.0;
  for (size_t i = 0; i < embs.size(); ++i)
    for (size_t j = i + 1; j < embs.size(); ++j) {
      real dot = 0.0;
      for (int k = 0; k < 512; ++k) dot += embs[i][k] * embs[j][k];
      worst = std::max(worst, std::abs(dot));
    }
  CHECK(worst < 0.3);
}

TEST_CASE("guidance: prototypes average then normalize; order-invariant") {
  TextEncoder enc = make_stub_text_encoder(64);
  ConceptSet cs;
  cs.class_names = {"road", "water"};
  cs.concepts = {{"road", "highway", "asphalt path"}, {"water", "lake"}};
  PrototypeMatrix p1 = encode_concepts(cs, enc);
  CHECK(p1.values.rows() == 2);
  CHECK(p1.values.cols() == 64);
  CHECK_FALSE(p1.values.requires_grad());

  for (int k = 0; k < 2; ++k) {
    real norm2 = 0.0;
    for (int i = 0; i < 64; ++i) norm2 += p1.values(k, i) * p1.values(k, i);
    CHECK(std::sqrt(norm2) == doctest::Approx(1.0).epsilon(1e-9));
  }

  ConceptSet permuted = cs;
  permuted.concepts[0] = {"asphalt path", "road", "highway"};
  PrototypeMatrix p2 = encode_concepts(permuted, enc);
  for (int i = 0; i < p1.values.size(); ++i)
    CHECK(p1.values.value()[i] == doctest::Approx(p2.values.value()[i]).epsilon(1e-12));

  // single concept: prototype equals that normalized embedding
  ConceptSet single;
  single.class_names = {"road"};
  single.concepts = {{"road"}};
  PrototypeMatrix ps = encode_concepts(single, enc);
  auto e = stub_text_encoder(single.format("road"), 64);
  for (int i = 0; i < 64; ++i) CHECK(ps.values(0, i) == doctest::Approx(e[i]).epsilon(1e-9));
}

TEST_CASE("guidance: degenerate prototype (opposite embeddings) raises") {
  TextEncoder enc;
  enc.dim = 8;
  enc.embed = [](const std::string& text) {
    std::vector<real> v(8, 0.0);
    v[0] = text.find("anti") != std::string::npos ? -1.0 : 1.0;
    return v;
  };
  ConceptSet cs;
  cs.class_names = {"x"};
  cs.concepts = {{"thing", "antithing"}};
  CHECK_THROWS_WITH_AS(static_cast<void>(encode_concepts(cs, enc)),
                       doctest::Contains("degenerate"), std::runtime_error);

  ConceptSet empty;
  empty.class_names = {"x"};
  empty.concepts = {{}};
  CHECK_THROWS(static_cast<void>(encode_concepts(empty, enc)));
}

TEST_CASE("guidance: template must have exactly one slot") {
  ConceptSet cs;
  cs.class_names = {"a"};
  cs.concepts = {{"a"}};
  cs.template_str = "no slot";
  CHECK_THROWS(cs.validate());
  cs.template_str = "{} and {}";
  CHECK_THROWS(cs.validate());
  cs.template_str = "ok {}.";
  CHECK_NOTHROW(cs.validate());
  CHECK(cs.format("x") == "ok x.");
}

TEST_CASE("guidance: projection is linear and gradient-isolated") {
  TextEncoder enc = make_stub_text_encoder(16);
  ConceptSet cs = ConceptSet::defaults_for({"a", "b", "c"}, "a photo of {}.");
  PrototypeMatrix protos = encode_concepts(cs, enc);

  // identity projection reproduces the prototypes
  Linear ident(16, 16, 0);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) ident.W.value_mut()[i * 16 + j] = i == j ? 1.0 : 0.0;
  QuerySet q = project_prototypes(protos, ident);
  CHECK(q.kind == QueryKind::explicit_projected);
  for (int i = 0; i < q.values.size(); ++i)
    CHECK(q.values.value()[i] == doctest::Approx(protos.values.value()[i]).epsilon(1e-12));

  // doubling the map doubles the queries
  for (auto& w : ident.W.value_mut()) w *= 2.0;
  QuerySet q2 = project_prototypes(protos, ident);
  for (int i = 0; i < q2.values.size(); ++i)
    CHECK(q2.values.value()[i] == doctest::Approx(2.0 * protos.values.value()[i]).epsilon(1e-12));

  // gradients reach phi, prototypes stay bit-identical through a step
  Linear phi(16, 8, 123);
  const auto proto_before = protos.values.value();
  AdamW opt;
  std::vector<NamedParam> params;
  phi.collect(params, "phi");
  opt.register_params(params);

  QuerySet q3 = project_prototypes(protos, phi);
  Tensor loss = matmul(matmul(Tensor::full(1, 3, 1.0), q3.values), Tensor::full(8, 1, 1.0));
  backward(loss);
  real wg = 0.0;
  for (real g : phi.W.grad()) wg += std::abs(g);
  CHECK(wg > 0.0);
  opt.step(1e-2);
  CHECK(protos.values.value() == proto_before);

  CHECK_THROWS(project_prototypes(protos, Linear(7, 8, 1)));  // dim mismatch
}

TEST_CASE("guidance: learnable query init statistics and determinism") {
  QuerySet a = init_learnable_queries(64, 256, 11);
  QuerySet b = init_learnable_queries(64, 256, 11);
  CHECK(a.values.value() == b.values.value());
  CHECK(a.values.is_param());
  CHECK(a.trainable);

  real mean = 0.0;
  for (real v : a.values.value()) mean += v;
  mean /= a.values.size();
  CHECK(std::abs(mean) < 3.0 * 0.02 / std::sqrt(64.0 * 256.0));

  // a gradient step changes the values
  const auto before = a.values.value();
  AdamW opt;
  opt.register_params({{"q", a.values}});
  Tensor loss = matmul(matmul(Tensor::full(1, 64, 1.0), a.values), Tensor::full(256, 1, 1.0));
  backward(loss);
  opt.step(1e-2);
  CHECK(a.values.value() != before);
}

TEST_CASE("guidance: embedding-table encoder consumes the checkpoint format") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "dualseg_test_txtenc";
  fs::remove_all(dir);

  TensorStore store;
  std::vector<real> table(3 * 4, 0.0);
  table[0 * 4 + 0] = 1.0;  // "alpha"
  table[1 * 4 + 1] = 1.0;  // "beta"
  table[2 * 4 + 2] = 1.0;  // "gamma"
  store.put("token_embedding", 3, 4, table);
  store.save(dir);
  {
    std::ofstream vf(dir / "vocab.json");
    vf << R"({"alpha": 0, "beta": 1, "gamma": 2})" << "\n";
  }

  TextEncoder enc = load_embedding_table_encoder(dir);
  CHECK(enc.dim == 4);
  auto e = enc.embed("alpha beta");
  const real r = 1.0 / std::sqrt(2.0);
  CHECK(e[0] == doctest::Approx(r).epsilon(1e-12));
  CHECK(e[1] == doctest::Approx(r).epsilon(1e-12));
  CHECK(e[2] == doctest::Approx(0.0));

  // unknown tokens fall back to the hashed stub (still unit-norm)
  auto u = enc.embed("zeta");
  real n2 = 0.0;
  for (real v : u) n2 += v * v;
  CHECK(std::sqrt(n2) == doctest::Approx(1.0).epsilon(1e-6));
}
