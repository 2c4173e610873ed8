#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "dualseg/evaluation.hpp"
#include "dualseg/rng.hpp"

using namespace dualseg;
namespace fs = std::filesystem;

// Brute-force IoU from pixel sets, independent of the confusion-matrix path.
namespace {
struct BruteIoU {
  std::vector<real> iou;
  std::vector<bool> present;
  real miou = 0;
};

BruteIoU brute_force_iou(const std::vector<int>& pred, const std::vector<int>& gt, int K) {
  BruteIoU out;
  out.iou.assign(K, std::nan(""));
  out.present.assign(K, false);
  real sum = 0;
  int n = 0;
  for (int k = 0; k < K; ++k) {
    std::int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
      if (gt[i] == kIgnoreClass) continue;
      const bool in_p = pred[i] == k;
      const bool in_g = gt[i] == k;
      inter += in_p && in_g;
      uni += in_p || in_g;
    }
    if (uni == 0) continue;
    out.present[k] = true;
    out.iou[k] = static_cast<real>(inter) / static_cast<real>(uni);
    sum += out.iou[k];
    ++n;
  }
  out.miou = n ? sum / n : 0;
  return out;
}
}  // namespace

TEST_CASE("evaluation: accumulate basics") {
  ConfusionMatrix cm(3);
  accumulate(cm, {0, 1, 2, 1}, {0, 1, 2, 1});
  for (int g = 0; g < 3; ++g)
    for (int p = 0; p < 3; ++p)
      if (g != p) CHECK(cm.at(g, p) == 0);
  CHECK(cm.total() == 4);

  ConfusionMatrix cm2(3);
  accumulate(cm2, {0, 1}, {kIgnoreClass, kIgnoreClass});
  CHECK(cm2.total() == 0);

  ConfusionMatrix cm3(2);
  accumulate(cm3, {0, 1, 1, 0}, {0, 1, 0, 0});
  CHECK(cm3.at(0, 1) == 1);
  CHECK(cm3.at(1, 0) == 0);

  CHECK_THROWS(accumulate(cm3, {5}, {0}));
}

TEST_CASE("evaluation: iou_from_cm closed forms") {
  ConfusionMatrix diag(3);
  accumulate(diag, {0, 1, 2}, {0, 1, 2});
  EvalReport r = iou_from_cm(diag);
  for (int k = 0; k < 3; ++k) CHECK(r.per_class_iou[k] == 1.0);
  CHECK(r.miou == 1.0);

  // class absent from both prediction and ground truth is excluded
  ConfusionMatrix partial(3);
  accumulate(partial, {0, 0}, {0, 1});
  EvalReport rp = iou_from_cm(partial);
  CHECK_FALSE(rp.class_present[2]);
  CHECK(rp.class_present[0]);
  CHECK(rp.class_present[1]);

  // cm = [[3,1],[1,3]] -> IoU 3/5 each, miou 0.6
  ConfusionMatrix cm(2);
  cm.at(0, 0) = 3;
  cm.at(0, 1) = 1;
  cm.at(1, 0) = 1;
  cm.at(1, 1) = 3;
  EvalReport r2 = iou_from_cm(cm);
  CHECK(r2.per_class_iou[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(r2.per_class_iou[1] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(r2.miou == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("evaluation: matches brute-force set IoU on random instances") {
  for (int rep = 0; rep < 100; ++rep) {
    const int K = 2 + rep % 3;
    Rng rng(5000 + rep);
    std::vector<int> pred(64), gt(64);
    for (size_t i = 0; i < pred.size(); ++i) {
      pred[i] = rng.uniform_int(0, K - 1);
      gt[i] = rng.bernoulli(0.1) ? kIgnoreClass : rng.uniform_int(0, K - 1);
    }
    ConfusionMatrix cm(K);
    accumulate(cm, pred, gt);
    EvalReport r = iou_from_cm(cm);
    BruteIoU ref = brute_force_iou(pred, gt, K);
    CHECK(r.miou == ref.miou);  // identical integer counts -> identical divisions
    for (int k = 0; k < K; ++k) {
      CHECK(r.class_present[k] == ref.present[k]);
      if (ref.present[k]) CHECK(r.per_class_iou[k] == ref.iou[k]);
    }
  }
}

TEST_CASE("evaluation: accumulation order independence and relabel invariance") {
  Rng rng(6000);
  std::vector<std::vector<int>> preds, gts;
  for (int i = 0; i < 5; ++i) {
    std::vector<int> p(36), g(36);
    for (int j = 0; j < 36; ++j) {
      p[j] = rng.uniform_int(0, 3);
      g[j] = rng.uniform_int(0, 3);
    }
    preds.push_back(p);
    gts.push_back(g);
  }
  ConfusionMatrix fwd(4), rev(4);
  for (int i = 0; i < 5; ++i) accumulate(fwd, preds[i], gts[i]);
  for (int i = 4; i >= 0; --i) accumulate(rev, preds[i], gts[i]);
  CHECK(fwd.counts == rev.counts);

  // consistent relabeling permutes per-class IoUs and preserves the mean
  const int perm[4] = {2, 0, 3, 1};
  ConfusionMatrix relabeled(4);
  for (int i = 0; i < 5; ++i) {
    std::vector<int> p(36), g(36);
    for (int j = 0; j < 36; ++j) {
      p[j] = perm[preds[i][j]];
      g[j] = perm[gts[i][j]];
    }
    accumulate(relabeled, p, g);
  }
  EvalReport a = iou_from_cm(fwd);
  EvalReport b = iou_from_cm(relabeled);
  CHECK(a.miou == doctest::Approx(b.miou).epsilon(1e-12));
  for (int k = 0; k < 4; ++k)
    CHECK(a.per_class_iou[k] == doctest::Approx(b.per_class_iou[perm[k]]).epsilon(1e-12));
}

TEST_CASE("evaluation: evaluate_model determinism and fusion rule") {
  Corpus corpus = generate_synthetic(4, 3, 32, 60);
  Student g = Student::with_implicit_guidance(BackboneSpec{.embed_dim = 16, .depth = 1, .heads = 2},
                                              32, 32, 3, 1);
  Student l = Student::with_implicit_guidance(BackboneSpec{.embed_dim = 12, .depth = 1, .heads = 2},
                                              32, 32, 3, 2);
  ModelEvalResult a = evaluate_model(g, l, corpus, "fp");
  ModelEvalResult b = evaluate_model(g, l, corpus, "fp");
  CHECK(a.fused.miou == b.fused.miou);
  CHECK(a.global_student.miou == b.global_student.miou);
  CHECK(a.fused.pixels == 4 * 32 * 32);

  // fusion picks the higher-confidence student per pixel
  ImageBatch batch(1, 3, 32, 32);
  batch.set(0, corpus.samples[0].image);
  StudentOutput og = g.forward(batch, false);
  StudentOutput ol = l.forward(batch, false);
  ConfusionMatrix cm(3);
  std::vector<int> fused(og.pseudo.size());
  for (size_t i = 0; i < fused.size(); ++i)
    fused[i] = og.confidence[i] >= ol.confidence[i] ? og.pseudo[i] : ol.pseudo[i];
  accumulate(cm, fused, corpus.samples[0].mask->data);
  ConfusionMatrix expect(3);
  Corpus one;
  one.class_count = 3;
  one.class_names = corpus.class_names;
  one.palette = corpus.palette;
  one.samples.push_back(corpus.samples[0]);
  ModelEvalResult single = evaluate_model(g, l, one, "fp");
  CHECK(single.fused.miou == iou_from_cm(cm).miou);
}

TEST_CASE("evaluation: pseudo curve aggregation") {
  std::vector<StepRecord> records;
  for (int step = 0; step < 12; ++step) {
    StepRecord r;
    r.step = step;
    r.epoch = step / 4;
    r.pseudo_acc_g = 0.9;
    r.pseudo_acc_l = step % 2 == 0 ? 0.5 : -1.0;  // sentinel on odd steps
    records.push_back(r);
  }
  auto g = pseudo_curve(records, StudentSide::global_student);
  REQUIRE(g.size() == 3);
  for (const auto& p : g) {
    CHECK(p.mean_accuracy == doctest::Approx(0.9));
    CHECK(p.defined_steps == 4);
  }
  auto l = pseudo_curve(records, StudentSide::local_student);
  for (const auto& p : l) {
    CHECK(p.mean_accuracy == doctest::Approx(0.5));
    CHECK(p.defined_steps == 2);
  }
  auto windowed = pseudo_curve(records, StudentSide::global_student, 2);
  CHECK(windowed.size() == 2);
  CHECK(pseudo_curve({}, StudentSide::global_student).empty());
}

TEST_CASE("evaluation: render_reports writes deterministic bytes") {
  const fs::path dir = fs::temp_directory_path() / "dualseg_test_render";
  fs::remove_all(dir);

  EvalReport r;
  r.per_class_iou = {0.5, 0.75, std::nan("")};
  r.class_present = {true, true, false};
  r.miou = 0.625;
  r.pixels = 100;

  LabeledCurve curve{"global student", {{0, 0.4, 3}, {1, 0.6, 3}, {2, 0.8, 3}}};
  render_reports({{"demo", r}}, {curve}, dir);

  auto slurp = [](const fs::path& p) {
    std::ifstream f(p);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  const std::string csv1 = slurp(dir / "reports.csv");
  CHECK(csv1.find("demo") != std::string::npos);
  CHECK(csv1.find("0.625000") != std::string::npos);
  const std::string svg1 = slurp(dir / "pseudo_accuracy.svg");
  CHECK(svg1.find("polyline") != std::string::npos);

  render_reports({{"demo", r}}, {curve}, dir);
  CHECK(slurp(dir / "reports.csv") == csv1);
  CHECK(slurp(dir / "pseudo_accuracy.svg") == svg1);
}
