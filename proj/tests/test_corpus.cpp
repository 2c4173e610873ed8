#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "dualseg/corpus.hpp"
#include "dualseg/rng.hpp"

using namespace dualseg;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("dualseg_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}
}  // namespace

TEST_CASE("corpus: synthetic generator contract") {
  Corpus c = generate_synthetic(8, 4, 32, 0);
  CHECK(c.samples.size() == 8);
  CHECK(c.class_count == 4);
  CHECK(c.class_names.size() == 4);
  CHECK(c.palette.size() == 4);

  // every class appears somewhere in the corpus
  std::set<int> seen;
  for (const auto& s : c.samples) {
    CHECK(s.mask.has_value());
    CHECK(s.image.channels == 3);
    for (int v : s.mask->data) seen.insert(v);
    for (real x : s.image.data) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
  }
  CHECK(seen == std::set<int>{0, 1, 2, 3});

  CHECK_THROWS(generate_synthetic(8, 1, 32, 0));
  CHECK_THROWS(generate_synthetic(8, 4, 16, 0));
  CHECK_THROWS(generate_synthetic(2, 4, 32, 0));
}

TEST_CASE("corpus: synthetic generation is a pure function of its arguments") {
  Corpus a = generate_synthetic(6, 3, 32, 7);
  Corpus b = generate_synthetic(6, 3, 32, 7);
  for (size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].image.data == b.samples[i].image.data);
    CHECK(a.samples[i].mask->data == b.samples[i].mask->data);
  }

  Corpus c = generate_synthetic(6, 3, 32, 8);
  std::uint64_t ha = 0, hc = 0;
  for (size_t i = 0; i < a.samples.size(); ++i) {
    for (int v : a.samples[i].mask->data) ha = mix64(ha ^ static_cast<std::uint64_t>(v));
    for (int v : c.samples[i].mask->data) hc = mix64(hc ^ static_cast<std::uint64_t>(v));
  }
  CHECK(ha != hc);
}

TEST_CASE("corpus: save and reload round-trips exactly") {
  const fs::path dir = temp_dir("roundtrip");
  Corpus c = generate_synthetic(5, 4, 32, 3);
  save_corpus(c, dir);

  Corpus r1 = load_corpus(dir, dir / "manifest.jsonl");
  Corpus r2 = load_corpus(dir, dir / "manifest.jsonl");
  REQUIRE(r1.samples.size() == c.samples.size());
  CHECK(r1.class_count == 4);
  for (size_t i = 0; i < c.samples.size(); ++i) {
    CHECK(r1.samples[i].id == c.samples[i].id);
    CHECK(r1.samples[i].mask->data == c.samples[i].mask->data);  // ids survive exactly
    // generator quantizes to the 8-bit grid, so pixels survive exactly too
    CHECK(r1.samples[i].image.data == c.samples[i].image.data);
    CHECK(r2.samples[i].image.data == r1.samples[i].image.data);
  }
}

TEST_CASE("corpus: loader errors name the offending sample") {
  const fs::path dir = temp_dir("loaderr");
  Corpus c = generate_synthetic(4, 4, 32, 1);
  save_corpus(c, dir);

  // mask value out of range: shrink K in classes.json
  {
    std::ofstream cf(dir / "classes.json");
    cf << R"({"classes": ["a", "b"], "palette": [[0,0,0], [1,1,1]]})" << "\n";
  }
  try {
    load_corpus(dir, dir / "manifest.jsonl");
    FAIL("expected out-of-range mask error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("s00") != std::string::npos);
  }

  // missing file
  const fs::path dir2 = temp_dir("loaderr2");
  save_corpus(c, dir2);
  fs::remove(dir2 / "images" / "s0002.png");
  try {
    load_corpus(dir2, dir2 / "manifest.jsonl");
    FAIL("expected missing-file error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("s0002") != std::string::npos);
  }
}

TEST_CASE("corpus: split protocol arithmetic and determinism") {
  Corpus c = generate_synthetic(24, 3, 32, 5);

  SplitSpec spec;
  spec.ratio = Ratio::parse("1/24");
  spec.seed = 7;
  Split s = split_protocol(c, spec);
  CHECK(s.labeled.size() == 1);
  CHECK(s.unlabeled.size() == 23);

  spec.ratio = Ratio::parse("1/8");
  s = split_protocol(c, spec);
  CHECK(s.labeled.size() == 3);
  CHECK(s.unlabeled.size() == 21);

  spec.ratio = Ratio::parse("1/4");
  Split a = split_protocol(c, spec);
  Split b = split_protocol(c, spec);
  CHECK(a.labeled == b.labeled);
  CHECK(a.unlabeled == b.unlabeled);

  // disjoint and covering
  std::set<std::string> all(a.labeled.begin(), a.labeled.end());
  for (const auto& id : a.unlabeled) CHECK(all.insert(id).second);
  CHECK(all.size() == 24);

  // different seeds give different draws (24 choose 6 makes collision negligible)
  spec.seed = 8;
  Split d = split_protocol(c, spec);
  CHECK(a.labeled != d.labeled);

  spec.ratio = Ratio{3, 2};
  CHECK_THROWS(split_protocol(c, spec));
  spec.ratio = Ratio{0, 1};
  CHECK_THROWS(split_protocol(c, spec));
}

TEST_CASE("corpus: explicit id override") {
  Corpus c = generate_synthetic(8, 3, 32, 2);
  SplitSpec spec;
  spec.ratio = Ratio::parse("1/4");
  spec.explicit_ids = {"s0003", "s0005"};
  Split s = split_protocol(c, spec);
  CHECK(s.labeled == std::vector<std::string>{"s0003", "s0005"});
  CHECK(s.unlabeled.size() == 6);

  spec.explicit_ids = {"nope"};
  CHECK_THROWS(split_protocol(c, spec));
}

TEST_CASE("corpus: ratio parsing") {
  CHECK(Ratio::parse("1/8").value() == doctest::Approx(0.125));
  CHECK(Ratio::parse("1").value() == doctest::Approx(1.0));
  CHECK_THROWS(Ratio::parse("1/0"));
  CHECK_THROWS(Ratio::parse("abc"));
}

TEST_CASE("corpus: grayscale sources are replicated to three channels") {
  const fs::path dir = temp_dir("gray");
  fs::create_directories(dir / "images");
  Image gray(1, 32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) gray.at(0, y, x) = (y + x) / 64.0;
  write_image_png(dir / "images" / "g.png", gray);
  {
    std::ofstream cf(dir / "classes.json");
    cf << R"({"classes": ["a", "b"], "palette": [[0,0,0], [255,255,255]]})" << "\n";
    std::ofstream mf(dir / "manifest.jsonl");
    mf << R"({"id": "g", "image": "images/g.png"})" << "\n";
  }
  Corpus c = load_corpus(dir, dir / "manifest.jsonl");
  REQUIRE(c.samples.size() == 1);
  CHECK(c.samples[0].image.channels == 3);
  CHECK(c.samples[0].image.at(0, 5, 9) == c.samples[0].image.at(2, 5, 9));
  CHECK_FALSE(c.samples[0].mask.has_value());
}
