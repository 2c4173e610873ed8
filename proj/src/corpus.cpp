#include "dualseg/corpus.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "dualseg/rng.hpp"

namespace dualseg {

using nlohmann::json;
namespace fs = std::filesystem;

const Sample* Corpus::find(const std::string& id) const {
  for (const auto& s : samples)
    if (s.id == id) return &s;
  return nullptr;
}

void Corpus::validate() const {
  if (class_count <= 0) throw std::runtime_error("corpus: class_count must be positive");
  if (static_cast<int>(class_names.size()) != class_count ||
      static_cast<int>(palette.size()) != class_count)
    throw std::runtime_error("corpus: class_names/palette length must equal class_count");
  std::set<std::string> ids;
  for (const auto& s : samples) {
    if (!ids.insert(s.id).second)
      throw std::runtime_error("corpus: duplicate sample id '" + s.id + "'");
    if (s.mask) {
      if (s.mask->height != s.image.height || s.mask->width != s.image.width)
        throw std::runtime_error("corpus: image/mask dimension mismatch in sample '" + s.id + "'");
      for (int v : s.mask->data) {
        if (v != kIgnoreClass && (v < 0 || v >= class_count))
          throw std::runtime_error("corpus: mask value " + std::to_string(v) +
                                   " out of range (K=" + std::to_string(class_count) +
                                   ") in sample '" + s.id + "'");
      }
    }
  }
}

Ratio Ratio::parse(const std::string& s) {
  Ratio r;
  auto slash = s.find('/');
  try {
    if (slash == std::string::npos) {
      r.num = std::stoll(s);
      r.den = 1;
    } else {
      r.num = std::stoll(s.substr(0, slash));
      r.den = std::stoll(s.substr(slash + 1));
    }
  } catch (const std::exception&) {
    throw std::runtime_error("ratio: cannot parse '" + s + "'");
  }
  if (r.den <= 0) throw std::runtime_error("ratio: denominator must be positive in '" + s + "'");
  return r;
}

Corpus load_corpus(const fs::path& root, const fs::path& manifest) {
  Corpus corpus;

  const fs::path classes_path = manifest.parent_path() / "classes.json";
  std::ifstream cf(classes_path);
  if (!cf) throw std::runtime_error("corpus: cannot open " + classes_path.string());
  json cj = json::parse(cf);
  for (const auto& n : cj.at("classes")) corpus.class_names.push_back(n.get<std::string>());
  for (const auto& p : cj.at("palette")) {
    corpus.palette.push_back({p.at(0).get<std::uint8_t>(), p.at(1).get<std::uint8_t>(),
                              p.at(2).get<std::uint8_t>()});
  }
  corpus.class_count = static_cast<int>(corpus.class_names.size());
  corpus.small = cj.value("small", false);

  std::ifstream mf(manifest);
  if (!mf) throw std::runtime_error("corpus: cannot open " + manifest.string());
  std::string line;
  while (std::getline(mf, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    Sample s;
    s.id = rec.at("id").get<std::string>();
    const fs::path img_path = root / rec.at("image").get<std::string>();
    if (!fs::exists(img_path))
      throw std::runtime_error("corpus: missing image file for sample '" + s.id + "': " +
                               img_path.string());
    s.image = read_image_png(img_path);
    if (s.image.channels == 1) {
      // grayscale sources are replicated to the 3 channels the backbones expect
      Image rgb(3, s.image.height, s.image.width);
      for (int c = 0; c < 3; ++c)
        std::copy(s.image.data.begin(), s.image.data.end(),
                  rgb.data.begin() + static_cast<size_t>(c) * s.image.height * s.image.width);
      s.image = std::move(rgb);
    }
    if (rec.contains("mask") && !rec.at("mask").is_null()) {
      const fs::path mask_path = root / rec.at("mask").get<std::string>();
      if (!fs::exists(mask_path))
        throw std::runtime_error("corpus: missing mask file for sample '" + s.id + "': " +
                                 mask_path.string());
      s.mask = read_mask_png(mask_path);
    }
    corpus.samples.push_back(std::move(s));
  }
  corpus.validate();
  return corpus;
}

void save_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");

  json cj;
  cj["classes"] = corpus.class_names;
  json pal = json::array();
  for (const auto& p : corpus.palette) pal.push_back({p[0], p[1], p[2]});
  cj["palette"] = pal;
  cj["small"] = corpus.small;
  std::ofstream(dir / "classes.json") << cj.dump(2) << "\n";

  std::ofstream mf(dir / "manifest.jsonl");
  for (const auto& s : corpus.samples) {
    const std::string img_rel = "images/" + s.id + ".png";
    write_image_png(dir / img_rel, s.image);
    json rec{{"id", s.id}, {"image", img_rel}};
    if (s.mask) {
      const std::string mask_rel = "masks/" + s.id + ".png";
      write_mask_png(dir / mask_rel, *s.mask, corpus.palette);
      rec["mask"] = mask_rel;
    }
    mf << rec.dump() << "\n";
  }
}

Split split_protocol(const Corpus& corpus, const SplitSpec& spec) {
  if (corpus.samples.empty()) throw std::runtime_error("split: corpus is empty");
  const double ratio = spec.ratio.value();
  if (ratio <= 0.0 || ratio > 1.0)
    throw std::runtime_error("split: ratio must be in (0, 1], got " + spec.ratio.str());

  const int n = static_cast<int>(corpus.samples.size());
  const int n_labeled = std::max<int>(1, static_cast<int>(std::floor(n * ratio)));

  std::vector<int> capable;
  for (int i = 0; i < n; ++i)
    if (corpus.samples[i].mask) capable.push_back(i);

  std::set<int> labeled_idx;
  if (!spec.explicit_ids.empty()) {
    for (const auto& id : spec.explicit_ids) {
      int found = -1;
      for (int i = 0; i < n; ++i)
        if (corpus.samples[i].id == id) {
          found = i;
          break;
        }
      if (found < 0) throw std::runtime_error("split: explicit id '" + id + "' not in corpus");
      if (!corpus.samples[found].mask)
        throw std::runtime_error("split: explicit id '" + id + "' has no mask");
      labeled_idx.insert(found);
    }
  } else {
    if (static_cast<int>(capable.size()) < n_labeled)
      throw std::runtime_error("split: need " + std::to_string(n_labeled) +
                               " labeled-capable samples, corpus has " +
                               std::to_string(capable.size()));
    std::vector<int> pool = capable;
    Rng rng(derive_seed(spec.seed, "split"));
    for (int i = static_cast<int>(pool.size()) - 1; i > 0; --i)
      std::swap(pool[i], pool[rng.uniform_int(0, i)]);
    labeled_idx.insert(pool.begin(), pool.begin() + n_labeled);
  }

  Split split;
  for (int i = 0; i < n; ++i) {
    if (labeled_idx.count(i))
      split.labeled.push_back(corpus.samples[i].id);
    else
      split.unlabeled.push_back(corpus.samples[i].id);
  }
  return split;
}

// ---------------------------------------------------------------------------
// synthetic scenes

namespace {

struct Hsv {
  real h, s, v;
};

Rgb hsv_to_rgb(const Hsv& in) {
  real h = in.h - std::floor(in.h);
  real c = in.v * in.s;
  real hp = h * 6.0;
  real x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  real r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  real m = in.v - c;
  auto q = [](real f) { return static_cast<std::uint8_t>(std::clamp(f * 255.0 + 0.5, 0.0, 255.0)); };
  return {q(r + m), q(g + m), q(b + m)};
}

void paint_pixel(Image& img, Mask& mask, int y, int x, int cls, const Hsv& tint, real speckle,
                 Rng& rng) {
  Rgb c = hsv_to_rgb(tint);
  for (int ch = 0; ch < 3; ++ch) {
    real v = c[ch] / 255.0 + rng.uniform(-speckle, speckle);
    img.at(ch, y, x) = std::clamp<real>(v, 0.0, 1.0);
  }
  mask.at(y, x) = cls;
}

Hsv jitter_tint(const Hsv& base, Rng& rng, real hue_amp, real val_amp) {
  return {base.h + rng.uniform(-hue_amp, hue_amp), base.s,
          std::clamp<real>(base.v + rng.uniform(-val_amp, val_amp), 0.05, 1.0)};
}

constexpr real kHueJitter = 0.05;
constexpr real kValJitter = 0.22;
constexpr real kSpeckle = 0.05;

int paint_polygon(Image& img, Mask& mask, int cls, const Hsv& base, Rng& rng) {
  const int side = img.height;
  const real cx = rng.uniform(side * 0.15, side * 0.85);
  const real cy = rng.uniform(side * 0.15, side * 0.85);
  const int nv = rng.uniform_int(3, 7);
  const real r_base = rng.uniform(side * 0.08, side * 0.28);
  std::vector<real> px(nv), py(nv);
  const real phase = rng.uniform(0.0, 2.0 * M_PI);
  for (int i = 0; i < nv; ++i) {
    real ang = phase + 2.0 * M_PI * i / nv;
    real r = r_base * rng.uniform(0.65, 1.35);
    px[i] = cx + r * std::cos(ang);
    py[i] = cy + r * std::sin(ang);
  }
  Hsv tint = jitter_tint(base, rng, kHueJitter, kValJitter);
  int painted = 0;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      // even-odd rule
      bool inside = false;
      for (int i = 0, j = nv - 1; i < nv; j = i++) {
        if ((py[i] > y) != (py[j] > y) &&
            x < (px[j] - px[i]) * (y - py[i]) / (py[j] - py[i]) + px[i])
          inside = !inside;
      }
      if (inside) {
        paint_pixel(img, mask, y, x, cls, tint, kSpeckle, rng);
        ++painted;
      }
    }
  return painted;
}

int paint_ribbon(Image& img, Mask& mask, int cls, const Hsv& base, Rng& rng) {
  const int side = img.height;
  const int segs = rng.uniform_int(2, 4);
  std::vector<real> xs, ys;
  xs.push_back(rng.uniform(0.0, side));
  ys.push_back(rng.bernoulli(0.5) ? 0.0 : rng.uniform(0.0, side));
  for (int i = 0; i < segs; ++i) {
    xs.push_back(std::clamp<real>(xs.back() + rng.uniform(-side * 0.6, side * 0.6), 0.0, side));
    ys.push_back(std::clamp<real>(ys.back() + rng.uniform(side * 0.2, side * 0.6), 0.0, side));
  }
  const real half = rng.uniform(1.2, 3.2);  // thin structure
  Hsv tint = jitter_tint(base, rng, kHueJitter, kValJitter);
  int painted = 0;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      real d2_min = 1e30;
      for (size_t i = 0; i + 1 < xs.size(); ++i) {
        real ax = xs[i], ay = ys[i], bx = xs[i + 1], by = ys[i + 1];
        real vx = bx - ax, vy = by - ay;
        real len2 = vx * vx + vy * vy;
        real t = len2 > 0 ? std::clamp<real>(((x - ax) * vx + (y - ay) * vy) / len2, 0.0, 1.0) : 0.0;
        real dx = x - (ax + t * vx), dy = y - (ay + t * vy);
        d2_min = std::min(d2_min, dx * dx + dy * dy);
      }
      if (d2_min <= half * half) {
        paint_pixel(img, mask, y, x, cls, tint, kSpeckle, rng);
        ++painted;
      }
    }
  return painted;
}

int paint_blob(Image& img, Mask& mask, int cls, const Hsv& base, Rng& rng) {
  const int side = img.height;
  const int n = rng.uniform_int(1, 3);
  struct Ell {
    real cx, cy, a, b, cs, sn;
  };
  std::vector<Ell> ells;
  for (int i = 0; i < n; ++i) {
    real ang = rng.uniform(0.0, M_PI);
    ells.push_back({rng.uniform(side * 0.15, side * 0.85), rng.uniform(side * 0.15, side * 0.85),
                    rng.uniform(side * 0.06, side * 0.2), rng.uniform(side * 0.04, side * 0.14),
                    std::cos(ang), std::sin(ang)});
  }
  Hsv tint = jitter_tint(base, rng, kHueJitter, kValJitter);
  int painted = 0;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      bool inside = false;
      for (const auto& e : ells) {
        real dx = x - e.cx, dy = y - e.cy;
        real u = (dx * e.cs + dy * e.sn) / e.a;
        real v = (-dx * e.sn + dy * e.cs) / e.b;
        if (u * u + v * v <= 1.0) {
          inside = true;
          break;
        }
      }
      if (inside) {
        paint_pixel(img, mask, y, x, cls, tint, kSpeckle, rng);
        ++painted;
      }
    }
  return painted;
}

int paint_shape(Image& img, Mask& mask, int cls, int archetype, const Hsv& base, Rng& rng) {
  switch (archetype % 3) {
    case 0: return paint_polygon(img, mask, cls, base, rng);
    case 1: return paint_ribbon(img, mask, cls, base, rng);
    default: return paint_blob(img, mask, cls, base, rng);
  }
}

}  // namespace

Corpus generate_synthetic(int count, int class_count, int side, std::uint64_t seed) {
  if (class_count < 2) throw std::invalid_argument("synthetic: class_count must be >= 2");
  if (side < 32) throw std::invalid_argument("synthetic: side must be >= 32");
  if (count < 4) throw std::invalid_argument("synthetic: count must be >= 4");

  Corpus corpus;
  corpus.class_count = class_count;
  const char* archetype_names[3] = {"polygon", "ribbon", "blob"};
  std::vector<Hsv> base_tints;
  base_tints.push_back({0.58, 0.18, 0.42});  // muted background
  corpus.class_names.push_back("background");
  for (int k = 1; k < class_count; ++k) {
    const int arch = (k - 1) % 3;
    const int round = (k - 1) / 3;
    std::string name = archetype_names[arch];
    if (round > 0) name += std::to_string(round + 1);
    corpus.class_names.push_back(name);
    base_tints.push_back({0.05 + 0.83 * (k - 1) / std::max(1, class_count - 1), 0.62, 0.78});
  }
  for (const auto& t : base_tints) corpus.palette.push_back(hsv_to_rgb(t));

  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, "synthetic", i));
    Image img(3, side, side);
    Mask mask(side, side, 0);

    // background: tinted diagonal gradient + speckle
    Hsv bg = jitter_tint(base_tints[0], rng, 0.04, 0.12);
    Rgb bg_rgb = hsv_to_rgb(bg);
    const real gx = rng.uniform(-0.12, 0.12), gy = rng.uniform(-0.12, 0.12);
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        real shade = gx * (static_cast<real>(x) / side - 0.5) +
                     gy * (static_cast<real>(y) / side - 0.5);
        for (int c = 0; c < 3; ++c)
          img.at(c, y, x) =
              std::clamp<real>(bg_rgb[c] / 255.0 + shade + rng.uniform(-kSpeckle, kSpeckle), 0.0, 1.0);
      }

    // random scene content first, guaranteed classes last so they survive
    const int extras = rng.uniform_int(2, 4);
    for (int e = 0; e < extras; ++e) {
      const int cls = rng.uniform_int(1, class_count - 1);
      paint_shape(img, mask, cls, cls - 1, base_tints[cls], rng);
    }
    for (int cls = 1; cls < class_count; ++cls) {
      if ((cls - 1) % count != i) continue;
      int attempts = 0;
      while (paint_shape(img, mask, cls, cls - 1, base_tints[cls], rng) == 0 && ++attempts < 8) {
      }
    }

    // global lighting jitter + sensor noise, then 8-bit quantization so
    // the on-disk corpus round-trips losslessly
    const real gain = rng.uniform(0.85, 1.15);
    for (auto& v : img.data) {
      v = std::clamp<real>(v * gain + rng.uniform(-0.02, 0.02), 0.0, 1.0);
      v = std::round(v * 255.0) / 255.0;
    }

    Sample s;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%04d", i);
    s.id = buf;
    s.image = std::move(img);
    s.mask = std::move(mask);
    corpus.samples.push_back(std::move(s));
  }

  // nonzero frequency for every class across the corpus
  std::vector<std::int64_t> freq(class_count, 0);
  for (const auto& s : corpus.samples)
    for (int v : s.mask->data) ++freq[v];
  for (int k = 0; k < class_count; ++k) {
    if (freq[k] == 0)
      throw std::runtime_error("synthetic: class " + std::to_string(k) +
                               " has zero pixels; unexpected for valid parameters");
  }
  corpus.validate();
  return corpus;
}

}  // namespace dualseg
