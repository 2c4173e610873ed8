#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dualseg/image.hpp"
#include "dualseg/png_io.hpp"

namespace dualseg {

enum class SampleSource { labeled, unlabeled };

struct Sample {
  std::string id;
  Image image;               // values in [0,1]
  std::optional<Mask> mask;  // class ids < K, or kIgnoreClass
  SampleSource source = SampleSource::unlabeled;
};

struct Corpus {
  std::vector<Sample> samples;
  int class_count = 0;
  std::vector<std::string> class_names;
  std::vector<Rgb> palette;
  bool small = false;  // triggers the prolonged schedule when epochs are auto

  const Sample* find(const std::string& id) const;
  void validate() const;  // enforces Sample/Corpus invariants, names offenders
};

struct Ratio {
  std::int64_t num = 1;
  std::int64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
  static Ratio parse(const std::string& s);
};

struct SplitSpec {
  Ratio ratio{1, 8};
  std::uint64_t seed = 0;
  std::vector<std::string> explicit_ids;  // overrides the random draw when set
};

struct Split {
  std::vector<std::string> labeled;
  std::vector<std::string> unlabeled;
};

// Manifest is JSON-lines ({"id","image","mask"?} per record, paths relative to
// its directory) with class metadata in a sibling classes.json.
Corpus load_corpus(const std::filesystem::path& root, const std::filesystem::path& manifest);
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);

// Deterministic labeled/unlabeled partition; |labeled| = max(1, floor(N*ratio)).
Split split_protocol(const Corpus& corpus, const SplitSpec& spec);

// Procedural scenes: background plus K-1 shape classes (polygons, ribbons,
// blobs) with exact masks. Pure function of its arguments.
Corpus generate_synthetic(int count, int class_count, int side, std::uint64_t seed);

}  // namespace dualseg
