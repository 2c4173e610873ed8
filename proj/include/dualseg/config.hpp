#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dualseg/augmentation.hpp"
#include "dualseg/corpus.hpp"
#include "dualseg/objectives.hpp"
#include "dualseg/student.hpp"

namespace dualseg {

struct Toggles {
  bool use_esg = true;   // global student: text-projected vs learnable queries
  bool use_isg = true;   // local student: 0.02-init embedding vs plain head init
  bool use_ct = true;
  bool use_sta = true;
  enum class Homogeneous { off, both_global, both_local };
  Homogeneous homogeneous_students = Homogeneous::off;
};

// Where a run's corpus comes from; snapshotted so resume can rebuild it.
struct DataConfig {
  std::string manifest;  // when set, load from disk
  bool synth = false;
  int synth_count = 96;
  int synth_classes = 4;
  int synth_side = 64;
  std::uint64_t synth_seed = 0;
  std::string eval_manifest;  // optional held-out corpus
};

struct RunConfig {
  SplitSpec split;
  LossWeights weights;
  BackboneSpec backbone_global = BackboneSpec::tiny_global();
  BackboneSpec backbone_local = BackboneSpec::tiny_local();
  int epochs = 0;  // 0: 80, or 150 when the corpus is flagged small
  int batch_labeled = 8;
  int batch_unlabeled = 8;
  real base_lr = 1e-4;
  real weight_decay = 0.01;
  real poly_power = 0.9;
  std::uint64_t seed = 0;
  Toggles toggles;
  int train_size = 64;
  real feature_perturb_rate = 0.5;
  StrongAugParams strong_aug;
  std::string concepts_path;
  std::string template_str = "a remote sensing image of {}.";
  int text_dim = 512;
  std::string text_encoder_checkpoint;
  int checkpoint_every_epochs = 0;  // 0: final snapshot only
  DataConfig data;

  int resolved_epochs(const Corpus& corpus) const {
    if (epochs > 0) return epochs;
    return corpus.small ? 150 : 80;
  }
  void validate() const;
};

std::string run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

// Dotted-path key=value override ("toggles.use_sta=false", "split.ratio=1/8").
// Unknown keys are an error.
void apply_overrides(std::string& config_json, const std::vector<std::string>& overrides);

std::string config_fingerprint(const RunConfig& config);

// Builds (or loads) the corpora named by config.data.
Corpus realize_corpus(const DataConfig& data);

}  // namespace dualseg
