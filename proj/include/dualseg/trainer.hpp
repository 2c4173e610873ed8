#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "dualseg/config.hpp"
#include "dualseg/evaluation.hpp"
#include "dualseg/records.hpp"
#include "dualseg/student.hpp"

namespace dualseg {

struct TrainOptions {
  const Corpus* eval_corpus = nullptr;  // final metrics use this when given
  int stop_after_epoch = -1;            // early clean stop (resume testing)
  bool quiet = true;
};

struct RunArtifacts {
  std::filesystem::path run_dir;
  std::vector<StepRecord> records;
  ModelEvalResult final_eval;
  std::string eval_on;  // "external" or "train_labeled"
};

// base_lr * (1 - step/total)^power, floored at zero.
real lr_schedule(std::int64_t step, std::int64_t total, real base_lr, real power);

// The full training loop. Writes config.json, steps.jsonl, checkpoints/ and
// final_metrics.json under run_dir. Deterministic per config.
RunArtifacts train(const RunConfig& config, const Corpus& corpus,
                   const std::filesystem::path& run_dir, const TrainOptions& opts = {});

// Continues a checkpointed run to its configured epoch count; step-for-step
// identical to the uninterrupted run.
RunArtifacts resume(const std::filesystem::path& run_dir, const Corpus& corpus,
                    const TrainOptions& opts = {});

// Assembled pair of students plus their optimizer; exposed for tests and the
// evaluation CLI (checkpoint loading).
class DualStudentModel {
 public:
  DualStudentModel(const RunConfig& config, const Corpus& corpus);

  Student& global_student() { return *global_; }
  Student& local_student() { return *local_; }
  const Student& global_student() const { return *global_; }
  const Student& local_student() const { return *local_; }
  AdamW& optimizer() { return opt_; }

  std::vector<NamedParam> all_params() const;
  void save_checkpoint(const std::filesystem::path& dir, std::int64_t step,
                       int epochs_completed) const;
  // returns (step, epochs_completed)
  std::pair<std::int64_t, int> load_checkpoint(const std::filesystem::path& dir);

 private:
  std::optional<Student> global_;
  std::optional<Student> local_;
  AdamW opt_;
};

}  // namespace dualseg
