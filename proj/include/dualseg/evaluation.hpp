#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dualseg/corpus.hpp"
#include "dualseg/records.hpp"
#include "dualseg/student.hpp"

namespace dualseg {

struct ConfusionMatrix {
  int classes = 0;
  std::vector<std::int64_t> counts;  // row = ground truth, col = prediction

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int class_count)
      : classes(class_count),
        counts(static_cast<size_t>(class_count) * class_count, 0) {}

  std::int64_t& at(int gt, int pred) { return counts[static_cast<size_t>(gt) * classes + pred]; }
  std::int64_t at(int gt, int pred) const {
    return counts[static_cast<size_t>(gt) * classes + pred];
  }
  std::int64_t total() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
};

// Ignore-labeled pixels are skipped; out-of-range classes are an error.
void accumulate(ConfusionMatrix& cm, const std::vector<int>& prediction,
                const std::vector<int>& ground_truth);

struct EvalReport {
  std::vector<real> per_class_iou;   // NaN where the class is absent everywhere
  std::vector<bool> class_present;   // present in ground truth or prediction
  real miou = 0.0;                   // mean over present classes
  std::int64_t pixels = 0;
  std::string config_fingerprint;

  std::string to_json() const;
};

// IoU_k = tp / (gt_k + pred_k - tp); classes absent from both ground truth
// and prediction are excluded from the mean.
EvalReport iou_from_cm(const ConfusionMatrix& cm);

struct ModelEvalResult {
  EvalReport global_student;
  EvalReport local_student;
  EvalReport fused;  // per pixel, the higher-confidence student's prediction
};

// Whole-image inference at native size on a fully labeled corpus.
ModelEvalResult evaluate_model(const Student& global_student, const Student& local_student,
                               const Corpus& eval_corpus,
                               const std::string& config_fingerprint = "");

enum class StudentSide { global_student, local_student };

struct CurvePoint {
  int epoch = 0;
  real mean_accuracy = 0.0;
  int defined_steps = 0;  // steps that had confident pixels
};

// Per-epoch mean pseudo-accuracy for one student over the first
// `window_epochs` epochs (0 = all). Sentinel steps are excluded from the
// mean; an epoch with no defined steps reports 0 with defined_steps = 0.
std::vector<CurvePoint> pseudo_curve(const std::vector<StepRecord>& records, StudentSide side,
                                     int window_epochs = 0);

struct LabeledCurve {
  std::string label;
  std::vector<CurvePoint> points;
};

// CSV tables plus SVG plots; deterministic bytes for identical inputs.
void render_reports(const std::vector<std::pair<std::string, EvalReport>>& reports,
                    const std::vector<LabeledCurve>& curves,
                    const std::filesystem::path& out_dir);

}  // namespace dualseg
