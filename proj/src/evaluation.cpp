#include "dualseg/evaluation.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <map>

#include "dualseg/plot.hpp"

namespace dualseg {

using nlohmann::json;

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.classes != classes)
    throw std::invalid_argument("confusion: class count mismatch in merge");
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  return *this;
}

void accumulate(ConfusionMatrix& cm, const std::vector<int>& prediction,
                const std::vector<int>& ground_truth) {
  if (prediction.size() != ground_truth.size())
    throw std::invalid_argument("confusion: prediction/ground truth size mismatch");
  for (size_t i = 0; i < prediction.size(); ++i) {
    const int g = ground_truth[i];
    if (g == kIgnoreClass) continue;
    const int p = prediction[i];
    if (g < 0 || g >= cm.classes || p < 0 || p >= cm.classes)
      throw std::out_of_range("confusion: class id out of range (gt=" + std::to_string(g) +
                              ", pred=" + std::to_string(p) + ")");
    ++cm.at(g, p);
  }
}

EvalReport iou_from_cm(const ConfusionMatrix& cm) {
  EvalReport r;
  r.pixels = cm.total();
  r.per_class_iou.assign(cm.classes, std::nan(""));
  r.class_present.assign(cm.classes, false);
  real sum = 0.0;
  int present = 0;
  for (int k = 0; k < cm.classes; ++k) {
    std::int64_t row = 0, col = 0;
    for (int j = 0; j < cm.classes; ++j) {
      row += cm.at(k, j);
      col += cm.at(j, k);
    }
    const std::int64_t tp = cm.at(k, k);
    const std::int64_t uni = row + col - tp;
    if (uni == 0) continue;  // absent from both ground truth and prediction
    r.class_present[k] = true;
    r.per_class_iou[k] = static_cast<real>(tp) / static_cast<real>(uni);
    sum += r.per_class_iou[k];
    ++present;
  }
  r.miou = present > 0 ? sum / present : 0.0;
  return r;
}

std::string EvalReport::to_json() const {
  json j;
  json iou = json::array();
  for (size_t k = 0; k < per_class_iou.size(); ++k) {
    if (class_present[k])
      iou.push_back(per_class_iou[k]);
    else
      iou.push_back(nullptr);
  }
  j["per_class_iou"] = iou;
  j["miou"] = miou;
  j["pixels"] = pixels;
  j["config_fingerprint"] = config_fingerprint;
  return j.dump(2);
}

ModelEvalResult evaluate_model(const Student& global_student, const Student& local_student,
                               const Corpus& eval_corpus, const std::string& config_fingerprint) {
  NoGradGuard no_grad;
  const int K = eval_corpus.class_count;
  ConfusionMatrix cm_g(K), cm_l(K), cm_f(K);

  for (const auto& sample : eval_corpus.samples) {
    if (!sample.mask)
      throw std::runtime_error("evaluate: sample '" + sample.id + "' has no ground truth");
    ImageBatch batch(1, sample.image.channels, sample.image.height, sample.image.width);
    batch.set(0, sample.image);

    const StudentOutput out_g = global_student.forward(batch, /*train=*/false);
    const StudentOutput out_l = local_student.forward(batch, /*train=*/false);

    std::vector<int> fused(out_g.pseudo.size());
    for (size_t i = 0; i < fused.size(); ++i)
      fused[i] = out_g.confidence[i] >= out_l.confidence[i] ? out_g.pseudo[i] : out_l.pseudo[i];

    accumulate(cm_g, out_g.pseudo, sample.mask->data);
    accumulate(cm_l, out_l.pseudo, sample.mask->data);
    accumulate(cm_f, fused, sample.mask->data);
  }

  ModelEvalResult result;
  result.global_student = iou_from_cm(cm_g);
  result.local_student = iou_from_cm(cm_l);
  result.fused = iou_from_cm(cm_f);
  result.global_student.config_fingerprint = config_fingerprint;
  result.local_student.config_fingerprint = config_fingerprint;
  result.fused.config_fingerprint = config_fingerprint;
  return result;
}

std::vector<CurvePoint> pseudo_curve(const std::vector<StepRecord>& records, StudentSide side,
                                     int window_epochs) {
  std::map<int, std::pair<real, int>> acc;  // epoch -> (sum, defined count)
  for (const auto& r : records) {
    if (window_epochs > 0 && r.epoch >= window_epochs) continue;
    const real v = side == StudentSide::global_student ? r.pseudo_acc_g : r.pseudo_acc_l;
    auto& slot = acc[r.epoch];
    if (v >= 0.0) {
      slot.first += v;
      slot.second += 1;
    }
  }
  std::vector<CurvePoint> out;
  for (const auto& [epoch, slot] : acc) {
    CurvePoint p;
    p.epoch = epoch;
    p.defined_steps = slot.second;
    p.mean_accuracy = slot.second > 0 ? slot.first / slot.second : 0.0;
    out.push_back(p);
  }
  return out;
}

void render_reports(const std::vector<std::pair<std::string, EvalReport>>& reports,
                    const std::vector<LabeledCurve>& curves,
                    const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);

  {
    std::ofstream csv(out_dir / "reports.csv");
    if (!csv) throw std::runtime_error("render: cannot write reports.csv");
    size_t k_max = 0;
    for (const auto& [_, r] : reports) k_max = std::max(k_max, r.per_class_iou.size());
    csv << "label";
    for (size_t k = 0; k < k_max; ++k) csv << ",iou_" << k;
    csv << ",miou\n";
    for (const auto& [label, r] : reports) {
      csv << label;
      for (size_t k = 0; k < k_max; ++k) {
        csv << ",";
        if (k < r.per_class_iou.size() && r.class_present[k]) csv << format_real(r.per_class_iou[k]);
      }
      csv << "," << format_real(r.miou) << "\n";
    }
  }

  if (!curves.empty()) {
    std::vector<PlotSeries> series;
    for (const auto& c : curves) {
      PlotSeries s;
      s.label = c.label;
      for (const auto& p : c.points) {
        s.x.push_back(static_cast<real>(p.epoch));
        s.y.push_back(p.mean_accuracy);
      }
      series.push_back(std::move(s));
    }
    svg_line_chart(out_dir / "pseudo_accuracy.svg", "Pseudo-label accuracy", "epoch", "accuracy",
                   series);
  }

  if (!reports.empty()) {
    std::vector<std::pair<std::string, real>> bars;
    for (const auto& [label, r] : reports) bars.emplace_back(label, r.miou);
    svg_bar_chart(out_dir / "comparison.svg", "mIoU comparison", bars);
  }
}

}  // namespace dualseg
