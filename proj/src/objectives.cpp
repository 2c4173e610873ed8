#include "dualseg/objectives.hpp"

#include "dualseg/image.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dualseg {

void LossWeights::validate() const {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("weights: tau must be in (0,1)");
  if (lambda_sup < 0 || lambda_ct < 0 || lambda_sta_max < 0)
    throw std::invalid_argument("weights: loss weights must be non-negative");
}

Tensor supervised_loss(const Tensor& logits, const std::vector<int>& labels) {
  const int K = logits.cols();
  if (static_cast<int>(labels.size()) != logits.rows())
    throw std::invalid_argument("supervised_loss: label count mismatch");
  std::vector<real> weight(labels.size(), 0.0);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kIgnoreClass) continue;
    if (labels[i] < 0 || labels[i] >= K)
      throw std::invalid_argument("supervised_loss: label " + std::to_string(labels[i]) +
                                  " >= K=" + std::to_string(K));
    weight[i] = 1.0;
  }
  std::vector<int> target(labels);
  for (auto& t : target)
    if (t == kIgnoreClass) t = 0;  // weight zero, value irrelevant
  return masked_nll(softmax_rows(logits), target, weight);
}

void derive_pseudo(const Tensor& probs_weak, std::vector<int>& pseudo,
                   std::vector<real>& confidence) {
  rows_argmax(probs_weak, pseudo, confidence);
}

Tensor masked_ce(const Tensor& probs, const std::vector<int>& pseudo,
                 const std::vector<real>& confidence, real tau) {
  if (pseudo.size() != confidence.size() ||
      static_cast<int>(pseudo.size()) != probs.rows())
    throw std::invalid_argument("masked_ce: shape mismatch");
  std::vector<real> weight(pseudo.size());
  for (size_t i = 0; i < pseudo.size(); ++i) weight[i] = confidence[i] >= tau ? 1.0 : 0.0;
  return masked_nll(probs, pseudo, weight);
}

Tensor consistency_loss(const Tensor& p_fp, const Tensor& p_s1, const Tensor& p_s2,
                        const std::vector<int>& pseudo, const std::vector<real>& confidence,
                        real tau) {
  BranchTargets t{&pseudo, &confidence};
  return consistency_loss(p_fp, p_s1, p_s2, t, t, t, tau);
}

Tensor consistency_loss(const Tensor& p_fp, const Tensor& p_s1, const Tensor& p_s2,
                        BranchTargets fp, BranchTargets s1, BranchTargets s2, real tau) {
  Tensor h_fp = masked_ce(p_fp, *fp.pseudo, *fp.confidence, tau);
  Tensor h_s1 = masked_ce(p_s1, *s1.pseudo, *s1.confidence, tau);
  Tensor h_s2 = masked_ce(p_s2, *s2.pseudo, *s2.confidence, tau);
  return add(scale(h_fp, 0.5), scale(add(h_s1, h_s2), 0.25));
}

void confidence_pair(const Tensor& logits_global, const Tensor& logits_local,
                     std::vector<real>& conf_global, std::vector<real>& conf_local) {
  if (logits_global.rows() != logits_local.rows() ||
      logits_global.cols() != logits_local.cols())
    throw std::invalid_argument("confidence_pair: shape mismatch");
  NoGradGuard no_grad;  // the thresholding consumers are non-differentiable
  std::vector<int> arg;
  rows_argmax(softmax_rows(logits_global), arg, conf_global);
  rows_argmax(softmax_rows(logits_local), arg, conf_local);
}

ArbitrationMask arbitrate(const std::vector<real>& conf_global,
                          const std::vector<real>& conf_local, real tau, real epsilon) {
  if (conf_global.size() != conf_local.size())
    throw std::invalid_argument("arbitrate: confidence maps differ in size");
  ArbitrationMask mask;
  mask.cat.resize(conf_global.size());
  for (size_t i = 0; i < conf_global.size(); ++i) {
    const real cg = conf_global[i];
    const real cl = conf_local[i];
    const bool g_ok = cg >= tau;
    const bool l_ok = cl >= tau;
    if (g_ok && l_ok) {
      if (std::abs(cg - cl) <= epsilon)
        mask.cat[i] = Arbitration::mutual;
      else if (cg > cl)
        mask.cat[i] = Arbitration::learner_is_local;
      else
        mask.cat[i] = Arbitration::learner_is_global;
    } else if (g_ok) {
      mask.cat[i] = Arbitration::learner_is_local;
    } else if (l_ok) {
      mask.cat[i] = Arbitration::learner_is_global;
    } else {
      mask.cat[i] = Arbitration::ignored;
    }
  }
  return mask;
}

Tensor stability_loss(const Tensor& probs_global, const Tensor& probs_local,
                      const ArbitrationMask& mask, real lambda_t) {
  const int P = probs_global.rows();
  const int K = probs_global.cols();
  if (probs_local.rows() != P || probs_local.cols() != K)
    throw std::invalid_argument("stability_loss: probability maps differ in shape");
  if (static_cast<int>(mask.size()) != P)
    throw std::invalid_argument("stability_loss: mask size mismatch");

  const std::int64_t active = mask.count_active();
  if (active == 0) return Tensor::zeros(1, 1);

  // direction weights: 1 for the single learner, 1/2 each on mutual pixels
  std::vector<real> w_local_learns(P, 0.0);  // target: global (detached)
  std::vector<real> w_global_learns(P, 0.0);
  for (int i = 0; i < P; ++i) {
    switch (mask.cat[i]) {
      case Arbitration::learner_is_local: w_local_learns[i] = 1.0; break;
      case Arbitration::learner_is_global: w_global_learns[i] = 1.0; break;
      case Arbitration::mutual:
        w_local_learns[i] = 0.5;
        w_global_learns[i] = 0.5;
        break;
      case Arbitration::ignored: break;
    }
  }

  const Tensor ones_k = Tensor::full(K, 1, 1.0 / K);
  auto directional = [&](const Tensor& learner, const Tensor& target,
                         const std::vector<real>& w) {
    Tensor diff = sub(learner, target.detach());
    Tensor per_pixel = matmul(mul(diff, diff), ones_k);  // [P,1] mean over K
    return matmul(transpose(Tensor::from(P, 1, w)), per_pixel);
  };

  Tensor sum = add(directional(probs_local, probs_global, w_local_learns),
                   directional(probs_global, probs_local, w_global_learns));
  return scale(sum, lambda_t / static_cast<real>(active));
}

real rampup(std::int64_t step, std::int64_t total, real lambda_max) {
  if (total <= 0) throw std::invalid_argument("rampup: total must be positive");
  const real progress = std::min<real>(static_cast<real>(step) / static_cast<real>(total), 1.0);
  return lambda_max * (1.0 - std::cos(M_PI * progress)) / 2.0;
}

Tensor total_loss(const Tensor& sup_g, const Tensor& sup_l, const Tensor& ct_g,
                  const Tensor& ct_l, const Tensor& sta_core, const LossWeights& weights,
                  std::int64_t step) {
  weights.validate();
  const struct {
    const char* name;
    const Tensor* t;
  } parts[] = {{"sup_global", &sup_g}, {"sup_local", &sup_l},   {"ct_global", &ct_g},
               {"ct_local", &ct_l},    {"sta_core", &sta_core}};
  for (const auto& p : parts) {
    if (!std::isfinite(p.t->item()))
      throw std::runtime_error(std::string("total_loss: non-finite component ") + p.name + " = " +
                               std::to_string(p.t->item()));
  }
  Tensor sup = scale(add(sup_g, sup_l), weights.lambda_sup);
  Tensor ct = scale(add(ct_g, ct_l), weights.lambda_ct);
  Tensor sta = scale(sta_core, rampup(step, weights.rampup_steps, weights.lambda_sta_max));
  return add(add(sup, ct), sta);
}

PseudoAccuracy pseudo_accuracy(const std::vector<int>& pseudo,
                               const std::vector<int>& ground_truth,
                               const std::vector<real>& confidence, real tau) {
  if (pseudo.size() != ground_truth.size() || pseudo.size() != confidence.size())
    throw std::invalid_argument("pseudo_accuracy: size mismatch");
  std::int64_t hit = 0, total = 0;
  for (size_t i = 0; i < pseudo.size(); ++i) {
    if (ground_truth[i] == kIgnoreClass) continue;
    if (confidence[i] < tau) continue;
    ++total;
    hit += pseudo[i] == ground_truth[i];
  }
  PseudoAccuracy acc;
  if (total == 0) return acc;  // no-confident-pixels sentinel
  acc.defined = true;
  acc.value = static_cast<real>(hit) / static_cast<real>(total);
  return acc;
}

}  // namespace dualseg
