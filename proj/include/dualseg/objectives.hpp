#pragma once

#include <cstdint>
#include <vector>

#include "dualseg/tensor.hpp"

namespace dualseg {

struct LossWeights {
  real lambda_sup = 0.5;
  real lambda_ct = 0.5;
  real lambda_sta_max = 0.5;
  real tau = 0.95;
  std::int64_t rampup_steps = 0;  // 0: resolved to the run's total optimizer steps

  void validate() const;
};

// Per-pixel outcome of confidence arbitration; exactly one category holds.
enum class Arbitration : std::uint8_t {
  ignored = 0,
  learner_is_global = 1,
  learner_is_local = 2,
  mutual = 3,
};

struct ArbitrationMask {
  std::vector<Arbitration> cat;

  std::size_t size() const { return cat.size(); }
  std::int64_t count_active() const {
    std::int64_t n = 0;
    for (auto c : cat) n += c != Arbitration::ignored;
    return n;
  }
};

// Mean pixel-wise cross-entropy over non-ignored labels; 0 if all ignored.
Tensor supervised_loss(const Tensor& logits, const std::vector<int>& labels);

// argmax / max per pixel from a normalized probability map; ties take the
// lowest class index.
void derive_pseudo(const Tensor& probs_weak, std::vector<int>& pseudo,
                   std::vector<real>& confidence);

// Mean of -log p[pseudo] over pixels with confidence >= tau; exactly 0 when
// no pixel qualifies.
Tensor masked_ce(const Tensor& probs, const std::vector<int>& pseudo,
                 const std::vector<real>& confidence, real tau);

// 1/2 H(p_fp) + 1/4 (H(p_s1) + H(p_s2)) with a shared target set.
Tensor consistency_loss(const Tensor& p_fp, const Tensor& p_s1, const Tensor& p_s2,
                        const std::vector<int>& pseudo, const std::vector<real>& confidence,
                        real tau);
// Per-branch targets (CutMix mixes the strong-view label maps independently).
struct BranchTargets {
  const std::vector<int>* pseudo;
  const std::vector<real>* confidence;
};
Tensor consistency_loss(const Tensor& p_fp, const Tensor& p_s1, const Tensor& p_s2,
                        BranchTargets fp, BranchTargets s1, BranchTargets s2, real tau);

// Per-pixel max of class-softmaxed logits for each student.
void confidence_pair(const Tensor& logits_global, const Tensor& logits_local,
                     std::vector<real>& conf_global, std::vector<real>& conf_local);

ArbitrationMask arbitrate(const std::vector<real>& conf_global,
                          const std::vector<real>& conf_local, real tau, real epsilon = 1e-6);

// lambda_t * mean over non-ignored pixels of MSE(learner, detach(target));
// mutual pixels average both directions, each with the opposite side detached.
Tensor stability_loss(const Tensor& probs_global, const Tensor& probs_local,
                      const ArbitrationMask& mask, real lambda_t);

// lambda_max * (1 - cos(pi * min(t/total, 1))) / 2
real rampup(std::int64_t step, std::int64_t total, real lambda_max);

// lambda_sup*(sup_g+sup_l) + lambda_ct*(ct_g+ct_l) + rampup(step)*sta_core.
// Aborts on non-finite components.
Tensor total_loss(const Tensor& sup_g, const Tensor& sup_l, const Tensor& ct_g,
                  const Tensor& ct_l, const Tensor& sta_core, const LossWeights& weights,
                  std::int64_t step);

struct PseudoAccuracy {
  bool defined = false;  // false: no pixel passed the confidence threshold
  real value = 0.0;
};
// Fraction of confident pixels whose pseudo-label matches ground truth;
// ignore-labeled pixels are excluded. Monitoring only.
PseudoAccuracy pseudo_accuracy(const std::vector<int>& pseudo, const std::vector<int>& ground_truth,
                               const std::vector<real>& confidence, real tau);

}  // namespace dualseg
