#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dualseg/tensor.hpp"

namespace dualseg {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// ViT-style init: normal(0, std) truncated at two standard deviations.
std::vector<real> trunc_normal(int count, real stddev, std::uint64_t seed);

struct Linear {
  Tensor W;  // [in, out]
  Tensor b;  // [1, out]

  Linear() = default;
  Linear(int in, int out, std::uint64_t seed, real init_std = 0.02);
  Tensor forward(const Tensor& x) const { return add_rowvec(matmul(x, W), b); }
  void collect(std::vector<NamedParam>& out, const std::string& prefix) const;
};

struct LayerNormLayer {
  Tensor gamma;  // [1, dim]
  Tensor beta;   // [1, dim]

  LayerNormLayer() = default;
  explicit LayerNormLayer(int dim);
  Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }
  void collect(std::vector<NamedParam>& out, const std::string& prefix) const;
};

// Pre-norm transformer encoder block.
struct TransformerBlock {
  int dim = 0;
  int heads = 0;
  LayerNormLayer ln1, ln2;
  Linear qkv;   // [dim, 3*dim]
  Linear proj;  // [dim, dim]
  Linear fc1;   // [dim, mlp_ratio*dim]
  Linear fc2;

  TransformerBlock() = default;
  TransformerBlock(int dim, int heads, int mlp_hidden, std::uint64_t seed);
  Tensor forward(const Tensor& x, int batch) const;
  void collect(std::vector<NamedParam>& out, const std::string& prefix) const;
};

// Adam with decoupled weight decay. step() consumes and zeroes gradients.
class AdamW {
 public:
  struct Slot {
    std::vector<real> m, v;
  };

  AdamW(real beta1 = 0.9, real beta2 = 0.999, real eps = 1e-8, real weight_decay = 0.01)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void register_params(const std::vector<NamedParam>& params);
  void step(real lr);
  void zero_grad();

  std::int64_t step_count() const { return t_; }
  const std::vector<NamedParam>& params() const { return params_; }
  std::vector<Slot>& slots() { return slots_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  real weight_decay() const { return weight_decay_; }

 private:
  real beta1_, beta2_, eps_, weight_decay_;
  std::int64_t t_ = 0;
  std::vector<NamedParam> params_;
  std::vector<Slot> slots_;
};

}  // namespace dualseg
