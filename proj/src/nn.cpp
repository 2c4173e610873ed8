#include "dualseg/nn.hpp"

#include <cmath>

#include "dualseg/rng.hpp"

namespace dualseg {

std::vector<real> trunc_normal(int count, real stddev, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<real> out(count);
  for (auto& x : out) {
    real z = rng.normal();
    while (std::abs(z) > 2.0) z = rng.normal();
    x = z * stddev;
  }
  return out;
}

Linear::Linear(int in, int out, std::uint64_t seed, real init_std)
    : W(Tensor::param(in, out, trunc_normal(in * out, init_std, seed))),
      b(Tensor::param(1, out, std::vector<real>(out, 0.0))) {}

void Linear::collect(std::vector<NamedParam>& out, const std::string& prefix) const {
  out.push_back({prefix + ".W", W});
  out.push_back({prefix + ".b", b});
}

LayerNormLayer::LayerNormLayer(int dim)
    : gamma(Tensor::param(1, dim, std::vector<real>(dim, 1.0))),
      beta(Tensor::param(1, dim, std::vector<real>(dim, 0.0))) {}

void LayerNormLayer::collect(std::vector<NamedParam>& out, const std::string& prefix) const {
  out.push_back({prefix + ".g", gamma});
  out.push_back({prefix + ".b", beta});
}

TransformerBlock::TransformerBlock(int dim, int heads, int mlp_hidden, std::uint64_t seed)
    : dim(dim),
      heads(heads),
      ln1(dim),
      ln2(dim),
      qkv(dim, 3 * dim, derive_seed(seed, "qkv")),
      proj(dim, dim, derive_seed(seed, "proj")),
      fc1(dim, mlp_hidden, derive_seed(seed, "fc1")),
      fc2(mlp_hidden, dim, derive_seed(seed, "fc2")) {}

Tensor TransformerBlock::forward(const Tensor& x, int batch) const {
  Tensor h = ln1.forward(x);
  Tensor qkv_out = qkv.forward(h);
  Tensor q = slice_cols(qkv_out, 0, dim);
  Tensor k = slice_cols(qkv_out, dim, 2 * dim);
  Tensor v = slice_cols(qkv_out, 2 * dim, 3 * dim);
  Tensor att = block_attention(q, k, v, batch, heads);
  Tensor x1 = add(x, proj.forward(att));
  Tensor h2 = ln2.forward(x1);
  Tensor mlp = fc2.forward(gelu(fc1.forward(h2)));
  return add(x1, mlp);
}

void TransformerBlock::collect(std::vector<NamedParam>& out, const std::string& prefix) const {
  ln1.collect(out, prefix + ".ln1");
  qkv.collect(out, prefix + ".qkv");
  proj.collect(out, prefix + ".proj");
  ln2.collect(out, prefix + ".ln2");
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
}

void AdamW::register_params(const std::vector<NamedParam>& params) {
  for (const auto& p : params) {
    params_.push_back(p);
    slots_.push_back({std::vector<real>(p.tensor.size(), 0.0),
                      std::vector<real>(p.tensor.size(), 0.0)});
  }
}

void AdamW::step(real lr) {
  ++t_;
  const real bc1 = 1.0 - std::pow(beta1_, static_cast<real>(t_));
  const real bc2 = 1.0 - std::pow(beta2_, static_cast<real>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].tensor;
    auto& val = p.value_mut();
    auto& g = p.grad();
    auto& m = slots_[i].m;
    auto& v = slots_[i].v;
    for (size_t j = 0; j < val.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const real mhat = m[j] / bc1;
      const real vhat = v[j] / bc2;
      val[j] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * val[j]);
      g[j] = 0.0;
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace dualseg
