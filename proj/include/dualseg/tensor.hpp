#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace dualseg {

using real = double;

// Reverse-mode autodiff over 2D row-major tensors. Batched ndim data is
// carried as [batch*rows, cols] with the geometry tracked by the caller
// (FeatureMap, StudentOutput). Graphs are built per forward pass and freed
// when the loss tensor goes out of scope; parameters are long-lived leaves
// whose grad buffers accumulate until the optimizer consumes them.

struct TensorNode {
  int rows = 0;
  int cols = 0;
  std::vector<real> val;
  std::vector<real> grad;  // sized lazily, only when requires_grad
  bool requires_grad = false;
  bool is_param = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;  // scatter node.grad into parents

  std::vector<real>& ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

  static Tensor zeros(int rows, int cols);
  static Tensor full(int rows, int cols, real v);
  static Tensor from(int rows, int cols, std::vector<real> data);
  // Trainable leaf; grad persists across graphs until zeroed.
  static Tensor param(int rows, int cols, std::vector<real> data);

  bool defined() const { return node_ != nullptr; }
  int rows() const { return node_->rows; }
  int cols() const { return node_->cols; }
  int size() const { return node_->rows * node_->cols; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_param() const { return node_ && node_->is_param; }

  real operator()(int r, int c) const { return node_->val[static_cast<size_t>(r) * node_->cols + c]; }
  real item() const;

  // Tensor is a handle with shared-pointer semantics: const applies to the
  // handle, not the node, so mutating accessors are const-qualified.
  const std::vector<real>& value() const { return node_->val; }
  std::vector<real>& value_mut() const { return node_->val; }
  std::vector<real>& grad() const { return node_->ensure_grad(); }
  void zero_grad() const {
    if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  // Constant snapshot: same values, no graph edge.
  Tensor detach() const;

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// RAII guard disabling graph construction (eval / monitoring forwards).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_enabled();

// ---- graph ops ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_rowvec(const Tensor& a, const Tensor& v);  // v is [1, cols]
Tensor scale(const Tensor& a, real s);
Tensor transpose(const Tensor& a);
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& a, std::vector<int> idx);
Tensor softmax_rows(const Tensor& a);
Tensor log_clamped(const Tensor& a, real floor = 1e-30);
Tensor gelu(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps = 1e-5);
Tensor dropout(const Tensor& a, real rate, std::uint64_t seed, bool train);

// Scaled dot-product attention over per-image blocks of a [batch*tokens, dim]
// tensor, dim = heads * head_dim. Softmax matrices are cached for backward.
Tensor block_attention(const Tensor& q, const Tensor& k, const Tensor& v, int batch, int heads);

// Linear row resampling (bilinear upsample and grid resize share this form).
struct InterpTap {
  int idx;
  real w;
};
struct InterpPlan {
  int in_rows = 0;
  int out_rows = 0;
  std::vector<std::array<InterpTap, 4>> taps;  // fixed fan-in of 4 per output row

  // Token grid (h x w, patch `stride` pixels each) -> pixel grid (out_h x out_w).
  // Sampling positions live in the padded canvas, so cropping back to the
  // native size is just truncating rows.
  static InterpPlan token_to_pixel(int h, int w, int out_h, int out_w, int stride);
  // Plain grid-to-grid bilinear resize (positional embeddings).
  static InterpPlan grid_resize(int in_h, int in_w, int out_h, int out_w);
};
Tensor row_interp(const Tensor& a, const InterpPlan& plan, int batch);

// Mean of -log(probs[i, target[i]]) over rows with weight[i] > 0, normalized
// by the total weight; exactly zero when no row qualifies.
Tensor masked_nll(const Tensor& probs, const std::vector<int>& target,
                  const std::vector<real>& weight);

void backward(const Tensor& loss);

// ---- plain value helpers (no graph) ----
void rows_argmax(const Tensor& t, std::vector<int>& arg, std::vector<real>& max);
std::uint64_t checksum(const std::vector<real>& v);

}  // namespace dualseg
