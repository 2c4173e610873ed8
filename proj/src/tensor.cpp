#include "dualseg/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "dualseg/rng.hpp"

namespace dualseg {

using EMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using MapC = Eigen::Map<const EMat>;

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<TensorNode> make_node(int r, int c) {
  auto n = std::make_shared<TensorNode>();
  n->rows = r;
  n->cols = c;
  n->val.assign(static_cast<size_t>(r) * c, 0.0);
  return n;
}

MapC cmap(const Tensor& t) { return MapC(t.value().data(), t.rows(), t.cols()); }
MapM gmap(Tensor& t) { return MapM(t.grad().data(), t.rows(), t.cols()); }

// Result node wiring: tracks parents only while grad mode is on and at least
// one input needs gradients.
Tensor make_result(int r, int c, std::vector<const Tensor*> inputs,
                   std::function<void(TensorNode&)> backprop) {
  auto n = make_node(r, c);
  bool need = false;
  if (g_grad_enabled) {
    for (const Tensor* t : inputs) need = need || t->requires_grad();
  }
  if (need) {
    n->requires_grad = true;
    for (const Tensor* t : inputs) n->parents.push_back(t->node());
    n->backprop = std::move(backprop);
  }
  return Tensor(n);
}

void check(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor Tensor::zeros(int rows, int cols) { return Tensor(make_node(rows, cols)); }

Tensor Tensor::full(int rows, int cols, real v) {
  auto n = make_node(rows, cols);
  std::fill(n->val.begin(), n->val.end(), v);
  return Tensor(n);
}

Tensor Tensor::from(int rows, int cols, std::vector<real> data) {
  check(static_cast<size_t>(rows) * cols == data.size(), "Tensor::from: size mismatch");
  auto n = make_node(rows, cols);
  n->val = std::move(data);
  return Tensor(n);
}

Tensor Tensor::param(int rows, int cols, std::vector<real> data) {
  Tensor t = from(rows, cols, std::move(data));
  t.node()->requires_grad = true;
  t.node()->is_param = true;
  t.node()->ensure_grad();
  return t;
}

real Tensor::item() const {
  check(size() == 1, "item(): tensor is not scalar");
  return node_->val[0];
}

Tensor Tensor::detach() const {
  auto n = make_node(rows(), cols());
  n->val = node_->val;
  return Tensor(n);
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.cols() == b.rows(), "matmul: inner dims differ");
  Tensor out = make_result(
      a.rows(), b.cols(), {&a, &b},
      [a, b](TensorNode& self) mutable {
        MapC g(self.grad.data(), self.rows, self.cols);
        if (a.requires_grad()) {
          MapM(a.grad().data(), a.rows(), a.cols()).noalias() += g * cmap(b).transpose();
        }
        if (b.requires_grad()) {
          MapM(b.grad().data(), b.rows(), b.cols()).noalias() += cmap(a).transpose() * g;
        }
      });
  MapM(out.value_mut().data(), out.rows(), out.cols()).noalias() = cmap(a) * cmap(b);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Tensor out = make_result(a.rows(), a.cols(), {&a, &b}, [a, b](TensorNode& self) mutable {
    for (size_t i = 0; i < self.grad.size(); ++i) {
      if (a.requires_grad()) a.grad()[i] += self.grad[i];
      if (b.requires_grad()) b.grad()[i] += self.grad[i];
    }
  });
  const auto& av = a.value();
  const auto& bv = b.value();
  auto& ov = out.value_mut();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Tensor out = make_result(a.rows(), a.cols(), {&a, &b}, [a, b](TensorNode& self) mutable {
    for (size_t i = 0; i < self.grad.size(); ++i) {
      if (a.requires_grad()) a.grad()[i] += self.grad[i];
      if (b.requires_grad()) b.grad()[i] -= self.grad[i];
    }
  });
  const auto& av = a.value();
  const auto& bv = b.value();
  auto& ov = out.value_mut();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Tensor out = make_result(a.rows(), a.cols(), {&a, &b}, [a, b](TensorNode& self) mutable {
    for (size_t i = 0; i < self.grad.size(); ++i) {
      if (a.requires_grad()) a.grad()[i] += self.grad[i] * b.value()[i];
      if (b.requires_grad()) b.grad()[i] += self.grad[i] * a.value()[i];
    }
  });
  const auto& av = a.value();
  const auto& bv = b.value();
  auto& ov = out.value_mut();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  check(v.rows() == 1 && v.cols() == a.cols(), "add_rowvec: v must be [1, cols]");
  Tensor out = make_result(a.rows(), a.cols(), {&a, &v}, [a, v](TensorNode& self) mutable {
    const int R = self.rows, C = self.cols;
    if (a.requires_grad()) {
      auto& ag = a.grad();
      for (size_t i = 0; i < self.grad.size(); ++i) ag[i] += self.grad[i];
    }
    if (v.requires_grad()) {
      auto& vg = v.grad();
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) vg[c] += self.grad[static_cast<size_t>(r) * C + c];
    }
  });
  const int C = a.cols();
  const auto& av = a.value();
  const auto& vv = v.value();
  auto& ov = out.value_mut();
  for (int r = 0; r < a.rows(); ++r)
    for (int c = 0; c < C; ++c) ov[static_cast<size_t>(r) * C + c] = av[static_cast<size_t>(r) * C + c] + vv[c];
  return out;
}

Tensor scale(const Tensor& a, real s) {
  Tensor out = make_result(a.rows(), a.cols(), {&a}, [a, s](TensorNode& self) mutable {
    auto& ag = a.grad();
    for (size_t i = 0; i < self.grad.size(); ++i) ag[i] += self.grad[i] * s;
  });
  const auto& av = a.value();
  auto& ov = out.value_mut();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * s;
  return out;
}

Tensor transpose(const Tensor& a) {
  Tensor out = make_result(a.cols(), a.rows(), {&a}, [a](TensorNode& self) mutable {
    auto& ag = a.grad();
    const int R = self.rows, C = self.cols;  // transposed dims
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c)
        ag[static_cast<size_t>(c) * R + r] += self.grad[static_cast<size_t>(r) * C + c];
  });
  MapM(out.value_mut().data(), out.rows(), out.cols()) = cmap(a).transpose();
  return out;
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  check(0 <= c0 && c0 < c1 && c1 <= a.cols(), "slice_cols: bad range");
  const int W = c1 - c0;
  Tensor out = make_result(a.rows(), W, {&a}, [a, c0, W](TensorNode& self) mutable {
    auto& ag = a.grad();
    const int AC = a.cols();
    for (int r = 0; r < self.rows; ++r)
      for (int c = 0; c < W; ++c)
        ag[static_cast<size_t>(r) * AC + c0 + c] += self.grad[static_cast<size_t>(r) * W + c];
  });
  const auto& av = a.value();
  auto& ov = out.value_mut();
  const int AC = a.cols();
  for (int r = 0; r < a.rows(); ++r)
    for (int c = 0; c < W; ++c) ov[static_cast<size_t>(r) * W + c] = av[static_cast<size_t>(r) * AC + c0 + c];
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_cols: empty");
  const int R = parts[0].rows();
  int C = 0;
  for (const auto& p : parts) {
    check(p.rows() == R, "concat_cols: row mismatch");
    C += p.cols();
  }
  std::vector<const Tensor*> in;
  for (const auto& p : parts) in.push_back(&p);
  std::vector<Tensor> held = parts;
  Tensor out = make_result(R, C, in, [held, C](TensorNode& self) mutable {
    int off = 0;
    for (auto& p : held) {
      if (p.requires_grad()) {
        auto& pg = p.grad();
        const int PC = p.cols();
        for (int r = 0; r < self.rows; ++r)
          for (int c = 0; c < PC; ++c)
            pg[static_cast<size_t>(r) * PC + c] += self.grad[static_cast<size_t>(r) * C + off + c];
      }
      off += p.cols();
    }
  });
  auto& ov = out.value_mut();
  int off = 0;
  for (const auto& p : parts) {
    const auto& pv = p.value();
    const int PC = p.cols();
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < PC; ++c) ov[static_cast<size_t>(r) * C + off + c] = pv[static_cast<size_t>(r) * PC + c];
    off += PC;
  }
  return out;
}

Tensor gather_rows(const Tensor& a, std::vector<int> idx) {
  const int C = a.cols();
  auto idx_shared = std::make_shared<std::vector<int>>(std::move(idx));
  Tensor out = make_result(static_cast<int>(idx_shared->size()), C, {&a},
                           [a, idx_shared, C](TensorNode& self) mutable {
                             auto& ag = a.grad();
                             for (int r = 0; r < self.rows; ++r) {
                               const int src = (*idx_shared)[r];
                               for (int c = 0; c < C; ++c)
                                 ag[static_cast<size_t>(src) * C + c] += self.grad[static_cast<size_t>(r) * C + c];
                             }
                           });
  const auto& av = a.value();
  auto& ov = out.value_mut();
  for (size_t r = 0; r < idx_shared->size(); ++r) {
    const int src = (*idx_shared)[r];
    check(0 <= src && src < a.rows(), "gather_rows: index out of range");
    std::copy_n(av.begin() + static_cast<size_t>(src) * C, C, ov.begin() + r * C);
  }
  return out;
}

Tensor softmax_rows(const Tensor& a) {
  const int R = a.rows(), C = a.cols();
  auto n = make_node(R, C);
  const auto& av = a.value();
  for (int r = 0; r < R; ++r) {
    const real* row = av.data() + static_cast<size_t>(r) * C;
    real m = row[0];
    for (int c = 1; c < C; ++c) m = std::max(m, row[c]);
    real sum = 0.0;
    real* out = n->val.data() + static_cast<size_t>(r) * C;
    for (int c = 0; c < C; ++c) {
      out[c] = std::exp(row[c] - m);
      sum += out[c];
    }
    for (int c = 0; c < C; ++c) out[c] /= sum;
  }
  Tensor result(n);
  if (g_grad_enabled && a.requires_grad()) {
    n->requires_grad = true;
    n->parents.push_back(a.node());
    auto y = n;  // cached output (weak-free: node owns its values)
    n->backprop = [a, R, C](TensorNode& self) mutable {
      auto& ag = a.grad();
      for (int r = 0; r < R; ++r) {
        const real* yv = self.val.data() + static_cast<size_t>(r) * C;
        const real* gy = self.grad.data() + static_cast<size_t>(r) * C;
        real dot = 0.0;
        for (int c = 0; c < C; ++c) dot += gy[c] * yv[c];
        real* ga = ag.data() + static_cast<size_t>(r) * C;
        for (int c = 0; c < C; ++c) ga[c] += yv[c] * (gy[c] - dot);
      }
    };
  }
  return result;
}

Tensor log_clamped(const Tensor& a, real floor) {
  Tensor out = make_result(a.rows(), a.cols(), {&a}, [a, floor](TensorNode& self) mutable {
    auto& ag = a.grad();
    const auto& av = a.value();
    for (size_t i = 0; i < self.grad.size(); ++i) ag[i] += self.grad[i] / std::max(av[i], floor);
  });
  const auto& av = a.value();
  auto& ov = out.value_mut();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::log(std::max(av[i], floor));
  return out;
}

Tensor gelu(const Tensor& a) {
  Tensor out = make_result(a.rows(), a.cols(), {&a}, [a](TensorNode& self) mutable {
    auto& ag = a.grad();
    const auto& av = a.value();
    constexpr real inv_sqrt2 = 0.7071067811865475244;
    constexpr real inv_sqrt2pi = 0.3989422804014326779;
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const real x = av[i];
      const real phi = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      const real pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      ag[i] += self.grad[i] * (phi + x * pdf);
    }
  });
  const auto& av = a.value();
  auto& ov = out.value_mut();
  constexpr real inv_sqrt2 = 0.7071067811865475244;
  for (size_t i = 0; i < ov.size(); ++i)
    ov[i] = av[i] * 0.5 * (1.0 + std::erf(av[i] * inv_sqrt2));
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps) {
  const int R = x.rows(), C = x.cols();
  check(gamma.rows() == 1 && gamma.cols() == C, "layer_norm: gamma shape");
  check(beta.rows() == 1 && beta.cols() == C, "layer_norm: beta shape");

  auto xhat = std::make_shared<std::vector<real>>(static_cast<size_t>(R) * C);
  auto istd = std::make_shared<std::vector<real>>(R);
  const auto& xv = x.value();
  for (int r = 0; r < R; ++r) {
    const real* row = xv.data() + static_cast<size_t>(r) * C;
    real mean = 0.0;
    for (int c = 0; c < C; ++c) mean += row[c];
    mean /= C;
    real var = 0.0;
    for (int c = 0; c < C; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= C;
    const real is = 1.0 / std::sqrt(var + eps);
    (*istd)[r] = is;
    real* xh = xhat->data() + static_cast<size_t>(r) * C;
    for (int c = 0; c < C; ++c) xh[c] = (row[c] - mean) * is;
  }

  Tensor out = make_result(
      R, C, {&x, &gamma, &beta},
      [x, gamma, beta, xhat, istd, R, C](TensorNode& self) mutable {
        const auto& gv = gamma.value();
        for (int r = 0; r < R; ++r) {
          const real* xh = xhat->data() + static_cast<size_t>(r) * C;
          const real* gy = self.grad.data() + static_cast<size_t>(r) * C;
          if (gamma.requires_grad()) {
            auto& gg = gamma.grad();
            for (int c = 0; c < C; ++c) gg[c] += gy[c] * xh[c];
          }
          if (beta.requires_grad()) {
            auto& bg = beta.grad();
            for (int c = 0; c < C; ++c) bg[c] += gy[c];
          }
          if (x.requires_grad()) {
            real mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (int c = 0; c < C; ++c) {
              const real dxh = gy[c] * gv[c];
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * xh[c];
            }
            mean_dxhat /= C;
            mean_dxhat_xhat /= C;
            auto& xg = x.grad();
            real* gx = xg.data() + static_cast<size_t>(r) * C;
            const real is = (*istd)[r];
            for (int c = 0; c < C; ++c) {
              const real dxh = gy[c] * gv[c];
              gx[c] += is * (dxh - mean_dxhat - xh[c] * mean_dxhat_xhat);
            }
          }
        }
      });
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  auto& ov = out.value_mut();
  for (int r = 0; r < R; ++r) {
    const real* xh = xhat->data() + static_cast<size_t>(r) * C;
    real* o = ov.data() + static_cast<size_t>(r) * C;
    for (int c = 0; c < C; ++c) o[c] = xh[c] * gv[c] + bv[c];
  }
  return out;
}

Tensor dropout(const Tensor& a, real rate, std::uint64_t seed, bool train) {
  check(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1)");
  if (!train || rate == 0.0) return a;
  auto mask = std::make_shared<std::vector<real>>(a.value().size());
  Rng rng(seed);
  const real keep_scale = 1.0 / (1.0 - rate);
  for (auto& m : *mask) m = rng.uniform() < rate ? 0.0 : keep_scale;

  Tensor out = make_result(a.rows(), a.cols(), {&a}, [a, mask](TensorNode& self) mutable {
    auto& ag = a.grad();
    for (size_t i = 0; i < self.grad.size(); ++i) ag[i] += self.grad[i] * (*mask)[i];
  });
  const auto& av = a.value();
  auto& ov = out.value_mut();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * (*mask)[i];
  return out;
}

Tensor block_attention(const Tensor& q, const Tensor& k, const Tensor& v, int batch, int heads) {
  const int BN = q.rows(), D = q.cols();
  check(k.rows() == BN && v.rows() == BN && k.cols() == D && v.cols() == D,
        "block_attention: shape mismatch");
  check(batch > 0 && BN % batch == 0, "block_attention: rows not divisible by batch");
  check(D % heads == 0, "block_attention: dim not divisible by heads");
  const int N = BN / batch;
  const int HD = D / heads;
  const real att_scale = 1.0 / std::sqrt(static_cast<real>(HD));

  // cached softmax matrices, one [N,N] per (image, head)
  auto attn = std::make_shared<std::vector<EMat>>();
  attn->reserve(static_cast<size_t>(batch) * heads);

  auto n = make_node(BN, D);
  {
    MapC qm(q.value().data(), BN, D), km(k.value().data(), BN, D), vm(v.value().data(), BN, D);
    MapM om(n->val.data(), BN, D);
    for (int b = 0; b < batch; ++b) {
      for (int h = 0; h < heads; ++h) {
        auto Qb = qm.block(b * N, h * HD, N, HD);
        auto Kb = km.block(b * N, h * HD, N, HD);
        auto Vb = vm.block(b * N, h * HD, N, HD);
        EMat S = (Qb * Kb.transpose()) * att_scale;
        for (int r = 0; r < N; ++r) {
          real m = S.row(r).maxCoeff();
          S.row(r) = (S.row(r).array() - m).exp();
          S.row(r) /= S.row(r).sum();
        }
        om.block(b * N, h * HD, N, HD).noalias() = S * Vb;
        attn->push_back(std::move(S));
      }
    }
  }
  Tensor out(n);
  const bool need = g_grad_enabled && (q.requires_grad() || k.requires_grad() || v.requires_grad());
  if (need) {
    n->requires_grad = true;
    n->parents = {q.node(), k.node(), v.node()};
    n->backprop = [q, k, v, attn, batch, heads, N, HD, D, att_scale](TensorNode& self) mutable {
      MapC go(self.grad.data(), self.rows, self.cols);
      MapC qm(q.value().data(), self.rows, D), km(k.value().data(), self.rows, D),
          vm(v.value().data(), self.rows, D);
      for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < heads; ++h) {
          const EMat& A = (*attn)[static_cast<size_t>(b) * heads + h];
          auto Qb = qm.block(b * N, h * HD, N, HD);
          auto Kb = km.block(b * N, h * HD, N, HD);
          auto Vb = vm.block(b * N, h * HD, N, HD);
          auto gOb = go.block(b * N, h * HD, N, HD);
          // dV = A^T dO
          if (v.requires_grad()) {
            MapM(v.grad().data(), self.rows, D).block(b * N, h * HD, N, HD).noalias() +=
                A.transpose() * gOb;
          }
          if (q.requires_grad() || k.requires_grad()) {
            EMat dA = gOb * Vb.transpose();                    // [N,N]
            EMat dS(N, N);
            for (int r = 0; r < N; ++r) {
              const real dot = (dA.row(r).array() * A.row(r).array()).sum();
              dS.row(r) = A.row(r).array() * (dA.row(r).array() - dot);
            }
            dS *= att_scale;
            if (q.requires_grad())
              MapM(q.grad().data(), self.rows, D).block(b * N, h * HD, N, HD).noalias() += dS * Kb;
            if (k.requires_grad())
              MapM(k.grad().data(), self.rows, D).block(b * N, h * HD, N, HD).noalias() +=
                  dS.transpose() * Qb;
          }
        }
      }
    };
  }
  return out;
}

namespace {
// shared bilinear tap builder: out coordinate -> continuous source coordinate
void fill_taps(InterpPlan& plan, int in_h, int in_w, int out_h, int out_w,
               const std::function<real(int)>& src_y, const std::function<real(int)>& src_x) {
  plan.in_rows = in_h * in_w;
  plan.out_rows = out_h * out_w;
  plan.taps.resize(static_cast<size_t>(plan.out_rows));
  for (int oy = 0; oy < out_h; ++oy) {
    real sy = std::clamp<real>(src_y(oy), 0.0, in_h - 1.0);
    int y0 = static_cast<int>(std::floor(sy));
    int y1 = std::min(y0 + 1, in_h - 1);
    real fy = sy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      real sx = std::clamp<real>(src_x(ox), 0.0, in_w - 1.0);
      int x0 = static_cast<int>(std::floor(sx));
      int x1 = std::min(x0 + 1, in_w - 1);
      real fx = sx - x0;
      auto& t = plan.taps[static_cast<size_t>(oy) * out_w + ox];
      t[0] = {y0 * in_w + x0, (1 - fy) * (1 - fx)};
      t[1] = {y0 * in_w + x1, (1 - fy) * fx};
      t[2] = {y1 * in_w + x0, fy * (1 - fx)};
      t[3] = {y1 * in_w + x1, fy * fx};
    }
  }
}
}  // namespace

InterpPlan InterpPlan::token_to_pixel(int h, int w, int out_h, int out_w, int stride) {
  InterpPlan plan;
  fill_taps(
      plan, h, w, out_h, out_w,
      [stride](int oy) { return (oy + 0.5) / stride - 0.5; },
      [stride](int ox) { return (ox + 0.5) / stride - 0.5; });
  return plan;
}

InterpPlan InterpPlan::grid_resize(int in_h, int in_w, int out_h, int out_w) {
  InterpPlan plan;
  const real ry = static_cast<real>(in_h) / out_h;
  const real rx = static_cast<real>(in_w) / out_w;
  fill_taps(
      plan, in_h, in_w, out_h, out_w,
      [ry](int oy) { return (oy + 0.5) * ry - 0.5; },
      [rx](int ox) { return (ox + 0.5) * rx - 0.5; });
  return plan;
}

Tensor row_interp(const Tensor& a, const InterpPlan& plan, int batch) {
  check(a.rows() == plan.in_rows * batch, "row_interp: input rows mismatch");
  const int C = a.cols();
  auto taps = std::make_shared<std::vector<std::array<InterpTap, 4>>>(plan.taps);
  const int in_rows = plan.in_rows, out_rows = plan.out_rows;

  Tensor out = make_result(
      out_rows * batch, C, {&a},
      [a, taps, in_rows, out_rows, C, batch](TensorNode& self) mutable {
        auto& ag = a.grad();
        for (int b = 0; b < batch; ++b) {
          const size_t in_off = static_cast<size_t>(b) * in_rows * C;
          const size_t out_off = static_cast<size_t>(b) * out_rows * C;
          for (int r = 0; r < out_rows; ++r) {
            const real* gy = self.grad.data() + out_off + static_cast<size_t>(r) * C;
            for (const auto& tap : (*taps)[r]) {
              if (tap.w == 0.0) continue;
              real* gx = ag.data() + in_off + static_cast<size_t>(tap.idx) * C;
              for (int c = 0; c < C; ++c) gx[c] += tap.w * gy[c];
            }
          }
        }
      });
  const auto& av = a.value();
  auto& ov = out.value_mut();
  for (int b = 0; b < batch; ++b) {
    const size_t in_off = static_cast<size_t>(b) * in_rows * C;
    const size_t out_off = static_cast<size_t>(b) * out_rows * C;
    for (int r = 0; r < out_rows; ++r) {
      real* o = ov.data() + out_off + static_cast<size_t>(r) * C;
      std::fill_n(o, C, 0.0);
      for (const auto& tap : plan.taps[r]) {
        if (tap.w == 0.0) continue;
        const real* x = av.data() + in_off + static_cast<size_t>(tap.idx) * C;
        for (int c = 0; c < C; ++c) o[c] += tap.w * x[c];
      }
    }
  }
  return out;
}

Tensor masked_nll(const Tensor& probs, const std::vector<int>& target,
                  const std::vector<real>& weight) {
  const int R = probs.rows(), C = probs.cols();
  check(static_cast<int>(target.size()) == R, "masked_nll: target size");
  check(static_cast<int>(weight.size()) == R, "masked_nll: weight size");
  real wsum = 0.0;
  for (real w : weight) wsum += w;

  auto tgt = std::make_shared<std::vector<int>>(target);
  auto wgt = std::make_shared<std::vector<real>>(weight);

  Tensor out =
      make_result(1, 1, {&probs}, [probs, tgt, wgt, wsum, C](TensorNode& self) mutable {
        if (wsum <= 0.0) return;
        auto& pg = probs.grad();
        const auto& pv = probs.value();
        const real g = self.grad[0];
        for (size_t r = 0; r < tgt->size(); ++r) {
          const real w = (*wgt)[r];
          if (w <= 0.0) continue;
          const int t = (*tgt)[r];
          const size_t i = r * C + t;
          pg[i] += g * (-w / (wsum * std::max(pv[i], 1e-30)));
        }
      });
  real loss = 0.0;
  if (wsum > 0.0) {
    const auto& pv = probs.value();
    for (int r = 0; r < R; ++r) {
      const real w = weight[r];
      if (w <= 0.0) continue;
      const int t = target[r];
      check(0 <= t && t < C, "masked_nll: target class out of range");
      loss -= w * std::log(std::max(pv[static_cast<size_t>(r) * C + t], 1e-30));
    }
    loss /= wsum;
  }
  out.value_mut()[0] = loss;
  return out;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw std::invalid_argument("backward: loss must be a defined scalar");
  if (!loss.requires_grad()) return;

  // iterative topological order
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next].get();
      ++next;
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

void rows_argmax(const Tensor& t, std::vector<int>& arg, std::vector<real>& max) {
  const int R = t.rows(), C = t.cols();
  arg.resize(R);
  max.resize(R);
  const auto& v = t.value();
  for (int r = 0; r < R; ++r) {
    const real* row = v.data() + static_cast<size_t>(r) * C;
    int best = 0;
    for (int c = 1; c < C; ++c)
      if (row[c] > row[best]) best = c;  // ties keep the lowest index
    arg[r] = best;
    max[r] = row[best];
  }
}

std::uint64_t checksum(const std::vector<real>& v) {
  std::uint64_t h = 1469598103934665603ull;
  for (real x : v) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(x));
    std::memcpy(&bits, &x, sizeof(bits));
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace dualseg
