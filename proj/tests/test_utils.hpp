#pragma once

#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "dualseg/rng.hpp"
#include "dualseg/tensor.hpp"

namespace dualseg::testutil {

inline Tensor random_tensor(int rows, int cols, std::uint64_t seed, real lo = -1.0,
                            real hi = 1.0) {
  Rng rng(seed);
  std::vector<real> v(static_cast<size_t>(rows) * cols);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(rows, cols, std::move(v));
}

inline Tensor random_param(int rows, int cols, std::uint64_t seed, real lo = -1.0, real hi = 1.0) {
  Rng rng(seed);
  std::vector<real> v(static_cast<size_t>(rows) * cols);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::param(rows, cols, std::move(v));
}

// random probability rows (softmax of uniform logits)
inline Tensor random_probs(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<real> v(static_cast<size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    real sum = 0.0;
    for (int c = 0; c < cols; ++c) {
      real e = std::exp(rng.uniform(-2.0, 2.0));
      v[static_cast<size_t>(r) * cols + c] = e;
      sum += e;
    }
    for (int c = 0; c < cols; ++c) v[static_cast<size_t>(r) * cols + c] /= sum;
  }
  return Tensor::from(rows, cols, std::move(v));
}

inline real fd_gradient(const std::function<real()>& f, Tensor param, int idx, real h = 1e-6) {
  auto& v = param.value_mut();
  const real orig = v[idx];
  v[idx] = orig + h;
  const real fp = f();
  v[idx] = orig - h;
  const real fm = f();
  v[idx] = orig;
  return (fp - fm) / (2.0 * h);
}

// Compare analytic gradients of `build()` (scalar loss) against central
// differences; coordinates are swept fully or subsampled per tensor.
inline void check_gradients(const std::function<Tensor()>& build, std::vector<Tensor> params,
                            real tol = 1e-6, real h = 1e-6, int max_coords_per_param = 0) {
  Tensor loss = build();
  for (auto& p : params) p.zero_grad();
  backward(loss);
  Rng pick(0xc0ffee);
  for (auto& p : params) {
    std::vector<int> coords;
    if (max_coords_per_param <= 0 || p.size() <= max_coords_per_param) {
      coords.resize(p.size());
      for (int i = 0; i < p.size(); ++i) coords[i] = i;
    } else {
      for (int i = 0; i < max_coords_per_param; ++i) coords.push_back(pick.uniform_int(0, p.size() - 1));
    }
    const auto g = p.grad();
    for (int i : coords) {
      const real fd = fd_gradient([&]() { return build().item(); }, p, i, h);
      const real diff = std::abs(g[i] - fd);
      const real scale = std::max({std::abs(g[i]), std::abs(fd), 1.0});
      if (diff / scale > tol) {
        FAIL_CHECK("gradient mismatch at coord " << i << ": analytic=" << g[i] << " fd=" << fd);
        return;
      }
    }
  }
  CHECK(true);
}

}  // namespace dualseg::testutil
