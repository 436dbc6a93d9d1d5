#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dsdrive/rng.hpp"
#include "dsdrive/tensor.hpp"

namespace dsdrive::testutil {

// Central finite difference through an arbitrary scalar-valued forward pass.
// Independent oracle for every analytic gradient in the library: it only
// re-runs the forward, never touches tape internals.
inline double fd_partial(const std::function<double()>& forward, Tensor& t, int64_t idx,
                         double h = 1e-5) {
  const double saved = t.data()[idx];
  t.data()[idx] = saved + h;
  const double fp = forward();
  t.data()[idx] = saved - h;
  const double fm = forward();
  t.data()[idx] = saved;
  return (fp - fm) / (2.0 * h);
}

// Relative error with a floor so near-zero gradients compare absolutely.
inline double rel_err(double a, double b, double floor = 1e-2) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Checks every coordinate of `t` (or a strided sample when `stride` > 1).
// `forward` must rebuild the graph from scratch; analytic gradients are read
// from t.grad() as populated by a prior backward().
inline double max_grad_rel_err(const std::function<double()>& forward, Tensor& t,
                               int64_t stride = 1, double h = 1e-5) {
  double worst = 0.0;
  for (int64_t i = 0; i < t.numel(); i += stride) {
    const double fd = fd_partial(forward, t, i, h);
    worst = std::max(worst, rel_err(fd, static_cast<double>(t.grad()[i])));
  }
  return worst;
}

inline Tensor random_tensor(Rng& rng, Shape shape, double stddev = 1.0, bool requires_grad = true) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (auto& x : t.values()) x = rng.normal(0.0, stddev);
  return t;
}

}  // namespace dsdrive::testutil
