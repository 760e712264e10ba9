#pragma once

#include <functional>

#include "hoiopt/tensor.hpp"

namespace hoiopt {

/// Central-difference gradient estimate of a scalar function. Verification
/// oracle for the tape engine; kept independent of it on purpose.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double h) {
  if (h <= 0.0) fail_config("finite_diff_grad: step must be positive");
  std::vector<double> g(static_cast<size_t>(x.numel()));
  std::vector<double> base(x.vec());
  for (int64_t i = 0; i < x.numel(); ++i) {
    std::vector<double> xp(base), xm(base);
    xp[static_cast<size_t>(i)] += h;
    xm[static_cast<size_t>(i)] -= h;
    double fp = f(Tensor(x.shape(), std::move(xp)));
    double fm = f(Tensor(x.shape(), std::move(xm)));
    if (!std::isfinite(fp) || !std::isfinite(fm))
      fail_numeric("finite_diff_grad: non-finite function value at coordinate " +
                   std::to_string(i));
    g[static_cast<size_t>(i)] = (fp - fm) / (2.0 * h);
  }
  return Tensor(x.shape(), std::move(g));
}

/// Relative-error comparison with an absolute floor, used across gradient
/// checks: |a-b| <= tol * max(|a|, |b|, floor).
inline bool grad_close(const Tensor& a, const Tensor& b, double rel_tol = 1e-4,
                       double abs_floor = 1e-6) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double scale = std::max({std::abs(a[i]), std::abs(b[i]), abs_floor});
    if (std::abs(a[i] - b[i]) > rel_tol * scale) return false;
  }
  return true;
}

inline double grad_max_rel_err(const Tensor& a, const Tensor& b, double abs_floor = 1e-6) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double scale = std::max({std::abs(a[i]), std::abs(b[i]), abs_floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace hoiopt
