#pragma once

#include <cmath>
#include <vector>

#include "hoiopt/error.hpp"

namespace hoiopt {

/// Variance schedule: per-step variances zeta_t for t=1..T and the cumulative
/// products alpha_bar_t = prod_{s<=t}(1 - zeta_s), with alpha_bar_0 = 1.
struct NoiseSchedule {
  std::vector<double> zeta;       // index t-1 holds zeta_t
  std::vector<double> alpha_bar;  // index t holds alpha_bar_t, size T+1

  int64_t steps() const { return static_cast<int64_t>(zeta.size()); }

  double ab(int64_t t) const {
    if (t < 0 || t > steps()) fail_config("schedule: t=" + std::to_string(t) + " out of range");
    return alpha_bar[static_cast<size_t>(t)];
  }
  double sqrt_ab(int64_t t) const { return std::sqrt(ab(t)); }
  double sqrt_one_minus_ab(int64_t t) const { return std::sqrt(1.0 - ab(t)); }

  static NoiseSchedule linear(int64_t T = 1000, double zeta_start = 1e-4, double zeta_end = 2e-2) {
    if (T < 1) fail_config("schedule: T must be positive");
    NoiseSchedule s;
    s.zeta.resize(static_cast<size_t>(T));
    for (int64_t t = 0; t < T; ++t)
      s.zeta[static_cast<size_t>(t)] =
          T == 1 ? zeta_start
                 : zeta_start + (zeta_end - zeta_start) * static_cast<double>(t) /
                       static_cast<double>(T - 1);
    s.alpha_bar.resize(static_cast<size_t>(T + 1));
    s.alpha_bar[0] = 1.0;
    for (int64_t t = 1; t <= T; ++t) {
      double z = s.zeta[static_cast<size_t>(t - 1)];
      if (z <= 0.0 || z >= 1.0)
        fail_config("schedule: zeta_" + std::to_string(t) + "=" + std::to_string(z) +
                    " outside (0,1)");
      s.alpha_bar[static_cast<size_t>(t)] = s.alpha_bar[static_cast<size_t>(t - 1)] * (1.0 - z);
    }
    for (int64_t t = 1; t <= T; ++t)
      if (!(s.alpha_bar[static_cast<size_t>(t)] < s.alpha_bar[static_cast<size_t>(t - 1)]))
        fail_config("schedule: alpha_bar not strictly decreasing at t=" + std::to_string(t));
    return s;
  }
};

}  // namespace hoiopt
