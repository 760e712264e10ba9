#pragma once

#include "hoiopt/ops.hpp"
#include "hoiopt/schedule.hpp"
#include "hoiopt/tape.hpp"

namespace hoiopt {

/// Raw conditioning inputs. The observation vector and the 64 canonical
/// object points are encoded inside the denoiser itself; denoisers that
/// need no conditions ignore them.
struct Conditions {
  Tensor obs;  // observation vector, or empty
  Tensor geo;  // 64 x 3 coarse object points, or empty
};

/// Noise-prediction model interface. eval() must be differentiable w.r.t.
/// x_t when recorded on a gradient-enabled tape, and the output dimension
/// always equals the input dimension.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual int64_t dim() const = 0;
  virtual Var eval(Tape& tape, Var x_t, int64_t t, const NoiseSchedule& sched,
                   const Conditions& c) const = 0;

  Tensor eval_plain(const Tensor& x_t, int64_t t, const NoiseSchedule& sched,
                    const Conditions& c) const {
    Tape tape(false);
    return eval(tape, tape.leaf(x_t, false), t, sched, c).val();
  }
};

/// Exact noise predictor for a Gaussian prior N(mu, diag(sigma2)): the
/// marginal of x_t is N(sqrt(ab)*mu, ab*sigma2 + (1-ab)), and
/// eps = sqrt(1-ab) * (x_t - sqrt(ab)*mu) / (ab*sigma2 + (1-ab)),
/// which equals -sqrt(1-ab) times the closed-form score. Used as the
/// verification oracle throughout.
class AnalyticGaussianDenoiser : public Denoiser {
 public:
  AnalyticGaussianDenoiser(Tensor mu, Tensor sigma2) : mu_(std::move(mu)), sigma2_(std::move(sigma2)) {
    if (!mu_.same_shape(sigma2_))
      fail_shape("AnalyticGaussianDenoiser: mu " + shape_str(mu_.shape()) + " vs sigma2 " +
                 shape_str(sigma2_.shape()));
    for (int64_t i = 0; i < sigma2_.numel(); ++i)
      if (sigma2_[i] <= 0.0) fail_config("AnalyticGaussianDenoiser: sigma2 must be positive");
  }

  int64_t dim() const override { return mu_.numel(); }

  Var eval(Tape& tape, Var x_t, int64_t t, const NoiseSchedule& sched,
           const Conditions&) const override {
    if (x_t.val().numel() != dim())
      fail_shape("AnalyticGaussianDenoiser: x_t " + shape_str(x_t.val().shape()) + " vs dim " +
                 std::to_string(dim()));
    double ab = sched.ab(t), s1 = sched.sqrt_one_minus_ab(t), sa = sched.sqrt_ab(t);
    std::vector<double> coef(static_cast<size_t>(dim())), shift(static_cast<size_t>(dim()));
    for (int64_t i = 0; i < dim(); ++i) {
      double prec = 1.0 / (ab * sigma2_[i] + (1.0 - ab));
      coef[static_cast<size_t>(i)] = s1 * prec;
      shift[static_cast<size_t>(i)] = sa * mu_[i];
    }
    Var centered = sub(x_t, tape.constant(Tensor(x_t.val().shape(), std::move(shift))));
    return mul(centered, tape.constant(Tensor(x_t.val().shape(), std::move(coef))));
  }

  /// Closed-form score of the noised marginal, for identity checks.
  Tensor score(const Tensor& x_t, int64_t t, const NoiseSchedule& sched) const {
    double ab = sched.ab(t), sa = sched.sqrt_ab(t);
    std::vector<double> g(static_cast<size_t>(dim()));
    for (int64_t i = 0; i < dim(); ++i)
      g[static_cast<size_t>(i)] = -(x_t[i] - sa * mu_[i]) / (ab * sigma2_[i] + (1.0 - ab));
    return Tensor(x_t.shape(), std::move(g));
  }

  const Tensor& mu() const { return mu_; }
  const Tensor& sigma2() const { return sigma2_; }

 private:
  Tensor mu_;
  Tensor sigma2_;
};

}  // namespace hoiopt
