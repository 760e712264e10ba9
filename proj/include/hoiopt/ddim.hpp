#pragma once

#include <functional>
#include <optional>

#include "hoiopt/denoiser.hpp"
#include "hoiopt/physics.hpp"
#include "hoiopt/schedule.hpp"

namespace hoiopt {

/// q(x_t | x_0): x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps.
inline Tensor forward_diffuse(const Tensor& x0, int64_t t, const Tensor& eps,
                              const NoiseSchedule& sched) {
  if (t < 0 || t > sched.steps())
    fail_config("forward_diffuse: t=" + std::to_string(t) + " outside [0, " +
                std::to_string(sched.steps()) + "]");
  if (!x0.same_shape(eps))
    fail_shape("forward_diffuse: x0 " + shape_str(x0.shape()) + " vs eps " +
               shape_str(eps.shape()));
  double sa = sched.sqrt_ab(t), s1 = sched.sqrt_one_minus_ab(t);
  std::vector<double> y(static_cast<size_t>(x0.numel()));
  for (int64_t i = 0; i < x0.numel(); ++i) y[static_cast<size_t>(i)] = sa * x0[i] + s1 * eps[i];
  return Tensor(x0.shape(), std::move(y));
}

/// One-step denoised estimate: x0_hat = (x_t - sqrt(1-ab_t) eps) / sqrt(ab_t).
inline Tensor predict_x0(const Tensor& x_t, int64_t t, const Tensor& eps,
                         const NoiseSchedule& sched) {
  if (t < 1 || t > sched.steps())
    fail_config("predict_x0: t=" + std::to_string(t) + " outside [1, " +
                std::to_string(sched.steps()) + "]");
  double inv_sa = 1.0 / sched.sqrt_ab(t), s1 = sched.sqrt_one_minus_ab(t);
  std::vector<double> y(static_cast<size_t>(x_t.numel()));
  for (int64_t i = 0; i < x_t.numel(); ++i)
    y[static_cast<size_t>(i)] = (x_t[i] - s1 * eps[i]) * inv_sa;
  return Tensor(x_t.shape(), std::move(y));
}

inline Var predict_x0_var(Var x_t, int64_t t, Var eps, const NoiseSchedule& sched) {
  double inv_sa = 1.0 / sched.sqrt_ab(t), s1 = sched.sqrt_one_minus_ab(t);
  return mul_scalar(sub(x_t, mul_scalar(eps, s1)), inv_sa);
}

enum class GradMode { FullBackprop, FrozenEpsilon };

inline GradMode grad_mode_from_string(const std::string& s) {
  if (s == "full-backprop") return GradMode::FullBackprop;
  if (s == "frozen-epsilon") return GradMode::FrozenEpsilon;
  fail_config("unknown grad mode '" + s + "' (expected full-backprop or frozen-epsilon)");
}

/// Knobs of one inversion + guided-sampling pass.
struct GuidedStepConfig {
  int64_t tau = 50;      // inversion noise level (timestep index)
  int64_t delta_t = 2;   // DDIM stride
  double rho = 10.0;     // guidance scale
  GradMode grad_mode = GradMode::FullBackprop;
  double grad_max_norm = 0.0;  // optional clip of the guidance gradient; 0 = off
  double softmin_temperature = kSoftMinTemperature;

  void validate(const NoiseSchedule& sched) const {
    if (tau <= 0 || tau > sched.steps())
      fail_config("GuidedStepConfig: tau=" + std::to_string(tau) + " outside (0, T]");
    if (delta_t < 1) fail_config("GuidedStepConfig: delta_t must be >= 1");
    if (tau % delta_t != 0)
      fail_config("GuidedStepConfig: delta_t=" + std::to_string(delta_t) +
                  " must divide tau=" + std::to_string(tau));
    if (rho < 0) fail_config("GuidedStepConfig: rho must be >= 0");
  }
};

/// Scalar objective on the one-step denoised estimate; drives the guidance
/// gradient. Null means unguided.
using GuidanceFn = std::function<Var(Tape&, Var x0_hat)>;

/// Physical-objective guidance over a flat parameter vector. Masks and
/// weights are captured by value and stay fixed for the whole loop.
inline GuidanceFn physics_guidance(ContactMasks masks, GuidanceWeights weights,
                                   SceneModels models, ParamLayout layout,
                                   double temperature = kSoftMinTemperature) {
  weights.validate();
  return [masks = std::move(masks), weights, models, layout, temperature](Tape& tape,
                                                                          Var x0_hat) {
    return loss_total(tape, x0_hat, layout, masks, weights, models, temperature).total;
  };
}

/// Deterministic DDIM inversion on the arithmetic grid {0, dt, ..., tau}:
/// x_{t+dt} = sqrt(ab_{t+dt}) x0_hat(x_t) + sqrt(1-ab_{t+dt}) eps(x_t, t, c).
inline Tensor ddim_invert(const Tensor& x0_start, int64_t tau, int64_t delta_t,
                          const Denoiser& den, const Conditions& conds,
                          const NoiseSchedule& sched) {
  if (tau == 0) return x0_start;
  if (tau < 0 || tau > sched.steps() || delta_t < 1 || tau % delta_t != 0)
    fail_config("ddim_invert: invalid tau/delta_t combination");
  Tensor x = x0_start;
  for (int64_t t = 0; t < tau; t += delta_t) {
    Tensor eps = den.eval_plain(x, t, sched, conds);
    Tensor x0_hat = t == 0 ? x : predict_x0(x, t, eps, sched);
    double sa = sched.sqrt_ab(t + delta_t), s1 = sched.sqrt_one_minus_ab(t + delta_t);
    std::vector<double> y(static_cast<size_t>(x.numel()));
    for (int64_t i = 0; i < x.numel(); ++i)
      y[static_cast<size_t>(i)] = sa * x0_hat[i] + s1 * eps[i];
    x = Tensor(x.shape(), std::move(y));
    if (!x.all_finite())
      fail_numeric("ddim_invert: non-finite latent after step t=" + std::to_string(t) + " -> " +
                   std::to_string(t + delta_t));
  }
  return x;
}

struct GuidedStepResult {
  Tensor x_prev;        // x_{t - dt}
  Tensor x0_hat_prime;  // denoised estimate under the modified noise
  double grad_norm = 0.0;
};

/// One guided DDIM step at timestep t:
///   eps   = eps_phi(x_t, t, c)
///   x0^   = predict_x0(x_t, t, eps)            (graph initialized at x_t)
///   eps'  = eps + rho * sqrt(1-ab_t) * grad_{x_t} L(x0^)
///   x0^'  = predict_x0(x_t, t, eps')
///   x_{t-dt} = sqrt(ab_{t-dt}) x0^' + sqrt(1-ab_{t-dt}) eps'
/// FullBackprop differentiates through the denoiser as well as the affine
/// map; FrozenEpsilon treats eps as a constant.
inline GuidedStepResult guided_ddim_step(const Tensor& x_t, int64_t t, int64_t delta_t,
                                         const Denoiser& den, const Conditions& conds,
                                         const NoiseSchedule& sched, double rho,
                                         const GuidanceFn& guidance,
                                         GradMode grad_mode = GradMode::FullBackprop,
                                         double grad_max_norm = 0.0) {
  if (t < delta_t) fail_config("guided_ddim_step: t must be >= delta_t");
  GuidedStepResult out;
  bool guiding = rho > 0.0 && guidance != nullptr;

  Tensor eps;
  if (!guiding) {
    eps = den.eval_plain(x_t, t, sched, conds);
  } else {
    Tape tape;
    Var xv = tape.leaf(x_t);
    Var eps_v = grad_mode == GradMode::FullBackprop
                    ? den.eval(tape, xv, t, sched, conds)
                    : tape.constant(den.eval_plain(x_t, t, sched, conds));
    Var x0_hat = predict_x0_var(xv, t, eps_v, sched);
    Var objective = guidance(tape, x0_hat);
    Tensor grad = tape.backward(objective).get(xv);
    if (!grad.all_finite())
      fail_numeric("guided_ddim_step: non-finite guidance gradient at t=" + std::to_string(t));
    double gn = l2_norm(grad);
    out.grad_norm = gn;
    if (gn > 1e6)
      fail_numeric("guided_ddim_step: guidance gradient norm " + std::to_string(gn) +
                   " exceeds 1e6 at t=" + std::to_string(t) +
                   "; reduce the guidance scale rho");
    double clip = (grad_max_norm > 0.0 && gn > grad_max_norm) ? grad_max_norm / gn : 1.0;
    double s1 = sched.sqrt_one_minus_ab(t);
    std::vector<double> e(static_cast<size_t>(x_t.numel()));
    const Tensor& ev = eps_v.val();
    for (int64_t i = 0; i < x_t.numel(); ++i)
      e[static_cast<size_t>(i)] = ev[i] + rho * s1 * clip * grad[i];
    eps = Tensor(x_t.shape(), std::move(e));
  }

  out.x0_hat_prime = predict_x0(x_t, t, eps, sched);
  double sa = sched.sqrt_ab(t - delta_t), s1p = sched.sqrt_one_minus_ab(t - delta_t);
  std::vector<double> y(static_cast<size_t>(x_t.numel()));
  for (int64_t i = 0; i < x_t.numel(); ++i)
    y[static_cast<size_t>(i)] = sa * out.x0_hat_prime[i] + s1p * eps[i];
  out.x_prev = Tensor(x_t.shape(), std::move(y));
  if (!out.x_prev.all_finite())
    fail_numeric("guided_ddim_step: non-finite latent after step t=" + std::to_string(t));
  return out;
}

/// Clamp the shape block of a flat parameter vector to [-1, 1].
inline Tensor clamp_beta(const Tensor& x, ParamLayout layout) {
  std::vector<double> y(x.vec());
  for (int64_t i = layout.beta_offset(); i < layout.beta_offset() + ParamLayout::beta_size(); ++i)
    y[static_cast<size_t>(i)] = std::clamp(y[static_cast<size_t>(i)], -1.0, 1.0);
  return Tensor(x.shape(), std::move(y));
}

/// Guided sampling from x_tau down to 0 in strides of delta_t; returns the
/// final modified denoised estimate. When a parameter layout is given, its
/// shape block is projected to [-1, 1] at loop exit (never mid-chain).
/// Deterministic.
inline Tensor ddim_sample_loop(const Tensor& x_tau, int64_t tau, int64_t delta_t,
                               const Denoiser& den, const Conditions& conds,
                               const NoiseSchedule& sched, double rho, const GuidanceFn& guidance,
                               std::optional<ParamLayout> layout = std::nullopt,
                               GradMode grad_mode = GradMode::FullBackprop,
                               double grad_max_norm = 0.0) {
  auto project = [&](const Tensor& v) { return layout ? clamp_beta(v, *layout) : v; };
  if (tau == 0) return project(x_tau);
  if (tau % delta_t != 0) fail_config("ddim_sample_loop: delta_t must divide tau");
  Tensor x = x_tau;
  Tensor x0_hat = x_tau;
  for (int64_t t = tau; t >= delta_t; t -= delta_t) {
    GuidedStepResult r =
        guided_ddim_step(x, t, delta_t, den, conds, sched, rho, guidance, grad_mode, grad_max_norm);
    x = r.x_prev;
    x0_hat = r.x0_hat_prime;
  }
  return project(x0_hat);
}

}  // namespace hoiopt
