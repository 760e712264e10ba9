#pragma once

#include "hoiopt/ops.hpp"
#include "hoiopt/tensor.hpp"

namespace hoiopt {

/// Layout of the flat optimization state x = {theta, beta, rot_o, trans_o}:
/// K joint rotations in 6D form, 10 shape coefficients normalized to [-1,1],
/// a 6D object rotation and a 3-vector object translation in meters.
struct ParamLayout {
  int64_t joints = 16;

  int64_t theta_offset() const { return 0; }
  int64_t theta_size() const { return 6 * joints; }
  int64_t beta_offset() const { return 6 * joints; }
  static constexpr int64_t beta_size() { return 10; }
  int64_t rot_offset() const { return 6 * joints + 10; }
  static constexpr int64_t rot_size() { return 6; }
  int64_t trans_offset() const { return 6 * joints + 16; }
  static constexpr int64_t trans_size() { return 3; }
  int64_t dim() const { return 6 * joints + 19; }

  bool operator==(const ParamLayout&) const = default;
};

/// Flat parameter vector plus its layout descriptor.
struct ParamVector {
  Tensor flat;
  ParamLayout layout;

  ParamVector() = default;
  ParamVector(Tensor f, ParamLayout l) : flat(std::move(f)), layout(l) {
    if (flat.numel() != layout.dim())
      fail_shape("ParamVector: flat length " + std::to_string(flat.numel()) +
                 " does not match layout dim " + std::to_string(layout.dim()));
  }

  static ParamVector zeros(ParamLayout l) { return ParamVector(Tensor::zeros({l.dim()}), l); }
};

/// Structured view of the parameter blocks.
struct PoseParams {
  Tensor theta;    // K x 6
  Tensor beta;     // 10
  Tensor rot_o;    // 6
  Tensor trans_o;  // 3
};

inline ParamVector flatten(const PoseParams& p, ParamLayout layout) {
  if (p.theta.numel() != layout.theta_size())
    fail_shape("flatten: theta size " + std::to_string(p.theta.numel()) + " does not match 6*K=" +
               std::to_string(layout.theta_size()));
  if (p.beta.numel() != 10 || p.rot_o.numel() != 6 || p.trans_o.numel() != 3)
    fail_shape("flatten: beta/rot_o/trans_o must have sizes 10/6/3");
  std::vector<double> d;
  d.reserve(static_cast<size_t>(layout.dim()));
  auto push = [&](const Tensor& t) {
    for (int64_t i = 0; i < t.numel(); ++i) d.push_back(t[i]);
  };
  push(p.theta);
  push(p.beta);
  push(p.rot_o);
  push(p.trans_o);
  return ParamVector(Tensor({layout.dim()}, std::move(d)), layout);
}

inline PoseParams unflatten(const ParamVector& x) {
  const ParamLayout& l = x.layout;
  auto grab = [&](int64_t off, int64_t n, Shape s) {
    std::vector<double> d(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) d[static_cast<size_t>(i)] = x.flat[off + i];
    return Tensor(std::move(s), std::move(d));
  };
  PoseParams p;
  p.theta = grab(l.theta_offset(), l.theta_size(), {l.joints, 6});
  p.beta = grab(l.beta_offset(), 10, {10});
  p.rot_o = grab(l.rot_offset(), 6, {6});
  p.trans_o = grab(l.trans_offset(), 3, {3});
  return p;
}

/// Tape-side view of the same blocks, for differentiating through a flat x.
struct PoseVars {
  Var theta;    // K x 6
  Var beta;     // 10
  Var rot_o;    // 1 x 6 row
  Var trans_o;  // 1 x 3 row
};

inline PoseVars unflatten_var(Var x, ParamLayout l) {
  if (x.val().numel() != l.dim())
    fail_shape("unflatten_var: flat length " + std::to_string(x.val().numel()) +
               " does not match layout dim " + std::to_string(l.dim()));
  Var flat = x.val().ndim() == 1 ? x : reshape(x, {l.dim()});
  PoseVars p;
  p.theta = reshape(slice(flat, l.theta_offset(), l.theta_size()), {l.joints, 6});
  p.beta = slice(flat, l.beta_offset(), 10);
  p.rot_o = reshape(slice(flat, l.rot_offset(), 6), {1, 6});
  p.trans_o = reshape(slice(flat, l.trans_offset(), 3), {1, 3});
  return p;
}

}  // namespace hoiopt
