#pragma once

#include <optional>
#include <vector>

#include "hoiopt/body_model.hpp"
#include "hoiopt/object_template.hpp"
#include "hoiopt/params.hpp"

namespace hoiopt {

/// Per-vertex contact weights in [0,1]: human-to-object (m_h), object-to-human
/// (m_o) and object-to-floor (m_f). Masks are data: no gradient flows through
/// their construction, and they stay fixed across one denoising loop.
struct ContactMasks {
  Tensor m_h;  // N_h
  Tensor m_o;  // M
  Tensor m_f;  // M

  int64_t count_h() const { return count(m_h); }
  int64_t count_o() const { return count(m_o); }
  int64_t count_f() const { return count(m_f); }

  uint64_t fingerprint() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](const Tensor& t) {
      for (int64_t i = 0; i < t.numel(); ++i) {
        h ^= t[i] > 0.0 ? (static_cast<uint64_t>(i) * 2 + 1) : 0;
        h *= 0x100000001b3ULL;
      }
    };
    mix(m_h);
    mix(m_o);
    mix(m_f);
    return h;
  }

 private:
  static int64_t count(const Tensor& t) {
    int64_t n = 0;
    for (int64_t i = 0; i < t.numel(); ++i) n += t[i] > 0.0 ? 1 : 0;
    return n;
  }
};

struct GuidanceWeights {
  double lambda_ho = 1.0;
  double lambda_of = 1.0;
  double lambda_pt = 1.0;
  double rho = 10.0;  // guidance scale

  void validate() const {
    if (lambda_ho < 0 || lambda_of < 0 || lambda_pt < 0 || rho < 0)
      fail_config("GuidanceWeights: weights must be non-negative");
  }
};

struct SceneModels {
  const BodyModel* body = nullptr;
  const ObjectTemplate* object = nullptr;
};

inline constexpr double kContactThreshold = 0.05;  // meters, shared with evaluation
inline constexpr double kSoftMinTemperature = 0.01;

/// Geometric contact predictor. m_h marks human vertices within `threshold`
/// of the object surface (|SDF|), m_o marks object vertices within
/// `threshold` of the closest human vertex, m_f marks object vertices at
/// floor height that also belong to the object's lowest band.
inline ContactMasks predict_contact_masks(const Tensor& v_h, const Tensor& v_o,
                                          const WorldSdf& sdf,
                                          double threshold = kContactThreshold) {
  int64_t n = v_h.rows(), m = v_o.rows();
  if (n == 0 || m == 0) fail_shape("predict_contact_masks: empty mesh");
  std::vector<double> mh(static_cast<size_t>(n), 0.0), mo(static_cast<size_t>(m), 0.0),
      mf(static_cast<size_t>(m), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    double phi = sdf.phi(v_h.at(i, 0), v_h.at(i, 1), v_h.at(i, 2));
    if (std::abs(phi) <= threshold) mh[static_cast<size_t>(i)] = 1.0;
  }
  for (int64_t j = 0; j < m; ++j) {
    double best = 1e30;
    for (int64_t i = 0; i < n; ++i) {
      double dx = v_o.at(j, 0) - v_h.at(i, 0);
      double dy = v_o.at(j, 1) - v_h.at(i, 1);
      double dz = v_o.at(j, 2) - v_h.at(i, 2);
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    if (std::sqrt(best) <= threshold) mo[static_cast<size_t>(j)] = 1.0;
  }
  double min_y = 1e30;
  for (int64_t j = 0; j < m; ++j) min_y = std::min(min_y, v_o.at(j, 1));
  for (int64_t j = 0; j < m; ++j) {
    double y = v_o.at(j, 1);
    if (y <= threshold && y <= min_y + threshold) mf[static_cast<size_t>(j)] = 1.0;
  }
  return ContactMasks{Tensor({n}, std::move(mh)), Tensor({m}, std::move(mo)),
                      Tensor({m}, std::move(mf))};
}

// ---------------------------------------------------------------------------
// plain (double) losses; these are the reference semantics

/// Human-object contact: sqrt of the mask-weighted sum of squared
/// nearest-vertex distances, symmetric in both directions. Hard minimum.
inline double loss_ho_plain(const Tensor& v_h, const Tensor& v_o, const ContactMasks& masks) {
  auto term = [](const Tensor& from, const Tensor& mask, const Tensor& to) {
    double acc = 0.0;
    for (int64_t i = 0; i < from.rows(); ++i) {
      double w = mask[i];
      if (w <= 0.0) continue;
      double best = 1e30;
      for (int64_t j = 0; j < to.rows(); ++j) {
        double dx = from.at(i, 0) - to.at(j, 0);
        double dy = from.at(i, 1) - to.at(j, 1);
        double dz = from.at(i, 2) - to.at(j, 2);
        double d2 = dx * dx + dy * dy + dz * dz;
        if (d2 < best) best = d2;
      }
      acc += w * best;
    }
    return acc;
  };
  double s = term(v_h, masks.m_h, v_o) + term(v_o, masks.m_o, v_h);
  return std::sqrt(s);
}

/// Object-floor contact: L1 of masked object-vertex heights.
inline double loss_of_plain(const Tensor& v_o, const ContactMasks& masks) {
  double s = 0.0;
  for (int64_t j = 0; j < v_o.rows(); ++j) s += masks.m_f[j] * std::abs(v_o.at(j, 1));
  return s;
}

/// Penetration: mean over human vertices of max(-phi, 0), i.e. mean
/// penetration depth into the object. Zero iff no vertex is inside.
inline double loss_pt_plain(const Tensor& v_h, const WorldSdf& sdf) {
  double s = 0.0;
  for (int64_t i = 0; i < v_h.rows(); ++i)
    s += std::max(-sdf.phi(v_h.at(i, 0), v_h.at(i, 1), v_h.at(i, 2)), 0.0);
  return s / static_cast<double>(v_h.rows());
}

struct PhysLosses {
  double ho = 0.0, of = 0.0, pt = 0.0;
  double total(const GuidanceWeights& w) const {
    return w.lambda_ho * ho + w.lambda_of * of + w.lambda_pt * pt;
  }
};

// ---------------------------------------------------------------------------
// differentiable losses

namespace detail {

// pairwise Euclidean distance matrix between rows of a (n x 3) and b (m x 3)
inline Var pairwise_dist(Tape& tape, Var a, Var b) {
  Var ab = matmul(a, transpose(b));
  Var a2 = row_sum(square(a));                 // n x 1
  Var b2 = transpose(row_sum(square(b)));      // 1 x m
  Var d2 = add_colvec(add_rowvec(mul_scalar(ab, -2.0), b2), a2);
  (void)tape;
  return sqrt(max_scalar(d2, 0.0));
}

// row-wise soft minimum with a detached log-sum-exp shift; exact for any
// shift, gradient flows only through the distances
inline Var soft_row_min(Tape& tape, Var d, double temperature) {
  if (temperature <= 0.0) return row_min(d);
  const Tensor& dv = d.val();
  std::vector<double> mins(static_cast<size_t>(dv.rows()));
  for (int64_t i = 0; i < dv.rows(); ++i) {
    double mn = dv.at(i, 0);
    for (int64_t j = 1; j < dv.cols(); ++j) mn = std::min(mn, dv.at(i, j));
    mins[static_cast<size_t>(i)] = mn;
  }
  Var shift = tape.constant(Tensor({dv.rows(), 1}, std::move(mins)));
  Var centered = add_colvec(d, neg(shift));
  Var s = row_sum(exp(mul_scalar(centered, -1.0 / temperature)));
  return add(shift, mul_scalar(log(s), -temperature));
}

inline std::vector<int64_t> masked_indices(const Tensor& mask) {
  std::vector<int64_t> idx;
  for (int64_t i = 0; i < mask.numel(); ++i)
    if (mask[i] > 0.0) idx.push_back(i);
  return idx;
}

}  // namespace detail

/// Differentiable human-object contact loss. `temperature > 0` uses a soft
/// minimum over nearest-vertex distances; `temperature <= 0` uses the hard
/// minimum (subgradient).
inline Var loss_ho(Tape& tape, Var v_h, Var v_o, const ContactMasks& masks,
                   double temperature = kSoftMinTemperature) {
  auto directional = [&](Var from, const Tensor& mask, Var to) -> std::optional<Var> {
    std::vector<int64_t> idx = detail::masked_indices(mask);
    if (idx.empty()) return std::nullopt;
    const int64_t n_sel = static_cast<int64_t>(idx.size());
    std::vector<double> w(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) w[i] = mask[idx[static_cast<size_t>(i)]];
    Var sel = gather_rows(from, idx);
    Var d = detail::soft_row_min(tape, detail::pairwise_dist(tape, sel, to), temperature);
    Var weights = tape.constant(Tensor({n_sel, 1}, std::move(w)));
    return sum(mul(square(d), weights));
  };
  auto th = directional(v_h, masks.m_h, v_o);
  auto to = directional(v_o, masks.m_o, v_h);
  if (!th && !to) return tape.constant(Tensor::scalar(0.0));
  Var s = th && to ? add(*th, *to) : (th ? *th : *to);
  return sqrt(s);
}

inline Var loss_of(Tape& tape, Var v_o, const ContactMasks& masks) {
  if (masks.count_f() == 0) return tape.constant(Tensor::scalar(0.0));
  Var heights = abs(slice_cols(v_o, 1, 2));  // |y|, M x 1
  Var mf = tape.constant(masks.m_f.reshaped({masks.m_f.numel(), 1}));
  return sum(mul(heights, mf));
}

inline Var loss_pt(Tape& tape, const ObjectTemplate& tmpl, Var obj_rot /*3x3*/,
                   Var obj_trans /*1x3*/, Var v_h) {
  Var phi = sdf_rows(tape, tmpl, obj_rot, obj_trans, v_h);
  return mean(max_scalar(neg(phi), 0.0));
}

struct GuidanceTerms {
  Var total;
  PhysLosses values;
};

/// Weighted physical objective evaluated from a flat parameter vector on the
/// tape: poses the body and object, then combines the three losses. Gradient
/// flows back to `x`; masks are constants.
inline GuidanceTerms loss_total(Tape& tape, Var x, ParamLayout layout, const ContactMasks& masks,
                                const GuidanceWeights& w, const SceneModels& models,
                                double temperature = kSoftMinTemperature) {
  w.validate();
  GuidanceTerms out{tape.constant(Tensor::scalar(0.0)), {}};
  if (w.lambda_ho == 0.0 && w.lambda_of == 0.0 && w.lambda_pt == 0.0) return out;

  PoseVars p = unflatten_var(x, layout);
  LbsResult body = lbs_forward(tape, *models.body, p.theta, p.beta);
  ObjectPoseVars obj = object_forward(tape, *models.object, p.rot_o, p.trans_o);

  Var acc = tape.constant(Tensor::scalar(0.0));
  if (w.lambda_ho > 0.0) {
    Var lho = loss_ho(tape, body.vertices, obj.vertices, masks, temperature);
    out.values.ho = lho.val().scalar_value();
    acc = add(acc, mul_scalar(lho, w.lambda_ho));
  }
  if (w.lambda_of > 0.0) {
    Var lof = loss_of(tape, obj.vertices, masks);
    out.values.of = lof.val().scalar_value();
    acc = add(acc, mul_scalar(lof, w.lambda_of));
  }
  if (w.lambda_pt > 0.0) {
    Var lpt = loss_pt(tape, *models.object, obj.rot, obj.trans, body.vertices);
    out.values.pt = lpt.val().scalar_value();
    acc = add(acc, mul_scalar(lpt, w.lambda_pt));
  }
  out.total = acc;
  return out;
}

/// Loss components of a posed configuration, for traces and diagnostics.
inline PhysLosses eval_phys_losses(const ParamVector& x, const ContactMasks& masks,
                                   const SceneModels& models) {
  PoseParams p = unflatten(x);
  auto [v_h, joints] = lbs_forward_plain(*models.body, p.theta, p.beta);
  Tape t(false);
  auto obj = object_forward(t, *models.object, t.constant(p.rot_o), t.constant(p.trans_o));
  WorldSdf sdf = make_world_sdf(*models.object, p.rot_o, p.trans_o);
  PhysLosses out;
  out.ho = loss_ho_plain(v_h, obj.vertices.val(), masks);
  out.of = loss_of_plain(obj.vertices.val(), masks);
  out.pt = loss_pt_plain(v_h, sdf);
  return out;
}

}  // namespace hoiopt
