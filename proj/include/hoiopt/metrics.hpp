#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <iomanip>
#include <sstream>

#include "hoiopt/physics.hpp"

namespace hoiopt {

struct EvalReport {
  double cd_human = 0.0;   // cm
  double cd_object = 0.0;  // cm
  double contact_p = 0.0;
  double contact_r = 0.0;
  double contact_f = 0.0;
};

struct Similarity {
  double scale = 1.0;
  Tensor rot = Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor trans = Tensor::zeros({3});
};

/// Least-squares similarity alignment of corresponding point sets
/// (source -> target). `with_scale` false gives the rigid variant. The
/// returned rotation is always proper (det +1), never a reflection.
inline Similarity procrustes_align(const Tensor& source, const Tensor& target,
                                   bool with_scale = true) {
  if (!source.same_shape(target) || source.ndim() != 2 || source.cols() != 3)
    fail_shape("procrustes_align: need matching N x 3 sets, got " + shape_str(source.shape()) +
               " vs " + shape_str(target.shape()));
  const int64_t n = source.rows();
  if (n < 3) fail_shape("procrustes_align: need at least 3 points");

  Eigen::MatrixXd src(3, n), dst(3, n);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t d = 0; d < 3; ++d) {
      src(d, i) = source.at(i, d);
      dst(d, i) = target.at(i, d);
    }
  // degenerate spread check (all points coincident)
  Eigen::Vector3d cs = src.rowwise().mean();
  double spread = (src.colwise() - cs).squaredNorm() / static_cast<double>(n);
  if (spread < 1e-18) fail_numeric("procrustes_align: source points are coincident");

  Eigen::Matrix4d M = Eigen::umeyama(src, dst, with_scale);
  Similarity out;
  Eigen::Matrix3d sR = M.topLeftCorner<3, 3>();
  double s = with_scale ? std::cbrt(sR.determinant()) : 1.0;
  Eigen::Matrix3d R = sR / s;
  out.scale = s;
  std::vector<double> rv(9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) rv[static_cast<size_t>(i * 3 + j)] = R(i, j);
  out.rot = Tensor({3, 3}, std::move(rv));
  out.trans = Tensor({3}, {M(0, 3), M(1, 3), M(2, 3)});
  return out;
}

inline Tensor apply_similarity(const Similarity& s, const Tensor& points) {
  std::vector<double> y(static_cast<size_t>(points.numel()));
  for (int64_t i = 0; i < points.rows(); ++i) {
    double x = points.at(i, 0), yy = points.at(i, 1), z = points.at(i, 2);
    for (int64_t d = 0; d < 3; ++d)
      y[static_cast<size_t>(i * 3 + d)] =
          s.scale * (s.rot[d * 3] * x + s.rot[d * 3 + 1] * yy + s.rot[d * 3 + 2] * z) + s.trans[d];
  }
  return Tensor(points.shape(), std::move(y));
}

/// Symmetric chamfer distance in centimeters: the average of the two
/// directed mean nearest-neighbor distances, times 100.
inline double chamfer_cm(const Tensor& a, const Tensor& b) {
  if (a.rows() == 0 || b.rows() == 0) fail_shape("chamfer_cm: empty point set");
  auto directed = [](const Tensor& from, const Tensor& to) {
    double acc = 0.0;
    for (int64_t i = 0; i < from.rows(); ++i) {
      double best = 1e30;
      for (int64_t j = 0; j < to.rows(); ++j) {
        double dx = from.at(i, 0) - to.at(j, 0);
        double dy = from.at(i, 1) - to.at(j, 1);
        double dz = from.at(i, 2) - to.at(j, 2);
        best = std::min(best, dx * dx + dy * dy + dz * dz);
      }
      acc += std::sqrt(best);
    }
    return acc / static_cast<double>(from.rows());
  };
  return 100.0 * 0.5 * (directed(a, b) + directed(b, a));
}

/// Precision/recall/F-score between boolean vertex masks. Zero-denominator
/// conventions: a vacuously correct prediction (no predicted positives, no
/// ground-truth positives) counts as precision 1; predictions with no true
/// positives score 0. Recall is handled symmetrically.
inline std::array<double, 3> contact_prf(const std::vector<bool>& pred,
                                         const std::vector<bool>& gt) {
  if (pred.size() != gt.size())
    fail_shape("contact_prf: mask lengths differ (" + std::to_string(pred.size()) + " vs " +
               std::to_string(gt.size()) + ")");
  int64_t tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    tp += pred[i] && gt[i];
    fp += pred[i] && !gt[i];
    fn += !pred[i] && gt[i];
  }
  double p = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp)
                           : (fn == 0 ? 1.0 : 0.0);
  double r = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn)
                           : (fp == 0 ? 1.0 : 0.0);
  double f = (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0;
  return {p, r, f};
}

struct EvalOptions {
  bool with_scale = true;        // similarity (default) vs rigid alignment
  double contact_threshold = kContactThreshold;
};

/// Metric protocol: pose both parameter vectors, align the combined
/// prediction to the combined ground truth, then report per-entity chamfer
/// distances and the contact P/R/F of the human contact map (5 cm rule via
/// the object SDF, applied to the aligned prediction and to the raw GT).
inline EvalReport evaluate_scene(const ParamVector& x_pred, const ParamVector& x_gt,
                                 const SceneModels& models, const EvalOptions& opts = {}) {
  PoseParams pp = unflatten(x_pred), pg = unflatten(x_gt);
  auto [vh_p, j_p] = lbs_forward_plain(*models.body, pp.theta, pp.beta);
  auto [vh_g, j_g] = lbs_forward_plain(*models.body, pg.theta, pg.beta);
  Tape t(false);
  Tensor vo_p = object_forward(t, *models.object, t.constant(pp.rot_o), t.constant(pp.trans_o))
                    .vertices.val();
  Tensor vo_g = object_forward(t, *models.object, t.constant(pg.rot_o), t.constant(pg.trans_o))
                    .vertices.val();

  const int64_t nh = vh_p.rows(), no = vo_p.rows();
  std::vector<double> src, dst;
  src.reserve(static_cast<size_t>((nh + no) * 3));
  dst.reserve(static_cast<size_t>((nh + no) * 3));
  for (int64_t i = 0; i < nh * 3; ++i) src.push_back(vh_p[i]);
  for (int64_t i = 0; i < no * 3; ++i) src.push_back(vo_p[i]);
  for (int64_t i = 0; i < nh * 3; ++i) dst.push_back(vh_g[i]);
  for (int64_t i = 0; i < no * 3; ++i) dst.push_back(vo_g[i]);
  Similarity sim = procrustes_align(Tensor({nh + no, 3}, std::move(src)),
                                    Tensor({nh + no, 3}, std::move(dst)), opts.with_scale);

  Tensor vh_a = apply_similarity(sim, vh_p);
  Tensor vo_a = apply_similarity(sim, vo_p);

  EvalReport rep;
  rep.cd_human = chamfer_cm(vh_a, vh_g);
  rep.cd_object = chamfer_cm(vo_a, vo_g);

  // aligned prediction SDF: similarity composed with the object pose
  Tensor rot_p = rot6d_to_matrix(pp.rot_o);
  Tensor rot_total = mat3_mul(sim.rot, rot_p);
  std::vector<double> tt(3);
  for (int d = 0; d < 3; ++d)
    tt[static_cast<size_t>(d)] = sim.scale * (sim.rot[d * 3] * pp.trans_o[0] +
                                              sim.rot[d * 3 + 1] * pp.trans_o[1] +
                                              sim.rot[d * 3 + 2] * pp.trans_o[2]) +
                                 sim.trans[d];
  WorldSdf sdf_pred{models.object, rot_total, Tensor({3}, std::move(tt)), sim.scale};
  WorldSdf sdf_gt = make_world_sdf(*models.object, pg.rot_o, pg.trans_o);

  std::vector<bool> pred_mask(static_cast<size_t>(nh)), gt_mask(static_cast<size_t>(nh));
  for (int64_t i = 0; i < nh; ++i) {
    pred_mask[static_cast<size_t>(i)] =
        std::abs(sdf_pred.phi(vh_a.at(i, 0), vh_a.at(i, 1), vh_a.at(i, 2))) <=
        opts.contact_threshold;
    gt_mask[static_cast<size_t>(i)] =
        std::abs(sdf_gt.phi(vh_g.at(i, 0), vh_g.at(i, 1), vh_g.at(i, 2))) <=
        opts.contact_threshold;
  }
  auto prf = contact_prf(pred_mask, gt_mask);
  rep.contact_p = prf[0];
  rep.contact_r = prf[1];
  rep.contact_f = prf[2];
  return rep;
}

// ---------------------------------------------------------------------------
// report serialization: one flat key-value record per scene plus a summary

inline std::string format_report_line(const std::string& scene_id, const EvalReport& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "scene=" << scene_id << " cd_human_cm=" << r.cd_human << " cd_object_cm=" << r.cd_object
     << " contact_p=" << r.contact_p << " contact_r=" << r.contact_r
     << " contact_f=" << r.contact_f;
  return os.str();
}

inline EvalReport mean_report(const std::vector<EvalReport>& rs) {
  EvalReport m;
  if (rs.empty()) return m;
  for (const auto& r : rs) {
    m.cd_human += r.cd_human;
    m.cd_object += r.cd_object;
    m.contact_p += r.contact_p;
    m.contact_r += r.contact_r;
    m.contact_f += r.contact_f;
  }
  double n = static_cast<double>(rs.size());
  m.cd_human /= n;
  m.cd_object /= n;
  m.contact_p /= n;
  m.contact_r /= n;
  m.contact_f /= n;
  return m;
}

inline EvalReport median_report(std::vector<EvalReport> rs) {
  EvalReport m;
  if (rs.empty()) return m;
  auto med = [&](auto field) {
    std::vector<double> v;
    v.reserve(rs.size());
    for (const auto& r : rs) v.push_back(r.*field);
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  m.cd_human = med(&EvalReport::cd_human);
  m.cd_object = med(&EvalReport::cd_object);
  m.contact_p = med(&EvalReport::contact_p);
  m.contact_r = med(&EvalReport::contact_r);
  m.contact_f = med(&EvalReport::contact_f);
  return m;
}

inline std::string format_report(const std::vector<std::string>& ids,
                                 const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  for (size_t i = 0; i < reports.size(); ++i)
    os << format_report_line(ids[i], reports[i]) << "\n";
  EvalReport m = mean_report(reports);
  os << "summary scenes=" << reports.size() << "\n";
  os << format_report_line("aggregate_mean", m) << "\n";
  return os.str();
}

}  // namespace hoiopt
