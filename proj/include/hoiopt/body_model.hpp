#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "hoiopt/params.hpp"
#include "hoiopt/rotation.hpp"

namespace hoiopt {

/// Parametric articulated body: template mesh, kinematic tree, joint
/// regressor, convex skinning weights and 10 shape-displacement fields.
/// Posing = shape blend, then forward kinematics over 6D joint rotations,
/// then linear blend skinning. Immutable after construction.
struct BodyModel {
  Tensor template_vertices;             // N x 3, meters, rest pose
  std::vector<int> kinematic_parents;   // parent joint per joint, -1 at root 0
  Tensor joint_regressor;               // K x N, rows sum to 1 over marker rings
  Tensor skin_weights;                  // N x K, convex rows
  std::vector<Tensor> shape_basis;      // 10 fields of N x 3 (per unit coefficient)
  std::vector<std::array<int, 3>> faces;
  std::vector<std::string> joint_names;

  int64_t vertex_count() const { return template_vertices.rows(); }
  int64_t joint_count() const { return static_cast<int64_t>(kinematic_parents.size()); }
  ParamLayout layout() const { return ParamLayout{joint_count()}; }

  // cached at build time
  Tensor shape_basis_matrix;            // (N*3) x 10, columns are the fields
  std::vector<Tensor> weight_columns;   // K tensors of N x 1

  void finalize_caches() {
    int64_t n = vertex_count(), k = joint_count();
    std::vector<double> bm(static_cast<size_t>(n * 3 * 10), 0.0);
    for (int64_t b = 0; b < static_cast<int64_t>(shape_basis.size()); ++b)
      for (int64_t i = 0; i < n * 3; ++i) bm[static_cast<size_t>(i * 10 + b)] = shape_basis[static_cast<size_t>(b)][i];
    shape_basis_matrix = Tensor({n * 3, 10}, std::move(bm));
    weight_columns.clear();
    for (int64_t j = 0; j < k; ++j) {
      std::vector<double> col(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) col[static_cast<size_t>(i)] = skin_weights.at(i, j);
      weight_columns.push_back(Tensor({n, 1}, std::move(col)));
    }
  }

  void validate() const {
    int64_t n = vertex_count(), k = joint_count();
    if (joint_regressor.rows() != k || joint_regressor.cols() != n)
      fail_shape("BodyModel: joint regressor shape " + shape_str(joint_regressor.shape()));
    if (skin_weights.rows() != n || skin_weights.cols() != k)
      fail_shape("BodyModel: skin weight shape " + shape_str(skin_weights.shape()));
    if (kinematic_parents[0] != -1) fail_data("BodyModel: joint 0 must be the root");
    for (int64_t j = 1; j < k; ++j)
      if (kinematic_parents[static_cast<size_t>(j)] < 0 || kinematic_parents[static_cast<size_t>(j)] >= j)
        fail_data("BodyModel: parents must precede children (joint " + std::to_string(j) + ")");
    for (int64_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (int64_t j = 0; j < k; ++j) {
        double w = skin_weights.at(i, j);
        if (w < 0.0) fail_data("BodyModel: negative skin weight at vertex " + std::to_string(i));
        s += w;
      }
      if (std::abs(s - 1.0) > 1e-9)
        fail_data("BodyModel: skin weights of vertex " + std::to_string(i) + " sum to " +
                  std::to_string(s));
    }
    if (shape_basis.size() != 10) fail_data("BodyModel: expected 10 shape fields");
  }

  Tensor rest_joints() const {
    Tape t(false);
    Var j = matmul(t.constant(joint_regressor), t.constant(template_vertices));
    return j.val();
  }
};

struct LbsResult {
  Var vertices;  // N x 3
  Var joints;    // K x 3 (posed joint positions)
};

/// Shape blend + forward kinematics + linear blend skinning, differentiable
/// w.r.t. theta (K x 6) and beta (10).
inline LbsResult lbs_forward(Tape& tape, const BodyModel& model, Var theta, Var beta) {
  const int64_t K = model.joint_count();
  const int64_t N = model.vertex_count();
  if (theta.val().ndim() != 2 || theta.val().rows() != K || theta.val().cols() != 6)
    fail_shape("lbs_forward: theta must be " + std::to_string(K) + " x 6, got " +
               shape_str(theta.val().shape()));
  if (beta.val().numel() != 10)
    fail_shape("lbs_forward: beta must have 10 entries, got " + shape_str(beta.val().shape()));
  if (!theta.val().all_finite() || !beta.val().all_finite())
    fail_numeric("lbs_forward: non-finite pose or shape input");

  // shaped template: flat(N*3) + basis_matrix(N*3 x 10) * beta
  Var beta_col = reshape(beta, {10, 1});
  Var disp = matmul(tape.constant(model.shape_basis_matrix), beta_col);
  Var v_shaped = reshape(add(reshape(tape.constant(model.template_vertices), {N * 3, 1}), disp),
                         {N, 3});
  Var joints_rest = matmul(tape.constant(model.joint_regressor), v_shaped);  // K x 3

  Var rotmats = rot6d_rows_to_matrices(theta);  // K x 9
  Var eye3 = tape.constant(Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));

  // Transforms are carried in residual form: posed(p) = p + (p - j_k)(R^T - I)
  // + (t_k - j_k). Identical algebra, but the identity pose contributes exact
  // zeros, so zero pose and shape reproduce the template bit-for-bit.
  std::vector<Var> world_rot_t(static_cast<size_t>(K));   // R_k^T - I, 3 x 3
  std::vector<Var> world_shift(static_cast<size_t>(K));   // t_k - j_k, 1 x 3
  std::vector<Var> world_pos(static_cast<size_t>(K));     // t_k, 1 x 3
  for (int64_t k = 0; k < K; ++k) {
    Var local_rot = reshape(slice_rows(rotmats, k, k + 1), {3, 3});
    Var jk = slice_rows(joints_rest, k, k + 1);  // 1 x 3
    int parent = model.kinematic_parents[static_cast<size_t>(k)];
    if (parent < 0) {
      world_rot_t[static_cast<size_t>(k)] = sub(transpose(local_rot), eye3);
      world_shift[static_cast<size_t>(k)] = tape.constant(Tensor::zeros({1, 3}));
      world_pos[static_cast<size_t>(k)] = jk;
    } else {
      Var prt = world_rot_t[static_cast<size_t>(parent)];  // R_p^T - I
      // (R_p * R_k)^T - I = R_k^T (R_p^T - I) + (R_k^T - I)
      Var lrt = sub(transpose(local_rot), eye3);
      world_rot_t[static_cast<size_t>(k)] = add(matmul(transpose(local_rot), prt), lrt);
      Var offset = sub(jk, slice_rows(joints_rest, parent, parent + 1));
      Var shift = add(matmul(offset, prt), world_shift[static_cast<size_t>(parent)]);
      world_shift[static_cast<size_t>(k)] = shift;
      world_pos[static_cast<size_t>(k)] = add(jk, shift);
    }
  }

  Var acc{};
  for (int64_t k = 0; k < K; ++k) {
    Var centered = add_rowvec(v_shaped, neg(slice_rows(joints_rest, k, k + 1)));
    Var residual = add_rowvec(matmul(centered, world_rot_t[static_cast<size_t>(k)]),
                              world_shift[static_cast<size_t>(k)]);
    Var moved = add(v_shaped, residual);
    Var weighted = mul_colvec(moved, tape.constant(model.weight_columns[static_cast<size_t>(k)]));
    acc = (k == 0) ? weighted : add(acc, weighted);
  }

  std::vector<Var> jrows(world_pos.begin(), world_pos.end());
  return LbsResult{acc, concat_rows(jrows)};
}

/// Non-differentiating convenience wrapper.
inline std::pair<Tensor, Tensor> lbs_forward_plain(const BodyModel& model, const Tensor& theta,
                                                   const Tensor& beta) {
  Tape t(false);
  LbsResult r = lbs_forward(t, model, t.leaf(theta, false), t.leaf(beta, false));
  return {r.vertices.val(), r.joints.val()};
}

// ---------------------------------------------------------------------------
// procedural mini body

namespace minibody {

enum Joint : int {
  kPelvis = 0, kSpine1, kSpine2, kNeck,
  kHipL, kKneeL, kAnkleL, kHipR, kKneeR, kAnkleR,
  kShoulderL, kElbowL, kWristL, kShoulderR, kElbowR, kWristR,
  kJointCount
};

}  // namespace minibody

/// Deterministic capsule-based body with 16 joints and ~700 vertices.
/// Rest pose is a T-pose standing on the floor plane y=0, up axis +y,
/// pelvis near (0, 0.95, 0).
inline BodyModel build_mini_body() {
  using namespace minibody;
  BodyModel m;
  const int K = kJointCount;

  const double jp[K][3] = {
      {0.00, 0.95, 0.00},   // pelvis
      {0.00, 1.10, 0.00},   // spine1
      {0.00, 1.28, 0.00},   // spine2
      {0.00, 1.45, 0.00},   // neck (head merged)
      {0.09, 0.90, 0.00},   // hip L
      {0.10, 0.50, 0.00},   // knee L
      {0.10, 0.08, 0.00},   // ankle L
      {-0.09, 0.90, 0.00},  // hip R
      {-0.10, 0.50, 0.00},  // knee R
      {-0.10, 0.08, 0.00},  // ankle R
      {0.18, 1.40, 0.00},   // shoulder L
      {0.45, 1.40, 0.00},   // elbow L
      {0.70, 1.40, 0.00},   // wrist L
      {-0.18, 1.40, 0.00},  // shoulder R
      {-0.45, 1.40, 0.00},  // elbow R
      {-0.70, 1.40, 0.00},  // wrist R
  };
  m.kinematic_parents = {-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 2, 10, 11, 2, 13, 14};
  m.joint_names = {"pelvis", "spine1", "spine2", "neck", "hip_l", "knee_l", "ankle_l",
                   "hip_r", "knee_r", "ankle_r", "shoulder_l", "elbow_l", "wrist_l",
                   "shoulder_r", "elbow_r", "wrist_r"};

  // bone table: owner joint (whose rotation carries the bone), child joint for
  // weight blending (-1 for rigid extensions), endpoints, radii, ring count
  struct Bone {
    int owner, child;
    std::array<double, 3> a, b;
    double ra, rb;
    int rings;
  };
  auto jpos = [&](int j) { return std::array<double, 3>{jp[j][0], jp[j][1], jp[j][2]}; };
  std::vector<Bone> bones = {
      {kPelvis, kSpine1, jpos(kPelvis), jpos(kSpine1), 0.11, 0.10, 3},
      {kSpine1, kSpine2, jpos(kSpine1), jpos(kSpine2), 0.10, 0.10, 4},
      {kSpine2, kNeck, jpos(kSpine2), jpos(kNeck), 0.10, 0.05, 4},
      {kNeck, -1, jpos(kNeck), {0.0, 1.68, 0.0}, 0.055, 0.075, 4},  // head
      {kHipL, kKneeL, jpos(kHipL), jpos(kKneeL), 0.07, 0.055, 4},
      {kKneeL, kAnkleL, jpos(kKneeL), jpos(kAnkleL), 0.055, 0.04, 4},
      {kAnkleL, -1, jpos(kAnkleL), {0.10, 0.025, 0.14}, 0.035, 0.025, 3},  // foot
      {kHipR, kKneeR, jpos(kHipR), jpos(kKneeR), 0.07, 0.055, 4},
      {kKneeR, kAnkleR, jpos(kKneeR), jpos(kAnkleR), 0.055, 0.04, 4},
      {kAnkleR, -1, jpos(kAnkleR), {-0.10, 0.025, 0.14}, 0.035, 0.025, 3},
      {kSpine2, kShoulderL, {0.06, 1.36, 0.0}, jpos(kShoulderL), 0.07, 0.055, 2},
      {kShoulderL, kElbowL, jpos(kShoulderL), jpos(kElbowL), 0.05, 0.04, 4},
      {kElbowL, kWristL, jpos(kElbowL), jpos(kWristL), 0.04, 0.033, 4},
      {kWristL, -1, jpos(kWristL), {0.79, 1.40, 0.0}, 0.03, 0.02, 2},  // hand
      {kSpine2, kShoulderR, {-0.06, 1.36, 0.0}, jpos(kShoulderR), 0.07, 0.055, 2},
      {kShoulderR, kElbowR, jpos(kShoulderR), jpos(kElbowR), 0.05, 0.04, 4},
      {kElbowR, kWristR, jpos(kElbowR), jpos(kWristR), 0.04, 0.033, 4},
      {kWristR, -1, jpos(kWristR), {-0.79, 1.40, 0.0}, 0.03, 0.02, 2},
  };

  const int kSegments = 8;
  std::vector<double> verts;
  std::vector<double> weights;  // row-major N x K
  std::vector<double> radial;   // per-vertex radial unit dir (0 for markers)
  std::vector<int> part;        // 0 torso, 1 head, 2 legs, 3 arms, 4 marker
  std::vector<std::array<int, 3>>& faces = m.faces;

  auto part_of_owner = [&](int owner) {
    if (owner == kNeck) return 1;
    if (owner == kHipL || owner == kKneeL || owner == kAnkleL || owner == kHipR ||
        owner == kKneeR || owner == kAnkleR)
      return 2;
    if (owner == kShoulderL || owner == kElbowL || owner == kWristL || owner == kShoulderR ||
        owner == kElbowR || owner == kWristR)
      return 3;
    return 0;
  };

  auto push_vertex = [&](const std::array<double, 3>& p, int owner, int child, double blend,
                         const std::array<double, 3>& rad, int prt) {
    verts.insert(verts.end(), {p[0], p[1], p[2]});
    std::vector<double> w(static_cast<size_t>(K), 0.0);
    if (child >= 0 && blend > 0.0) {
      w[static_cast<size_t>(owner)] = 1.0 - blend;
      w[static_cast<size_t>(child)] = blend;
    } else {
      w[static_cast<size_t>(owner)] = 1.0;
    }
    weights.insert(weights.end(), w.begin(), w.end());
    radial.insert(radial.end(), {rad[0], rad[1], rad[2]});
    part.push_back(prt);
  };

  for (const Bone& b : bones) {
    double ax = b.b[0] - b.a[0], ay = b.b[1] - b.a[1], az = b.b[2] - b.a[2];
    double alen = std::sqrt(ax * ax + ay * ay + az * az);
    double nx = ax / alen, ny = ay / alen, nz = az / alen;
    // orthonormal frame around the bone axis
    double rx = std::abs(ny) < 0.9 ? 0.0 : 1.0, ry = std::abs(ny) < 0.9 ? 1.0 : 0.0;
    double ux = ny * 0.0 - nz * ry, uy = nz * rx - nx * 0.0, uz = nx * ry - ny * rx;
    double ul = std::sqrt(ux * ux + uy * uy + uz * uz);
    ux /= ul; uy /= ul; uz /= ul;
    double vx = ny * uz - nz * uy, vy = nz * ux - nx * uz, vz = nx * uy - ny * ux;

    int base = static_cast<int>(verts.size() / 3);
    for (int r = 0; r < b.rings; ++r) {
      double u = (r + 1.0) / (b.rings + 1.0);
      double cx = b.a[0] + u * ax, cy = b.a[1] + u * ay, cz = b.a[2] + u * az;
      double rad = b.ra + (b.rb - b.ra) * u;
      // half/half blend at the child end of a bone; the dyadic weight keeps
      // convex sums exact in floating point
      double blend = (b.child >= 0 && u >= 0.75) ? 0.5 : 0.0;
      for (int s = 0; s < kSegments; ++s) {
        double th = 2.0 * M_PI * s / kSegments;
        double dx = std::cos(th) * ux + std::sin(th) * vx;
        double dy = std::cos(th) * uy + std::sin(th) * vy;
        double dz = std::cos(th) * uz + std::sin(th) * vz;
        push_vertex({cx + rad * dx, cy + rad * dy, cz + rad * dz}, b.owner, b.child, blend,
                    {dx, dy, dz}, part_of_owner(b.owner));
      }
    }
    for (int r = 0; r + 1 < b.rings; ++r)
      for (int s = 0; s < kSegments; ++s) {
        int s2 = (s + 1) % kSegments;
        int v00 = base + r * kSegments + s, v01 = base + r * kSegments + s2;
        int v10 = base + (r + 1) * kSegments + s, v11 = base + (r + 1) * kSegments + s2;
        faces.push_back({v00, v01, v11});
        faces.push_back({v00, v11, v10});
      }
  }

  // joint marker rings: 6 vertices centered exactly on each joint. Their mean
  // is the joint, which makes the joint regressor exact by construction.
  std::vector<int64_t> marker_start(static_cast<size_t>(K));
  const double kMarkerRadius = 0.02;
  for (int j = 0; j < K; ++j) {
    marker_start[static_cast<size_t>(j)] = static_cast<int64_t>(verts.size() / 3);
    for (int s = 0; s < 6; ++s) {
      double th = 2.0 * M_PI * s / 6.0;
      push_vertex({jp[j][0] + kMarkerRadius * std::cos(th), jp[j][1],
                   jp[j][2] + kMarkerRadius * std::sin(th)},
                  j, -1, 0.0, {0, 0, 0}, 4);
    }
  }

  const int64_t N = static_cast<int64_t>(verts.size() / 3);
  m.template_vertices = Tensor({N, 3}, std::move(verts));
  m.skin_weights = Tensor({N, K}, std::move(weights));

  std::vector<double> reg(static_cast<size_t>(K * N), 0.0);
  for (int j = 0; j < K; ++j)
    for (int s = 0; s < 6; ++s)
      reg[static_cast<size_t>(j * N + marker_start[static_cast<size_t>(j)] + s)] = 1.0 / 6.0;
  m.joint_regressor = Tensor({K, N}, std::move(reg));

  // ten smooth shape-displacement fields (meters per unit coefficient)
  const double pelvis_y = jp[kPelvis][1];
  auto gauss = [](double x, double c, double s) {
    double d = (x - c) / s;
    return std::exp(-d * d);
  };
  for (int b = 0; b < 10; ++b) {
    std::vector<double> f(static_cast<size_t>(N * 3), 0.0);
    for (int64_t i = 0; i < N; ++i) {
      double x = m.template_vertices.at(i, 0), y = m.template_vertices.at(i, 1);
      double rdx = radial[static_cast<size_t>(3 * i)], rdy = radial[static_cast<size_t>(3 * i + 1)],
             rdz = radial[static_cast<size_t>(3 * i + 2)];
      int p = part[static_cast<size_t>(i)];
      double dx = 0, dy = 0, dz = 0;
      switch (b) {
        case 0: dx = 0.035 * rdx; dy = 0.035 * rdy; dz = 0.035 * rdz; break;  // overall girth
        case 1: dy = 0.05 * (y - pelvis_y); break;                            // height
        case 2: if (y < pelvis_y) dy = -0.06 * (pelvis_y - y); break;         // leg length
        case 3: dx = 0.06 * (x > 0 ? 1 : -1) * std::max(std::abs(x) - 0.15, 0.0); break;  // arm length
        case 4: if (p == 0) { dx = 0.03 * rdx; dy = 0.03 * rdy; dz = 0.03 * rdz; } break;  // torso girth
        case 5: if (p == 2 || p == 3) { dx = 0.025 * rdx; dy = 0.025 * rdy; dz = 0.025 * rdz; } break;
        case 6: dx = 0.025 * (x > 0 ? 1 : (x < 0 ? -1 : 0)) * gauss(y, 1.40, 0.15); break;  // shoulders
        case 7: if (p == 1) { dx = 0.03 * rdx; dy = 0.03 * rdy; dz = 0.03 * rdz; } break;   // head size
        case 8: if (p == 0 && rdz > 0.3) dz = 0.04 * rdz * gauss(y, 1.12, 0.12); break;     // belly
        case 9: dx = 0.03 * (x > 0 ? 1 : (x < 0 ? -1 : 0)) * gauss(y, 0.85, 0.15); break;   // hip width
      }
      f[static_cast<size_t>(3 * i)] = dx;
      f[static_cast<size_t>(3 * i + 1)] = dy;
      f[static_cast<size_t>(3 * i + 2)] = dz;
    }
    m.shape_basis.push_back(Tensor({N, 3}, std::move(f)));
  }

  m.finalize_caches();
  m.validate();
  return m;
}

}  // namespace hoiopt
