#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hoiopt/rotation.hpp"
#include "hoiopt/tensor.hpp"

namespace hoiopt {

enum class SdfKind { Box, Cylinder, Sphere, Grid };

inline std::string sdf_kind_name(SdfKind k) {
  switch (k) {
    case SdfKind::Box: return "box";
    case SdfKind::Cylinder: return "cylinder";
    case SdfKind::Sphere: return "sphere";
    case SdfKind::Grid: return "grid";
  }
  return "?";
}

/// Trilinearly interpolated signed-distance grid in the canonical frame.
/// Queries outside the grid extrapolate linearly from the border cell.
struct GridSdf {
  std::array<double, 3> origin{};
  std::array<double, 3> spacing{};
  std::array<int64_t, 3> dims{};
  std::vector<double> values;  // ix-major, then iy, then iz

  double at(int64_t ix, int64_t iy, int64_t iz) const {
    return values[static_cast<size_t>((ix * dims[1] + iy) * dims[2] + iz)];
  }

  void locate(double x, double y, double z, std::array<int64_t, 3>& cell,
              std::array<double, 3>& frac) const {
    const double q[3] = {x, y, z};
    for (int d = 0; d < 3; ++d) {
      double u = (q[d] - origin[static_cast<size_t>(d)]) / spacing[static_cast<size_t>(d)];
      int64_t c = static_cast<int64_t>(std::floor(u));
      c = std::clamp<int64_t>(c, 0, dims[static_cast<size_t>(d)] - 2);
      cell[static_cast<size_t>(d)] = c;
      frac[static_cast<size_t>(d)] = u - static_cast<double>(c);
    }
  }

  double eval(double x, double y, double z) const {
    std::array<int64_t, 3> c;
    std::array<double, 3> f;
    locate(x, y, z, c, f);
    double v = 0.0;
    for (int b = 0; b < 8; ++b) {
      int bx = b >> 2 & 1, by = b >> 1 & 1, bz = b & 1;
      double w = (bx ? f[0] : 1 - f[0]) * (by ? f[1] : 1 - f[1]) * (bz ? f[2] : 1 - f[2]);
      v += w * at(c[0] + bx, c[1] + by, c[2] + bz);
    }
    return v;
  }
};

/// Rigid object: canonical mesh, 64 coarse surface points and a signed
/// distance function (analytic primitive or sampled grid).
struct ObjectTemplate {
  std::string id;
  Tensor mesh_vertices;  // M x 3, canonical pose, meters
  std::vector<std::array<int, 3>> faces;
  Tensor coarse_points;  // 64 x 3
  SdfKind sdf_kind = SdfKind::Box;
  std::vector<double> sdf_params;  // box: hx hy hz; cylinder: r hh; sphere: r; grid: res margin
  std::optional<GridSdf> grid;

  void validate() const {
    if (coarse_points.rows() != 64 || coarse_points.cols() != 3)
      fail_data("ObjectTemplate '" + id + "': coarse points must be 64 x 3, got " +
                shape_str(coarse_points.shape()));
    if (mesh_vertices.rows() < 4) fail_data("ObjectTemplate '" + id + "': mesh too small");
    for (auto& f : faces)
      for (int v : f)
        if (v < 0 || v >= mesh_vertices.rows())
          fail_data("ObjectTemplate '" + id + "': face index out of range");
    if (sdf_kind == SdfKind::Grid && !grid)
      fail_data("ObjectTemplate '" + id + "': grid SDF not built");
  }
};

// ---------------------------------------------------------------------------
// canonical-frame SDF evaluation

inline double sdf_canonical(const ObjectTemplate& t, double x, double y, double z) {
  switch (t.sdf_kind) {
    case SdfKind::Box: {
      double dx = std::abs(x) - t.sdf_params[0];
      double dy = std::abs(y) - t.sdf_params[1];
      double dz = std::abs(z) - t.sdf_params[2];
      double ox = std::max(dx, 0.0), oy = std::max(dy, 0.0), oz = std::max(dz, 0.0);
      double outside = std::sqrt(ox * ox + oy * oy + oz * oz);
      double inside = std::min(std::max(dx, std::max(dy, dz)), 0.0);
      return outside + inside;
    }
    case SdfKind::Cylinder: {
      double dr = std::sqrt(x * x + z * z) - t.sdf_params[0];
      double dy = std::abs(y) - t.sdf_params[1];
      double orr = std::max(dr, 0.0), oy = std::max(dy, 0.0);
      double outside = std::sqrt(orr * orr + oy * oy);
      double inside = std::min(std::max(dr, dy), 0.0);
      return outside + inside;
    }
    case SdfKind::Sphere:
      return std::sqrt(x * x + y * y + z * z) - t.sdf_params[0];
    case SdfKind::Grid:
      return t.grid->eval(x, y, z);
  }
  return 0.0;
}

/// Object SDF in world coordinates for a fixed pose: phi(q) =
/// s * phi_canonical(R^T (q - t) / s). Scale is used by the evaluation
/// pipeline after similarity alignment; it defaults to 1.
struct WorldSdf {
  const ObjectTemplate* tmpl = nullptr;
  Tensor rot;    // 3 x 3
  Tensor trans;  // 3
  double scale = 1.0;

  double phi(double x, double y, double z) const {
    double qx = x - trans[0], qy = y - trans[1], qz = z - trans[2];
    const Tensor& R = rot;
    double lx = (R[0] * qx + R[3] * qy + R[6] * qz) / scale;
    double ly = (R[1] * qx + R[4] * qy + R[7] * qz) / scale;
    double lz = (R[2] * qx + R[5] * qy + R[8] * qz) / scale;
    return scale * sdf_canonical(*tmpl, lx, ly, lz);
  }
};

inline WorldSdf make_world_sdf(const ObjectTemplate& t, const Tensor& rot6d, const Tensor& trans,
                               double scale = 1.0) {
  if (!trans.all_finite() || !rot6d.all_finite()) fail_numeric("world_sdf: non-finite object pose");
  return WorldSdf{&t, rot6d_to_matrix(rot6d), trans.reshaped({3}), scale};
}

inline double world_sdf(const ObjectTemplate& t, const Tensor& rot6d, const Tensor& trans,
                        const Tensor& query) {
  if (!query.all_finite()) fail_numeric("world_sdf: non-finite query");
  return make_world_sdf(t, rot6d, trans).phi(query[0], query[1], query[2]);
}

// ---------------------------------------------------------------------------
// differentiable object pose and SDF

struct ObjectPoseVars {
  Var vertices;  // M x 3
  Var rot;       // 3 x 3
  Var trans;     // 1 x 3
};

inline ObjectPoseVars object_forward(Tape& tape, const ObjectTemplate& tmpl, Var rot6, Var trans) {
  Var r6 = rot6.val().ndim() == 2 ? rot6 : reshape(rot6, {1, 6});
  Var t_row = trans.val().ndim() == 2 ? trans : reshape(trans, {1, 3});
  Var R = reshape(rot6d_rows_to_matrices(r6), {3, 3});
  Var verts = add_rowvec(matmul(tape.constant(tmpl.mesh_vertices), transpose(R)), t_row);
  return ObjectPoseVars{verts, R, t_row};
}

/// Signed distance of each query row under a differentiable object pose.
/// Returns N x 1. Subgradients at SDF ridges.
inline Var sdf_rows(Tape& tape, const ObjectTemplate& tmpl, Var rot /*3x3*/, Var trans /*1x3*/,
                    Var queries /*Nx3*/) {
  Var local = matmul(add_rowvec(queries, neg(trans)), rot);
  switch (tmpl.sdf_kind) {
    case SdfKind::Box: {
      Var h = tape.constant(Tensor({1, 3}, {tmpl.sdf_params[0], tmpl.sdf_params[1], tmpl.sdf_params[2]}));
      Var d = add_rowvec(abs(local), neg(h));
      Var outside = sqrt(row_sum(square(max_scalar(d, 0.0))));
      Var inside = min_scalar(row_max(d), 0.0);
      return add(outside, inside);
    }
    case SdfKind::Cylinder: {
      Var px = slice_cols(local, 0, 1), py = slice_cols(local, 1, 2), pz = slice_cols(local, 2, 3);
      Var dr = add_scalar(sqrt(add(square(px), square(pz))), -tmpl.sdf_params[0]);
      Var dy = add_scalar(abs(py), -tmpl.sdf_params[1]);
      Var d = concat_cols({dr, dy});
      Var outside = sqrt(row_sum(square(max_scalar(d, 0.0))));
      Var inside = min_scalar(row_max(d), 0.0);
      return add(outside, inside);
    }
    case SdfKind::Sphere:
      return add_scalar(sqrt(row_sum(square(local))), -tmpl.sdf_params[0]);
    case SdfKind::Grid: {
      const GridSdf& g = *tmpl.grid;
      const Tensor& lv = local.val();
      int64_t n = lv.rows();
      std::vector<double> cell_origin(static_cast<size_t>(n * 3));
      std::vector<double> corners(static_cast<size_t>(n * 8));
      for (int64_t i = 0; i < n; ++i) {
        std::array<int64_t, 3> c;
        std::array<double, 3> f;
        g.locate(lv.at(i, 0), lv.at(i, 1), lv.at(i, 2), c, f);
        for (int d = 0; d < 3; ++d)
          cell_origin[static_cast<size_t>(i * 3 + d)] =
              g.origin[static_cast<size_t>(d)] +
              static_cast<double>(c[static_cast<size_t>(d)]) * g.spacing[static_cast<size_t>(d)];
        for (int b = 0; b < 8; ++b)
          corners[static_cast<size_t>(i * 8 + b)] =
              g.at(c[0] + (b >> 2 & 1), c[1] + (b >> 1 & 1), c[2] + (b & 1));
      }
      Var inv_sp = tape.constant(
          Tensor({1, 3}, {1.0 / g.spacing[0], 1.0 / g.spacing[1], 1.0 / g.spacing[2]}));
      Var f = mul_rowvec(sub(local, tape.constant(Tensor({n, 3}, std::move(cell_origin)))), inv_sp);
      Var fx = slice_cols(f, 0, 1), fy = slice_cols(f, 1, 2), fz = slice_cols(f, 2, 3);
      Var gx = add_scalar(neg(fx), 1.0), gy = add_scalar(neg(fy), 1.0), gz = add_scalar(neg(fz), 1.0);
      Tensor ct({n, 8}, std::move(corners));
      Var phi{};
      for (int b = 0; b < 8; ++b) {
        Var w = mul(mul((b >> 2 & 1) ? fx : gx, (b >> 1 & 1) ? fy : gy), (b & 1) ? fz : gz);
        std::vector<double> col(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) col[static_cast<size_t>(i)] = ct[i * 8 + b];
        Var term = mul(w, tape.constant(Tensor({n, 1}, std::move(col))));
        phi = b == 0 ? term : add(phi, term);
      }
      return phi;
    }
  }
  fail_logic("sdf_rows: unknown kind");
}

// ---------------------------------------------------------------------------
// primitive meshes

struct MeshData {
  std::vector<double> verts;
  std::vector<std::array<int, 3>> faces;
};

inline MeshData make_box_mesh(double hx, double hy, double hz) {
  MeshData m;
  for (int i = 0; i < 8; ++i)
    m.verts.insert(m.verts.end(), {(i & 1 ? hx : -hx), (i & 2 ? hy : -hy), (i & 4 ? hz : -hz)});
  // outward-oriented faces (CCW seen from outside)
  m.faces = {{0, 2, 3}, {0, 3, 1}, {4, 5, 7}, {4, 7, 6}, {0, 1, 5}, {0, 5, 4},
             {2, 6, 7}, {2, 7, 3}, {0, 4, 6}, {0, 6, 2}, {1, 3, 7}, {1, 7, 5}};
  return m;
}

inline MeshData make_cylinder_mesh(double r, double hh, int segments = 24) {
  MeshData m;
  for (int ring = 0; ring < 2; ++ring) {
    double y = ring ? hh : -hh;
    for (int s = 0; s < segments; ++s) {
      double th = 2.0 * M_PI * s / segments;
      m.verts.insert(m.verts.end(), {r * std::cos(th), y, r * std::sin(th)});
    }
  }
  int bc = 2 * segments, tc = 2 * segments + 1;
  m.verts.insert(m.verts.end(), {0, -hh, 0});
  m.verts.insert(m.verts.end(), {0, hh, 0});
  for (int s = 0; s < segments; ++s) {
    int s2 = (s + 1) % segments;
    int b0 = s, b1 = s2, t0 = segments + s, t1 = segments + s2;
    m.faces.push_back({b0, t0, t1});
    m.faces.push_back({b0, t1, b1});
    m.faces.push_back({bc, b0, b1});  // bottom cap faces -y
    m.faces.push_back({tc, t1, t0});  // top cap faces +y
  }
  return m;
}

inline MeshData make_icosphere_mesh(double r, int subdivisions = 2) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<std::array<double, 3>> v = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
      {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  std::vector<std::array<int, 3>> f = {
      {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11}, {1, 5, 9},
      {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8}, {3, 9, 4}, {3, 4, 2},
      {3, 2, 6}, {3, 6, 8}, {3, 8, 9}, {4, 9, 5}, {2, 4, 11}, {6, 2, 10},
      {8, 6, 7}, {9, 8, 1}};
  auto norm_to_r = [&](std::array<double, 3>& p) {
    double n = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    p = {r * p[0] / n, r * p[1] / n, r * p[2] / n};
  };
  for (auto& p : v) norm_to_r(p);
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      std::array<double, 3> p = {(v[a][0] + v[b][0]) / 2, (v[a][1] + v[b][1]) / 2,
                                 (v[a][2] + v[b][2]) / 2};
      norm_to_r(p);
      v.push_back(p);
      int idx = static_cast<int>(v.size()) - 1;
      midpoint[key] = idx;
      return idx;
    };
    std::vector<std::array<int, 3>> nf;
    for (auto& tri : f) {
      int a = mid(tri[0], tri[1]), b = mid(tri[1], tri[2]), c = mid(tri[2], tri[0]);
      nf.push_back({tri[0], a, c});
      nf.push_back({tri[1], b, a});
      nf.push_back({tri[2], c, b});
      nf.push_back({a, b, c});
    }
    f = std::move(nf);
  }
  MeshData m;
  for (auto& p : v) m.verts.insert(m.verts.end(), {p[0], p[1], p[2]});
  m.faces = f;
  return m;
}

// ---------------------------------------------------------------------------
// coarse surface points (deterministic farthest-point sampling)

inline Tensor sample_coarse_points(const Tensor& verts, const std::vector<std::array<int, 3>>& faces,
                                   int64_t count = 64) {
  // candidate cloud: barycentric lattice on each face
  std::vector<std::array<double, 3>> cand;
  const int L = 5;
  for (const auto& f : faces) {
    for (int i = 0; i <= L; ++i)
      for (int j = 0; j + i <= L; ++j) {
        double a = static_cast<double>(i) / L, b = static_cast<double>(j) / L, c = 1.0 - a - b;
        cand.push_back({a * verts.at(f[0], 0) + b * verts.at(f[1], 0) + c * verts.at(f[2], 0),
                        a * verts.at(f[0], 1) + b * verts.at(f[1], 1) + c * verts.at(f[2], 1),
                        a * verts.at(f[0], 2) + b * verts.at(f[1], 2) + c * verts.at(f[2], 2)});
      }
  }
  size_t start = 0;
  for (size_t i = 1; i < cand.size(); ++i)
    if (cand[i] > cand[start]) start = i;  // lexicographic, deterministic

  std::vector<double> best_d(cand.size(), 1e30);
  std::vector<size_t> chosen = {start};
  while (static_cast<int64_t>(chosen.size()) < count) {
    size_t last = chosen.back();
    size_t far = 0;
    double far_d = -1.0;
    for (size_t i = 0; i < cand.size(); ++i) {
      double dx = cand[i][0] - cand[last][0], dy = cand[i][1] - cand[last][1],
             dz = cand[i][2] - cand[last][2];
      best_d[i] = std::min(best_d[i], dx * dx + dy * dy + dz * dz);
      if (best_d[i] > far_d) {
        far_d = best_d[i];
        far = i;
      }
    }
    chosen.push_back(far);
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(count * 3));
  for (size_t i : chosen)
    out.insert(out.end(), {cand[i][0], cand[i][1], cand[i][2]});
  return Tensor({count, 3}, std::move(out));
}

// ---------------------------------------------------------------------------
// grid SDF construction (winding-number sign, exact point-triangle distance)

namespace detail {

inline double point_triangle_dist(const double* p, const double* a, const double* b,
                                  const double* c) {
  auto sub3 = [](const double* u, const double* v, double* o) {
    o[0] = u[0] - v[0]; o[1] = u[1] - v[1]; o[2] = u[2] - v[2];
  };
  auto dot3 = [](const double* u, const double* v) {
    return u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
  };
  double ab[3], ac[3], ap[3];
  sub3(b, a, ab); sub3(c, a, ac); sub3(p, a, ap);
  double d1 = dot3(ab, ap), d2 = dot3(ac, ap);
  auto dist_to = [&](double vx, double vy, double vz) {
    double dx = p[0] - vx, dy = p[1] - vy, dz = p[2] - vz;
    return std::sqrt(dx * dx + dy * dy + dz * dz);
  };
  if (d1 <= 0 && d2 <= 0) return dist_to(a[0], a[1], a[2]);
  double bp[3];
  sub3(p, b, bp);
  double d3 = dot3(ab, bp), d4 = dot3(ac, bp);
  if (d3 >= 0 && d4 <= d3) return dist_to(b[0], b[1], b[2]);
  double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    double v = d1 / (d1 - d3);
    return dist_to(a[0] + v * ab[0], a[1] + v * ab[1], a[2] + v * ab[2]);
  }
  double cp[3];
  sub3(p, c, cp);
  double d5 = dot3(ab, cp), d6 = dot3(ac, cp);
  if (d6 >= 0 && d5 <= d6) return dist_to(c[0], c[1], c[2]);
  double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    double w = d2 / (d2 - d6);
    return dist_to(a[0] + w * ac[0], a[1] + w * ac[1], a[2] + w * ac[2]);
  }
  double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return dist_to(b[0] + w * (c[0] - b[0]), b[1] + w * (c[1] - b[1]), b[2] + w * (c[2] - b[2]));
  }
  double denom = 1.0 / (va + vb + vc);
  double v = vb * denom, w = vc * denom;
  return dist_to(a[0] + ab[0] * v + ac[0] * w, a[1] + ab[1] * v + ac[1] * w,
                 a[2] + ab[2] * v + ac[2] * w);
}

inline double solid_angle(const double* p, const double* a, const double* b, const double* c) {
  double A[3] = {a[0] - p[0], a[1] - p[1], a[2] - p[2]};
  double B[3] = {b[0] - p[0], b[1] - p[1], b[2] - p[2]};
  double C[3] = {c[0] - p[0], c[1] - p[1], c[2] - p[2]};
  double la = std::sqrt(A[0] * A[0] + A[1] * A[1] + A[2] * A[2]);
  double lb = std::sqrt(B[0] * B[0] + B[1] * B[1] + B[2] * B[2]);
  double lc = std::sqrt(C[0] * C[0] + C[1] * C[1] + C[2] * C[2]);
  double num = A[0] * (B[1] * C[2] - B[2] * C[1]) + A[1] * (B[2] * C[0] - B[0] * C[2]) +
               A[2] * (B[0] * C[1] - B[1] * C[0]);
  double den = la * lb * lc + (A[0] * B[0] + A[1] * B[1] + A[2] * B[2]) * lc +
               (B[0] * C[0] + B[1] * C[1] + B[2] * C[2]) * la +
               (C[0] * A[0] + C[1] * A[1] + C[2] * A[2]) * lb;
  return 2.0 * std::atan2(num, den);
}

}  // namespace detail

/// Samples a signed-distance grid from a watertight triangle mesh. Signs come
/// from the generalized winding number, distances from exact point-triangle
/// distance over all faces.
inline GridSdf build_grid_sdf(const Tensor& verts, const std::vector<std::array<int, 3>>& faces,
                              int64_t resolution = 64, double margin = 0.1) {
  GridSdf g;
  double lo[3] = {1e30, 1e30, 1e30}, hi[3] = {-1e30, -1e30, -1e30};
  for (int64_t i = 0; i < verts.rows(); ++i)
    for (int d = 0; d < 3; ++d) {
      lo[d] = std::min(lo[d], verts.at(i, d));
      hi[d] = std::max(hi[d], verts.at(i, d));
    }
  for (int d = 0; d < 3; ++d) {
    g.origin[static_cast<size_t>(d)] = lo[d] - margin;
    g.spacing[static_cast<size_t>(d)] = (hi[d] - lo[d] + 2 * margin) / static_cast<double>(resolution - 1);
    g.dims[static_cast<size_t>(d)] = resolution;
  }
  g.values.resize(static_cast<size_t>(resolution * resolution * resolution));
  const double* vd = verts.data();
  for (int64_t ix = 0; ix < resolution; ++ix)
    for (int64_t iy = 0; iy < resolution; ++iy)
      for (int64_t iz = 0; iz < resolution; ++iz) {
        double p[3] = {g.origin[0] + ix * g.spacing[0], g.origin[1] + iy * g.spacing[1],
                       g.origin[2] + iz * g.spacing[2]};
        double dmin = 1e30, wind = 0.0;
        for (const auto& f : faces) {
          const double* a = vd + 3 * f[0];
          const double* b = vd + 3 * f[1];
          const double* c = vd + 3 * f[2];
          dmin = std::min(dmin, detail::point_triangle_dist(p, a, b, c));
          wind += detail::solid_angle(p, a, b, c);
        }
        bool inside = wind > 2.0 * M_PI;  // winding number > 1/2
        g.values[static_cast<size_t>((ix * resolution + iy) * resolution + iz)] =
            inside ? -dmin : dmin;
      }
  return g;
}

// ---------------------------------------------------------------------------
// template construction and registry I/O

inline ObjectTemplate make_primitive_template(const std::string& id, SdfKind kind,
                                              std::vector<double> params) {
  ObjectTemplate t;
  t.id = id;
  t.sdf_kind = kind;
  t.sdf_params = params;
  MeshData mesh;
  switch (kind) {
    case SdfKind::Box: mesh = make_box_mesh(params[0], params[1], params[2]); break;
    case SdfKind::Cylinder: mesh = make_cylinder_mesh(params[0], params[1]); break;
    case SdfKind::Sphere: mesh = make_icosphere_mesh(params[0], 2); break;
    case SdfKind::Grid: fail_config("make_primitive_template: grid kind needs a mesh");
  }
  int64_t n = static_cast<int64_t>(mesh.verts.size() / 3);
  t.mesh_vertices = Tensor({n, 3}, std::move(mesh.verts));
  t.faces = std::move(mesh.faces);
  t.coarse_points = sample_coarse_points(t.mesh_vertices, t.faces);
  t.validate();
  return t;
}

inline ObjectTemplate make_grid_template(const std::string& id, const Tensor& verts,
                                         std::vector<std::array<int, 3>> faces,
                                         int64_t resolution = 64, double margin = 0.1) {
  ObjectTemplate t;
  t.id = id;
  t.sdf_kind = SdfKind::Grid;
  t.sdf_params = {static_cast<double>(resolution), margin};
  t.mesh_vertices = verts;
  t.faces = std::move(faces);
  t.coarse_points = sample_coarse_points(t.mesh_vertices, t.faces);
  t.grid = build_grid_sdf(t.mesh_vertices, t.faces, resolution, margin);
  t.validate();
  return t;
}

/// The stock template set used by the scene generator.
inline std::vector<ObjectTemplate> make_default_templates() {
  std::vector<ObjectTemplate> out;
  out.push_back(make_primitive_template("box_seat", SdfKind::Box, {0.22, 0.36, 0.16}));
  out.push_back(make_primitive_template("crate", SdfKind::Box, {0.16, 0.13, 0.19}));
  out.push_back(make_primitive_template("ball", SdfKind::Sphere, {0.12}));
  out.push_back(make_primitive_template("pillar", SdfKind::Cylinder, {0.14, 0.625}));
  return out;
}

/// Registry: one `<id>.tpl` file per object with a header, the canonical mesh
/// as OBJ v/f records and 64 coarse points as x y z rows.
inline void save_template(const ObjectTemplate& t, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream f(dir / (t.id + ".tpl"));
  if (!f) fail_data("save_template: cannot write to " + (dir / (t.id + ".tpl")).string());
  f.precision(17);
  f << "hoiopt-template 1\n";
  f << "id " << t.id << "\n";
  f << "sdf " << sdf_kind_name(t.sdf_kind);
  for (double p : t.sdf_params) f << " " << p;
  f << "\n";
  f << "mesh " << t.mesh_vertices.rows() << " " << t.faces.size() << "\n";
  for (int64_t i = 0; i < t.mesh_vertices.rows(); ++i)
    f << "v " << t.mesh_vertices.at(i, 0) << " " << t.mesh_vertices.at(i, 1) << " "
      << t.mesh_vertices.at(i, 2) << "\n";
  for (const auto& face : t.faces)
    f << "f " << face[0] + 1 << " " << face[1] + 1 << " " << face[2] + 1 << "\n";
  f << "points 64\n";
  for (int64_t i = 0; i < 64; ++i)
    f << t.coarse_points.at(i, 0) << " " << t.coarse_points.at(i, 1) << " "
      << t.coarse_points.at(i, 2) << "\n";
}

inline ObjectTemplate load_template(const std::filesystem::path& file) {
  std::ifstream f(file);
  if (!f) fail_data("load_template: cannot open " + file.string());
  std::string word;
  int version;
  f >> word >> version;
  if (word != "hoiopt-template" || version != 1)
    fail_data("load_template: bad header in " + file.string());
  ObjectTemplate t;
  f >> word >> t.id;
  if (word != "id") fail_data("load_template: expected id line in " + file.string());
  f >> word;
  if (word != "sdf") fail_data("load_template: expected sdf line in " + file.string());
  std::string kind;
  f >> kind;
  int np = 0;
  if (kind == "box") { t.sdf_kind = SdfKind::Box; np = 3; }
  else if (kind == "cylinder") { t.sdf_kind = SdfKind::Cylinder; np = 2; }
  else if (kind == "sphere") { t.sdf_kind = SdfKind::Sphere; np = 1; }
  else if (kind == "grid") { t.sdf_kind = SdfKind::Grid; np = 2; }
  else fail_data("load_template: unknown sdf kind '" + kind + "'");
  t.sdf_params.resize(static_cast<size_t>(np));
  for (double& p : t.sdf_params) f >> p;
  int64_t nv, nf;
  f >> word >> nv >> nf;
  if (word != "mesh") fail_data("load_template: expected mesh line in " + file.string());
  std::vector<double> verts;
  verts.reserve(static_cast<size_t>(nv * 3));
  for (int64_t i = 0; i < nv; ++i) {
    double x, y, z;
    f >> word >> x >> y >> z;
    if (word != "v") fail_data("load_template: expected v record in " + file.string());
    verts.insert(verts.end(), {x, y, z});
  }
  for (int64_t i = 0; i < nf; ++i) {
    int a, b, c;
    f >> word >> a >> b >> c;
    if (word != "f") fail_data("load_template: expected f record in " + file.string());
    t.faces.push_back({a - 1, b - 1, c - 1});
  }
  int64_t npts;
  f >> word >> npts;
  if (word != "points" || npts != 64) fail_data("load_template: expected 64 points in " + file.string());
  std::vector<double> pts;
  pts.reserve(64 * 3);
  for (int64_t i = 0; i < 64; ++i) {
    double x, y, z;
    f >> x >> y >> z;
    pts.insert(pts.end(), {x, y, z});
  }
  if (!f) fail_data("load_template: truncated file " + file.string());
  t.mesh_vertices = Tensor({nv, 3}, std::move(verts));
  t.coarse_points = Tensor({64, 3}, std::move(pts));
  if (t.sdf_kind == SdfKind::Grid)
    t.grid = build_grid_sdf(t.mesh_vertices, t.faces, static_cast<int64_t>(t.sdf_params[0]),
                            t.sdf_params[1]);
  t.validate();
  return t;
}

class TemplateRegistry {
 public:
  TemplateRegistry() = default;

  static TemplateRegistry defaults() {
    TemplateRegistry r;
    for (auto& t : make_default_templates()) r.add(std::move(t));
    return r;
  }

  static TemplateRegistry load_dir(const std::filesystem::path& dir) {
    TemplateRegistry r;
    if (!std::filesystem::is_directory(dir))
      fail_data("template registry: not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (auto& e : std::filesystem::directory_iterator(dir))
      if (e.path().extension() == ".tpl") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (auto& f : files) r.add(load_template(f));
    if (r.size() == 0) fail_data("template registry: no .tpl files in " + dir.string());
    return r;
  }

  void save_dir(const std::filesystem::path& dir) const {
    for (const auto& [id, t] : templates_) save_template(t, dir);
  }

  void add(ObjectTemplate t) { templates_[t.id] = std::move(t); }

  const ObjectTemplate& get(const std::string& id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) fail_data("template registry: unknown id '" + id + "'");
    return it->second;
  }

  bool has(const std::string& id) const { return templates_.count(id) > 0; }
  size_t size() const { return templates_.size(); }
  const std::map<std::string, ObjectTemplate>& all() const { return templates_; }

 private:
  std::map<std::string, ObjectTemplate> templates_;
};

}  // namespace hoiopt
