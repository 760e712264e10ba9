#pragma once

#include <cmath>

#include "hoiopt/ops.hpp"
#include "hoiopt/tape.hpp"

namespace hoiopt {

/// 6D rotation representation: the first two columns of the rotation matrix,
/// stored as [a1x a1y a1z a2x a2y a2z]. Orthonormalized via Gram-Schmidt;
/// the third column is the cross product.
///
/// Degenerate inputs (zero or near-parallel columns, tolerance 1e-9) are a
/// hard error: they indicate optimizer blow-up worth surfacing, not a state
/// to silently repair.
inline constexpr double kRot6dDegenerateTol = 1e-9;

namespace detail {
inline void check_rot6d_rows(const Tensor& r) {
  int64_t n = r.rows();
  for (int64_t i = 0; i < n; ++i) {
    const double* a = r.data() + i * 6;
    for (int j = 0; j < 6; ++j)
      if (!std::isfinite(a[j])) fail_numeric("rot6d: non-finite input in row " + std::to_string(i));
    double n1 = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
    if (n1 < kRot6dDegenerateTol)
      fail_numeric("rot6d: first column near zero (row " + std::to_string(i) + ")");
    double b1x = a[0] / n1, b1y = a[1] / n1, b1z = a[2] / n1;
    double d = b1x * a[3] + b1y * a[4] + b1z * a[5];
    double ux = a[3] - d * b1x, uy = a[4] - d * b1y, uz = a[5] - d * b1z;
    if (std::sqrt(ux * ux + uy * uy + uz * uz) < kRot6dDegenerateTol)
      fail_numeric("rot6d: columns near parallel (row " + std::to_string(i) + ")");
  }
}
}  // namespace detail

/// Batch Gram-Schmidt: maps K x 6 rows to K x 9 row-major rotation matrices,
/// differentiable through the tape.
inline Var rot6d_rows_to_matrices(Var r6) {
  const Tensor& rv = r6.val();
  if (rv.ndim() != 2 || rv.cols() != 6)
    fail_shape("rot6d_rows_to_matrices: expected K x 6, got " + shape_str(rv.shape()));
  detail::check_rot6d_rows(rv);

  Var a1 = slice_cols(r6, 0, 3);
  Var a2 = slice_cols(r6, 3, 6);
  Var inv_n1 = div(r6.tape->constant(Tensor::full({rv.rows(), 1}, 1.0)),
                   sqrt(row_sum(square(a1))));
  Var b1 = mul_colvec(a1, inv_n1);
  Var proj = row_sum(mul(b1, a2));           // K x 1 dot(b1, a2)
  Var u = sub(a2, mul_colvec(b1, proj));
  Var inv_n2 = div(r6.tape->constant(Tensor::full({rv.rows(), 1}, 1.0)),
                   sqrt(row_sum(square(u))));
  Var b2 = mul_colvec(u, inv_n2);
  Var b3 = cross_rows(b1, b2);

  // rows are [r00 r01 r02 r10 r11 r12 r20 r21 r22] with columns (b1, b2, b3)
  std::vector<Var> cols;
  for (int r = 0; r < 3; ++r) {
    cols.push_back(slice_cols(b1, r, r + 1));
    cols.push_back(slice_cols(b2, r, r + 1));
    cols.push_back(slice_cols(b3, r, r + 1));
  }
  return concat_cols(cols);
}

/// Single 6-vector to 3x3 rotation (plain tensors).
inline Tensor rot6d_to_matrix(const Tensor& r6) {
  if (r6.numel() != 6) fail_shape("rot6d_to_matrix: expected 6 values, got " + shape_str(r6.shape()));
  Tape t(false);
  Var m = rot6d_rows_to_matrices(t.leaf(r6.reshaped({1, 6}), false));
  return m.val().reshaped({3, 3});
}

/// Inverse embedding: first two columns of R as a 6-vector.
inline Tensor rot6d_from_matrix(const Tensor& R) {
  if (R.numel() != 9) fail_shape("rot6d_from_matrix: expected 3x3, got " + shape_str(R.shape()));
  return Tensor({6}, {R[0], R[3], R[6], R[1], R[4], R[7]});
}

inline Tensor identity_rot6d() { return Tensor({6}, {1, 0, 0, 0, 1, 0}); }

/// Rodrigues rotation about a (not necessarily unit) axis.
inline Tensor axis_angle_matrix(double ax, double ay, double az, double angle) {
  double n = std::sqrt(ax * ax + ay * ay + az * az);
  if (n == 0.0) return Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  double x = ax / n, y = ay / n, z = az / n;
  double c = std::cos(angle), s = std::sin(angle), C = 1 - c;
  return Tensor({3, 3}, {c + x * x * C, x * y * C - z * s, x * z * C + y * s,
                         y * x * C + z * s, c + y * y * C, y * z * C - x * s,
                         z * x * C - y * s, z * y * C + x * s, c + z * z * C});
}

inline Tensor mat3_mul(const Tensor& A, const Tensor& B) {
  std::vector<double> y(9, 0.0);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k)
      for (int j = 0; j < 3; ++j) y[static_cast<size_t>(i * 3 + j)] += A[i * 3 + k] * B[k * 3 + j];
  return Tensor({3, 3}, std::move(y));
}

inline Tensor mat3_transpose(const Tensor& A) {
  return Tensor({3, 3}, {A[0], A[3], A[6], A[1], A[4], A[7], A[2], A[5], A[8]});
}

}  // namespace hoiopt
