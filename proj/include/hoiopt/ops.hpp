#pragma once

// Differentiable primitives over Tape/Var. Each op validates operand shapes,
// computes the forward value, and records a backward closure when gradients
// are enabled. Shape mixing is deliberately strict: only scalar-tensor and
// explicit row/column-vector forms are allowed, everything else is an error.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <span>
#include <vector>

#include "hoiopt/tape.hpp"

namespace hoiopt {
namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    fail_shape(std::string(op) + ": shapes differ " + shape_str(a.shape()) + " vs " +
               shape_str(b.shape()));
}

inline void require_2d(const Tensor& a, const char* op) {
  if (a.ndim() != 2)
    fail_shape(std::string(op) + ": expected 2-D tensor, got " + shape_str(a.shape()));
}

inline void require_same_tape(const Var& a, const Var& b, const char* op) {
  if (a.tape != b.tape) fail_logic(std::string(op) + ": operands live on different tapes");
}

// y = A(n x k) * B(k x m)
inline void mm_nn(const double* A, const double* B, double* C, int64_t n, int64_t k, int64_t m) {
  std::memset(C, 0, sizeof(double) * static_cast<size_t>(n * m));
  for (int64_t i = 0; i < n; ++i) {
    const double* Ai = A + i * k;
    double* Ci = C + i * m;
    for (int64_t p = 0; p < k; ++p) {
      double a = Ai[p];
      if (a == 0.0) continue;
      const double* Bp = B + p * m;
      for (int64_t j = 0; j < m; ++j) Ci[j] += a * Bp[j];
    }
  }
}

// y = A(n x k) * B(m x k)^T
inline void mm_nt(const double* A, const double* B, double* C, int64_t n, int64_t k, int64_t m) {
  for (int64_t i = 0; i < n; ++i) {
    const double* Ai = A + i * k;
    double* Ci = C + i * m;
    for (int64_t j = 0; j < m; ++j) {
      const double* Bj = B + j * k;
      double s = 0.0;
      for (int64_t p = 0; p < k; ++p) s += Ai[p] * Bj[p];
      Ci[j] = s;
    }
  }
}

// y = A(k x n)^T * B(k x m)
inline void mm_tn(const double* A, const double* B, double* C, int64_t n, int64_t k, int64_t m) {
  std::memset(C, 0, sizeof(double) * static_cast<size_t>(n * m));
  for (int64_t p = 0; p < k; ++p) {
    const double* Ap = A + p * n;
    const double* Bp = B + p * m;
    for (int64_t i = 0; i < n; ++i) {
      double a = Ap[i];
      if (a == 0.0) continue;
      double* Ci = C + i * m;
      for (int64_t j = 0; j < m; ++j) Ci[j] += a * Bp[j];
    }
  }
}

template <typename F>
Var elementwise_unary(Var a, F&& fwd_and_dydx, const char* /*op*/) {
  const Tensor& av = a.val();
  int64_t n = av.numel();
  std::vector<double> y(static_cast<size_t>(n)), d;
  bool need_grad = a.tape->grad_enabled() && a.requires_grad();
  if (need_grad) d.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    auto [yi, di] = fwd_and_dydx(av[i]);
    y[static_cast<size_t>(i)] = yi;
    if (need_grad) d[static_cast<size_t>(i)] = di;
  }
  Tensor out(av.shape(), std::move(y));
  return a.tape->emit(std::move(out), {a},
                      [a, d = std::move(d)](const Tensor& g, GradBuf& gb) {
                        auto& ga = gb.at(a.id, g.numel());
                        for (int64_t i = 0; i < g.numel(); ++i)
                          ga[static_cast<size_t>(i)] += g[i] * d[static_cast<size_t>(i)];
                      });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// arithmetic

inline Var add(Var a, Var b) {
  detail::require_same_tape(a, b, "add");
  detail::require_same_shape(a.val(), b.val(), "add");
  const Tensor &av = a.val(), &bv = b.val();
  std::vector<double> y(static_cast<size_t>(av.numel()));
  for (int64_t i = 0; i < av.numel(); ++i) y[static_cast<size_t>(i)] = av[i] + bv[i];
  return a.tape->emit(Tensor(av.shape(), std::move(y)), {a, b},
                      [a, b](const Tensor& g, GradBuf& gb) {
                        gb.accum(a.id, g);
                        gb.accum(b.id, g);
                      });
}

inline Var sub(Var a, Var b) {
  detail::require_same_tape(a, b, "sub");
  detail::require_same_shape(a.val(), b.val(), "sub");
  const Tensor &av = a.val(), &bv = b.val();
  std::vector<double> y(static_cast<size_t>(av.numel()));
  for (int64_t i = 0; i < av.numel(); ++i) y[static_cast<size_t>(i)] = av[i] - bv[i];
  return a.tape->emit(Tensor(av.shape(), std::move(y)), {a, b},
                      [a, b](const Tensor& g, GradBuf& gb) {
                        gb.accum(a.id, g);
                        auto& gbv = gb.at(b.id, g.numel());
                        for (int64_t i = 0; i < g.numel(); ++i) gbv[static_cast<size_t>(i)] -= g[i];
                      });
}

inline Var neg(Var a) {
  return detail::elementwise_unary(a, [](double x) { return std::pair{-x, -1.0}; }, "neg");
}

inline Var mul(Var a, Var b) {
  detail::require_same_tape(a, b, "mul");
  detail::require_same_shape(a.val(), b.val(), "mul");
  const Tensor &av = a.val(), &bv = b.val();
  std::vector<double> y(static_cast<size_t>(av.numel()));
  for (int64_t i = 0; i < av.numel(); ++i) y[static_cast<size_t>(i)] = av[i] * bv[i];
  return a.tape->emit(Tensor(av.shape(), std::move(y)), {a, b},
                      [a, b, av, bv](const Tensor& g, GradBuf& gb) {
                        auto& ga = gb.at(a.id, g.numel());
                        auto& gbv = gb.at(b.id, g.numel());
                        for (int64_t i = 0; i < g.numel(); ++i) {
                          ga[static_cast<size_t>(i)] += g[i] * bv[i];
                          gbv[static_cast<size_t>(i)] += g[i] * av[i];
                        }
                      });
}

inline Var div(Var a, Var b) {
  detail::require_same_tape(a, b, "div");
  detail::require_same_shape(a.val(), b.val(), "div");
  const Tensor &av = a.val(), &bv = b.val();
  std::vector<double> y(static_cast<size_t>(av.numel()));
  for (int64_t i = 0; i < av.numel(); ++i) {
    if (bv[i] == 0.0) fail_numeric("div: division by zero at flat index " + std::to_string(i));
    y[static_cast<size_t>(i)] = av[i] / bv[i];
  }
  return a.tape->emit(Tensor(av.shape(), std::move(y)), {a, b},
                      [a, b, av, bv](const Tensor& g, GradBuf& gb) {
                        auto& ga = gb.at(a.id, g.numel());
                        auto& gbv = gb.at(b.id, g.numel());
                        for (int64_t i = 0; i < g.numel(); ++i) {
                          double inv = 1.0 / bv[i];
                          ga[static_cast<size_t>(i)] += g[i] * inv;
                          gbv[static_cast<size_t>(i)] -= g[i] * av[i] * inv * inv;
                        }
                      });
}

inline Var add_scalar(Var a, double c) {
  return detail::elementwise_unary(a, [c](double x) { return std::pair{x + c, 1.0}; }, "add_scalar");
}

inline Var mul_scalar(Var a, double c) {
  return detail::elementwise_unary(a, [c](double x) { return std::pair{x * c, c}; }, "mul_scalar");
}

/// Multiply a tensor by a scalar held in a 1-element Var.
inline Var scale_by(Var m, Var s) {
  detail::require_same_tape(m, s, "scale_by");
  if (!s.val().is_scalar())
    fail_shape("scale_by: scale must be a 1-element tensor, got " + shape_str(s.val().shape()));
  const Tensor& mv = m.val();
  double sv = s.val()[0];
  std::vector<double> y(static_cast<size_t>(mv.numel()));
  for (int64_t i = 0; i < mv.numel(); ++i) y[static_cast<size_t>(i)] = mv[i] * sv;
  return m.tape->emit(Tensor(mv.shape(), std::move(y)), {m, s},
                      [m, s, mv, sv](const Tensor& g, GradBuf& gb) {
                        auto& gm = gb.at(m.id, g.numel());
                        auto& gs = gb.at(s.id, 1);
                        for (int64_t i = 0; i < g.numel(); ++i) {
                          gm[static_cast<size_t>(i)] += g[i] * sv;
                          gs[0] += g[i] * mv[i];
                        }
                      });
}

// ---------------------------------------------------------------------------
// row/column vector forms (the only non-scalar broadcasts supported)

inline Var add_rowvec(Var m, Var row) {
  detail::require_same_tape(m, row, "add_rowvec");
  detail::require_2d(m.val(), "add_rowvec");
  const Tensor &mv = m.val(), &rv = row.val();
  if (rv.numel() != mv.cols())
    fail_shape("add_rowvec: row length " + shape_str(rv.shape()) + " does not match matrix " +
               shape_str(mv.shape()));
  int64_t n = mv.rows(), c = mv.cols();
  std::vector<double> y(static_cast<size_t>(n * c));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) y[static_cast<size_t>(i * c + j)] = mv[i * c + j] + rv[j];
  return m.tape->emit(Tensor(mv.shape(), std::move(y)), {m, row},
                      [m, row, n, c](const Tensor& g, GradBuf& gb) {
                        gb.accum(m.id, g);
                        auto& gr = gb.at(row.id, c);
                        for (int64_t i = 0; i < n; ++i)
                          for (int64_t j = 0; j < c; ++j) gr[static_cast<size_t>(j)] += g[i * c + j];
                      });
}

inline Var add_colvec(Var m, Var col) {
  detail::require_same_tape(m, col, "add_colvec");
  detail::require_2d(m.val(), "add_colvec");
  const Tensor &mv = m.val(), &cv = col.val();
  if (cv.numel() != mv.rows())
    fail_shape("add_colvec: column length " + shape_str(cv.shape()) + " does not match matrix " +
               shape_str(mv.shape()));
  int64_t n = mv.rows(), c = mv.cols();
  std::vector<double> y(static_cast<size_t>(n * c));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) y[static_cast<size_t>(i * c + j)] = mv[i * c + j] + cv[i];
  return m.tape->emit(Tensor(mv.shape(), std::move(y)), {m, col},
                      [m, col, n, c](const Tensor& g, GradBuf& gb) {
                        gb.accum(m.id, g);
                        auto& gc = gb.at(col.id, n);
                        for (int64_t i = 0; i < n; ++i)
                          for (int64_t j = 0; j < c; ++j) gc[static_cast<size_t>(i)] += g[i * c + j];
                      });
}

inline Var mul_colvec(Var m, Var col) {
  detail::require_same_tape(m, col, "mul_colvec");
  detail::require_2d(m.val(), "mul_colvec");
  const Tensor &mv = m.val(), &cv = col.val();
  if (cv.numel() != mv.rows())
    fail_shape("mul_colvec: column length " + shape_str(cv.shape()) + " does not match matrix " +
               shape_str(mv.shape()));
  int64_t n = mv.rows(), c = mv.cols();
  std::vector<double> y(static_cast<size_t>(n * c));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) y[static_cast<size_t>(i * c + j)] = mv[i * c + j] * cv[i];
  return m.tape->emit(Tensor(mv.shape(), std::move(y)), {m, col},
                      [m, col, mv, cv, n, c](const Tensor& g, GradBuf& gb) {
                        auto& gm = gb.at(m.id, n * c);
                        auto& gc = gb.at(col.id, n);
                        for (int64_t i = 0; i < n; ++i)
                          for (int64_t j = 0; j < c; ++j) {
                            gm[static_cast<size_t>(i * c + j)] += g[i * c + j] * cv[i];
                            gc[static_cast<size_t>(i)] += g[i * c + j] * mv[i * c + j];
                          }
                      });
}

inline Var mul_rowvec(Var m, Var row) {
  detail::require_same_tape(m, row, "mul_rowvec");
  detail::require_2d(m.val(), "mul_rowvec");
  const Tensor &mv = m.val(), &rv = row.val();
  if (rv.numel() != mv.cols())
    fail_shape("mul_rowvec: row length " + shape_str(rv.shape()) + " does not match matrix " +
               shape_str(mv.shape()));
  int64_t n = mv.rows(), c = mv.cols();
  std::vector<double> y(static_cast<size_t>(n * c));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) y[static_cast<size_t>(i * c + j)] = mv[i * c + j] * rv[j];
  return m.tape->emit(Tensor(mv.shape(), std::move(y)), {m, row},
                      [m, row, mv, rv, n, c](const Tensor& g, GradBuf& gb) {
                        auto& gm = gb.at(m.id, n * c);
                        auto& gr = gb.at(row.id, c);
                        for (int64_t i = 0; i < n; ++i)
                          for (int64_t j = 0; j < c; ++j) {
                            gm[static_cast<size_t>(i * c + j)] += g[i * c + j] * rv[j];
                            gr[static_cast<size_t>(j)] += g[i * c + j] * mv[i * c + j];
                          }
                      });
}

// ---------------------------------------------------------------------------
// linear algebra

inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b, "matmul");
  const Tensor &av = a.val(), &bv = b.val();
  detail::require_2d(av, "matmul");
  detail::require_2d(bv, "matmul");
  if (av.cols() != bv.rows())
    fail_shape("matmul: inner dimensions differ " + shape_str(av.shape()) + " vs " +
               shape_str(bv.shape()));
  int64_t n = av.rows(), k = av.cols(), m = bv.cols();
  std::vector<double> y(static_cast<size_t>(n * m));
  detail::mm_nn(av.data(), bv.data(), y.data(), n, k, m);
  return a.tape->emit(Tensor({n, m}, std::move(y)), {a, b},
                      [a, b, av, bv, n, k, m](const Tensor& g, GradBuf& gb) {
                        // dA = g * B^T, dB = A^T * g
                        auto& ga = gb.at(a.id, n * k);
                        auto& gbm = gb.at(b.id, k * m);
                        std::vector<double> tmp(static_cast<size_t>(n * k));
                        detail::mm_nt(g.data(), bv.data(), tmp.data(), n, m, k);
                        for (size_t i = 0; i < tmp.size(); ++i) ga[i] += tmp[i];
                        std::vector<double> tmp2(static_cast<size_t>(k * m));
                        detail::mm_tn(av.data(), g.data(), tmp2.data(), k, n, m);
                        for (size_t i = 0; i < tmp2.size(); ++i) gbm[i] += tmp2[i];
                      });
}

inline Var transpose(Var a) {
  const Tensor& av = a.val();
  detail::require_2d(av, "transpose");
  int64_t n = av.rows(), c = av.cols();
  std::vector<double> y(static_cast<size_t>(n * c));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) y[static_cast<size_t>(j * n + i)] = av[i * c + j];
  return a.tape->emit(Tensor({c, n}, std::move(y)), {a},
                      [a, n, c](const Tensor& g, GradBuf& gb) {
                        auto& ga = gb.at(a.id, n * c);
                        for (int64_t i = 0; i < c; ++i)
                          for (int64_t j = 0; j < n; ++j)
                            ga[static_cast<size_t>(j * c + i)] += g[i * n + j];
                      });
}

// ---------------------------------------------------------------------------
// reductions

inline Var sum(Var a) {
  const Tensor& av = a.val();
  double s = 0.0;
  for (int64_t i = 0; i < av.numel(); ++i) s += av[i];
  int64_t n = av.numel();
  return a.tape->emit(Tensor::scalar(s), {a},
                      [a, n](const Tensor& g, GradBuf& gb) {
                        auto& ga = gb.at(a.id, n);
                        for (int64_t i = 0; i < n; ++i) ga[static_cast<size_t>(i)] += g[0];
                      });
}

inline Var mean(Var a) {
  const Tensor& av = a.val();
  if (av.numel() == 0) fail_shape("mean: empty tensor");
  double s = 0.0;
  for (int64_t i = 0; i < av.numel(); ++i) s += av[i];
  int64_t n = av.numel();
  double inv = 1.0 / static_cast<double>(n);
  return a.tape->emit(Tensor::scalar(s * inv), {a},
                      [a, n, inv](const Tensor& g, GradBuf& gb) {
                        auto& ga = gb.at(a.id, n);
                        for (int64_t i = 0; i < n; ++i) ga[static_cast<size_t>(i)] += g[0] * inv;
                      });
}

inline Var row_sum(Var a) {
  const Tensor& av = a.val();
  detail::require_2d(av, "row_sum");
  int64_t n = av.rows(), c = av.cols();
  std::vector<double> y(static_cast<size_t>(n), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) y[static_cast<size_t>(i)] += av[i * c + j];
  return a.tape->emit(Tensor({n, 1}, std::move(y)), {a},
                      [a, n, c](const Tensor& g, GradBuf& gb) {
                        auto& ga = gb.at(a.id, n * c);
                        for (int64_t i = 0; i < n; ++i)
                          for (int64_t j = 0; j < c; ++j) ga[static_cast<size_t>(i * c + j)] += g[i];
                      });
}

inline Var row_max(Var a) {
  const Tensor& av = a.val();
  detail::require_2d(av, "row_max");
  int64_t n = av.rows(), c = av.cols();
  if (c == 0) fail_shape("row_max: zero columns");
  std::vector<double> y(static_cast<size_t>(n));
  std::vector<int64_t> arg(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    int64_t best = 0;
    for (int64_t j = 1; j < c; ++j)
      if (av[i * c + j] > av[i * c + best]) best = j;
    y[static_cast<size_t>(i)] = av[i * c + best];
    arg[static_cast<size_t>(i)] = best;
  }
  return a.tape->emit(Tensor({n, 1}, std::move(y)), {a},
                      [a, arg = std::move(arg), n, c](const Tensor& g, GradBuf& gb) {
                        auto& ga = gb.at(a.id, n * c);
                        for (int64_t i = 0; i < n; ++i)
                          ga[static_cast<size_t>(i * c + arg[static_cast<size_t>(i)])] += g[i];
                      });
}

inline Var row_min(Var a) {
  const Tensor& av = a.val();
  detail::require_2d(av, "row_min");
  int64_t n = av.rows(), c = av.cols();
  if (c == 0) fail_shape("row_min: zero columns");
  std::vector<double> y(static_cast<size_t>(n));
  std::vector<int64_t> arg(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    int64_t best = 0;
    for (int64_t j = 1; j < c; ++j)
      if (av[i * c + j] < av[i * c + best]) best = j;
    y[static_cast<size_t>(i)] = av[i * c + best];
    arg[static_cast<size_t>(i)] = best;
  }
  return a.tape->emit(Tensor({n, 1}, std::move(y)), {a},
                      [a, arg = std::move(arg), n, c](const Tensor& g, GradBuf& gb) {
                        auto& ga = gb.at(a.id, n * c);
                        for (int64_t i = 0; i < n; ++i)
                          ga[static_cast<size_t>(i * c + arg[static_cast<size_t>(i)])] += g[i];
                      });
}

// ---------------------------------------------------------------------------
// elementwise nonlinearities

inline Var relu(Var a) {
  return detail::elementwise_unary(
      a, [](double x) { return std::pair{x > 0.0 ? x : 0.0, x > 0.0 ? 1.0 : 0.0}; }, "relu");
}

inline Var gelu(Var a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return detail::elementwise_unary(
      a,
      [=](double x) {
        double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
        return std::pair{x * cdf, cdf + x * pdf};
      },
      "gelu");
}

inline Var exp(Var a) {
  return detail::elementwise_unary(
      a,
      [](double x) {
        double e = std::exp(x);
        if (!std::isfinite(e)) fail_numeric("exp: overflow for input " + std::to_string(x));
        return std::pair{e, e};
      },
      "exp");
}

inline Var log(Var a) {
  return detail::elementwise_unary(
      a,
      [](double x) {
        if (x <= 0.0) fail_numeric("log: non-positive input " + std::to_string(x));
        return std::pair{std::log(x), 1.0 / x};
      },
      "log");
}

inline Var sqrt(Var a) {
  return detail::elementwise_unary(
      a,
      [](double x) {
        if (x < 0.0) fail_numeric("sqrt: negative input " + std::to_string(x));
        double r = std::sqrt(x);
        return std::pair{r, x > 0.0 ? 0.5 / r : 0.0};  // subgradient 0 at x=0
      },
      "sqrt");
}

inline Var square(Var a) {
  return detail::elementwise_unary(a, [](double x) { return std::pair{x * x, 2.0 * x}; }, "square");
}

inline Var abs(Var a) {
  return detail::elementwise_unary(
      a,
      [](double x) { return std::pair{std::abs(x), x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0)}; },
      "abs");
}

inline Var tanh(Var a) {
  return detail::elementwise_unary(
      a,
      [](double x) {
        double t = std::tanh(x);
        return std::pair{t, 1.0 - t * t};
      },
      "tanh");
}

inline Var max_scalar(Var a, double c) {
  return detail::elementwise_unary(
      a, [c](double x) { return std::pair{x > c ? x : c, x > c ? 1.0 : 0.0}; }, "max_scalar");
}

inline Var min_scalar(Var a, double c) {
  return detail::elementwise_unary(
      a, [c](double x) { return std::pair{x < c ? x : c, x < c ? 1.0 : 0.0}; }, "min_scalar");
}

inline Var maximum(Var a, Var b) {
  detail::require_same_tape(a, b, "maximum");
  detail::require_same_shape(a.val(), b.val(), "maximum");
  const Tensor &av = a.val(), &bv = b.val();
  std::vector<double> y(static_cast<size_t>(av.numel()));
  for (int64_t i = 0; i < av.numel(); ++i)
    y[static_cast<size_t>(i)] = av[i] >= bv[i] ? av[i] : bv[i];
  return a.tape->emit(Tensor(av.shape(), std::move(y)), {a, b},
                      [a, b, av, bv](const Tensor& g, GradBuf& gb) {
                        auto& ga = gb.at(a.id, g.numel());
                        auto& gbv = gb.at(b.id, g.numel());
                        for (int64_t i = 0; i < g.numel(); ++i) {
                          if (av[i] >= bv[i])
                            ga[static_cast<size_t>(i)] += g[i];
                          else
                            gbv[static_cast<size_t>(i)] += g[i];
                        }
                      });
}

inline Var minimum(Var a, Var b) {
  detail::require_same_tape(a, b, "minimum");
  detail::require_same_shape(a.val(), b.val(), "minimum");
  const Tensor &av = a.val(), &bv = b.val();
  std::vector<double> y(static_cast<size_t>(av.numel()));
  for (int64_t i = 0; i < av.numel(); ++i)
    y[static_cast<size_t>(i)] = av[i] <= bv[i] ? av[i] : bv[i];
  return a.tape->emit(Tensor(av.shape(), std::move(y)), {a, b},
                      [a, b, av, bv](const Tensor& g, GradBuf& gb) {
                        auto& ga = gb.at(a.id, g.numel());
                        auto& gbv = gb.at(b.id, g.numel());
                        for (int64_t i = 0; i < g.numel(); ++i) {
                          if (av[i] <= bv[i])
                            ga[static_cast<size_t>(i)] += g[i];
                          else
                            gbv[static_cast<size_t>(i)] += g[i];
                        }
                      });
}

// ---------------------------------------------------------------------------
// normalization / attention support

inline Var softmax_rows(Var a) {
  const Tensor& av = a.val();
  detail::require_2d(av, "softmax_rows");
  int64_t n = av.rows(), c = av.cols();
  std::vector<double> y(static_cast<size_t>(n * c));
  for (int64_t i = 0; i < n; ++i) {
    double mx = av[i * c];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, av[i * c + j]);
    double s = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      double e = std::exp(av[i * c + j] - mx);
      y[static_cast<size_t>(i * c + j)] = e;
      s += e;
    }
    for (int64_t j = 0; j < c; ++j) y[static_cast<size_t>(i * c + j)] /= s;
  }
  Tensor out({n, c}, std::move(y));
  return a.tape->emit(out, {a},
                      [a, out, n, c](const Tensor& g, GradBuf& gb) {
                        auto& ga = gb.at(a.id, n * c);
                        for (int64_t i = 0; i < n; ++i) {
                          double dot = 0.0;
                          for (int64_t j = 0; j < c; ++j) dot += g[i * c + j] * out[i * c + j];
                          for (int64_t j = 0; j < c; ++j)
                            ga[static_cast<size_t>(i * c + j)] +=
                                out[i * c + j] * (g[i * c + j] - dot);
                        }
                      });
}

inline Var layer_norm_rows(Var a, double eps = 1e-5) {
  const Tensor& av = a.val();
  detail::require_2d(av, "layer_norm_rows");
  int64_t n = av.rows(), c = av.cols();
  std::vector<double> y(static_cast<size_t>(n * c));
  std::vector<double> inv_sigma(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double m = 0.0;
    for (int64_t j = 0; j < c; ++j) m += av[i * c + j];
    m /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      double d = av[i * c + j] - m;
      var += d * d;
    }
    var /= static_cast<double>(c);
    double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[static_cast<size_t>(i)] = is;
    for (int64_t j = 0; j < c; ++j) y[static_cast<size_t>(i * c + j)] = (av[i * c + j] - m) * is;
  }
  Tensor out({n, c}, std::move(y));
  return a.tape->emit(out, {a},
                      [a, out, inv_sigma = std::move(inv_sigma), n, c](const Tensor& g, GradBuf& gb) {
                        auto& ga = gb.at(a.id, n * c);
                        double invc = 1.0 / static_cast<double>(c);
                        for (int64_t i = 0; i < n; ++i) {
                          double gm = 0.0, gym = 0.0;
                          for (int64_t j = 0; j < c; ++j) {
                            gm += g[i * c + j];
                            gym += g[i * c + j] * out[i * c + j];
                          }
                          gm *= invc;
                          gym *= invc;
                          double is = inv_sigma[static_cast<size_t>(i)];
                          for (int64_t j = 0; j < c; ++j)
                            ga[static_cast<size_t>(i * c + j)] +=
                                is * (g[i * c + j] - gm - out[i * c + j] * gym);
                        }
                      });
}

// ---------------------------------------------------------------------------
// structure: gather / slice / concat / reshape / cross product

inline Var gather_rows(Var a, std::vector<int64_t> idx) {
  const Tensor& av = a.val();
  detail::require_2d(av, "gather_rows");
  int64_t n = av.rows(), c = av.cols();
  for (int64_t i : idx)
    if (i < 0 || i >= n)
      fail_shape("gather_rows: index " + std::to_string(i) + " out of range for " +
                 shape_str(av.shape()));
  int64_t m = static_cast<int64_t>(idx.size());
  std::vector<double> y(static_cast<size_t>(m * c));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < c; ++j)
      y[static_cast<size_t>(i * c + j)] = av[idx[static_cast<size_t>(i)] * c + j];
  return a.tape->emit(Tensor({m, c}, std::move(y)), {a},
                      [a, idx = std::move(idx), n, c](const Tensor& g, GradBuf& gb) {
                        auto& ga = gb.at(a.id, n * c);
                        int64_t m2 = static_cast<int64_t>(idx.size());
                        for (int64_t i = 0; i < m2; ++i)
                          for (int64_t j = 0; j < c; ++j)
                            ga[static_cast<size_t>(idx[static_cast<size_t>(i)] * c + j)] +=
                                g[i * c + j];
                      });
}

/// Slice of a 1-D tensor: elements [offset, offset+len).
inline Var slice(Var a, int64_t offset, int64_t len) {
  const Tensor& av = a.val();
  if (av.ndim() != 1) fail_shape("slice: expected 1-D tensor, got " + shape_str(av.shape()));
  if (offset < 0 || len < 0 || offset + len > av.numel())
    fail_shape("slice: range [" + std::to_string(offset) + ", " + std::to_string(offset + len) +
               ") out of bounds for " + shape_str(av.shape()));
  std::vector<double> y(static_cast<size_t>(len));
  for (int64_t i = 0; i < len; ++i) y[static_cast<size_t>(i)] = av[offset + i];
  int64_t n = av.numel();
  return a.tape->emit(Tensor({len}, std::move(y)), {a},
                      [a, offset, len, n](const Tensor& g, GradBuf& gb) {
                        auto& ga = gb.at(a.id, n);
                        for (int64_t i = 0; i < len; ++i) ga[static_cast<size_t>(offset + i)] += g[i];
                      });
}

inline Var slice_rows(Var a, int64_t r0, int64_t r1) {
  const Tensor& av = a.val();
  detail::require_2d(av, "slice_rows");
  int64_t n = av.rows(), c = av.cols();
  if (r0 < 0 || r1 < r0 || r1 > n)
    fail_shape("slice_rows: range [" + std::to_string(r0) + ", " + std::to_string(r1) +
               ") out of bounds for " + shape_str(av.shape()));
  int64_t m = r1 - r0;
  std::vector<double> y(static_cast<size_t>(m * c));
  std::memcpy(y.data(), av.data() + r0 * c, sizeof(double) * static_cast<size_t>(m * c));
  return a.tape->emit(Tensor({m, c}, std::move(y)), {a},
                      [a, r0, m, n, c](const Tensor& g, GradBuf& gb) {
                        auto& ga = gb.at(a.id, n * c);
                        for (int64_t i = 0; i < m * c; ++i)
                          ga[static_cast<size_t>(r0 * c + i)] += g[i];
                      });
}

inline Var slice_cols(Var a, int64_t c0, int64_t c1) {
  const Tensor& av = a.val();
  detail::require_2d(av, "slice_cols");
  int64_t n = av.rows(), c = av.cols();
  if (c0 < 0 || c1 < c0 || c1 > c)
    fail_shape("slice_cols: range [" + std::to_string(c0) + ", " + std::to_string(c1) +
               ") out of bounds for " + shape_str(av.shape()));
  int64_t m = c1 - c0;
  std::vector<double> y(static_cast<size_t>(n * m));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) y[static_cast<size_t>(i * m + j)] = av[i * c + c0 + j];
  return a.tape->emit(Tensor({n, m}, std::move(y)), {a},
                      [a, c0, m, n, c](const Tensor& g, GradBuf& gb) {
                        auto& ga = gb.at(a.id, n * c);
                        for (int64_t i = 0; i < n; ++i)
                          for (int64_t j = 0; j < m; ++j)
                            ga[static_cast<size_t>(i * c + c0 + j)] += g[i * m + j];
                      });
}

inline Var reshape(Var a, Shape s) {
  Tensor out = a.val().reshaped(std::move(s));
  Shape orig = a.val().shape();
  return a.tape->emit(std::move(out), {a},
                      [a, orig](const Tensor& g, GradBuf& gb) {
                        gb.accum(a.id, g.reshaped(orig));
                      });
}

namespace detail {
// shared concat machinery; `axis` is 0 (rows) or 1 (cols); 1-D tensors concat flat
inline Var concat_impl(const std::vector<Var>& parts, int axis, const char* op) {
  if (parts.empty()) fail_shape(std::string(op) + ": empty part list");
  Tape* tape = parts[0].tape;
  for (const Var& p : parts)
    if (p.tape != tape) fail_logic(std::string(op) + ": operands live on different tapes");

  if (parts[0].val().ndim() == 1) {
    int64_t total = 0;
    for (const Var& p : parts) {
      if (p.val().ndim() != 1)
        fail_shape(std::string(op) + ": mixed ranks " + shape_str(p.val().shape()));
      total += p.val().numel();
    }
    std::vector<double> y;
    y.reserve(static_cast<size_t>(total));
    for (const Var& p : parts)
      for (int64_t i = 0; i < p.val().numel(); ++i) y.push_back(p.val()[i]);
    auto ps = parts;
    return tape->emit(Tensor({total}, std::move(y)), parts,
                      [ps](const Tensor& g, GradBuf& gb) {
                        int64_t off = 0;
                        for (const Var& p : ps) {
                          int64_t n = p.val().numel();
                          auto& gp = gb.at(p.id, n);
                          for (int64_t i = 0; i < n; ++i) gp[static_cast<size_t>(i)] += g[off + i];
                          off += n;
                        }
                      });
  }

  int64_t rows0 = parts[0].val().rows(), cols0 = parts[0].val().cols();
  int64_t rtot = 0, ctot = 0;
  for (const Var& p : parts) {
    require_2d(p.val(), op);
    if (axis == 0) {
      if (p.val().cols() != cols0)
        fail_shape(std::string(op) + ": column counts differ " + shape_str(p.val().shape()) +
                   " vs " + shape_str(parts[0].val().shape()));
      rtot += p.val().rows();
    } else {
      if (p.val().rows() != rows0)
        fail_shape(std::string(op) + ": row counts differ " + shape_str(p.val().shape()) + " vs " +
                   shape_str(parts[0].val().shape()));
      ctot += p.val().cols();
    }
  }
  Tensor out;
  if (axis == 0) {
    std::vector<double> y(static_cast<size_t>(rtot * cols0));
    int64_t r = 0;
    for (const Var& p : parts) {
      std::memcpy(y.data() + r * cols0, p.val().data(),
                  sizeof(double) * static_cast<size_t>(p.val().numel()));
      r += p.val().rows();
    }
    out = Tensor({rtot, cols0}, std::move(y));
  } else {
    std::vector<double> y(static_cast<size_t>(rows0 * ctot));
    int64_t coff = 0;
    for (const Var& p : parts) {
      int64_t pc = p.val().cols();
      for (int64_t i = 0; i < rows0; ++i)
        for (int64_t j = 0; j < pc; ++j)
          y[static_cast<size_t>(i * ctot + coff + j)] = p.val()[i * pc + j];
      coff += pc;
    }
    out = Tensor({rows0, ctot}, std::move(y));
  }
  auto ps = parts;
  return tape->emit(std::move(out), parts,
                    [ps, axis, rows0, ctot](const Tensor& g, GradBuf& gb) {
                      if (axis == 0) {
                        int64_t r = 0;
                        for (const Var& p : ps) {
                          int64_t pn = p.val().numel(), pc = p.val().cols();
                          auto& gp = gb.at(p.id, pn);
                          for (int64_t i = 0; i < pn; ++i)
                            gp[static_cast<size_t>(i)] += g[r * pc + i];
                          r += p.val().rows();
                        }
                      } else {
                        int64_t coff = 0;
                        for (const Var& p : ps) {
                          int64_t pc = p.val().cols();
                          auto& gp = gb.at(p.id, rows0 * pc);
                          for (int64_t i = 0; i < rows0; ++i)
                            for (int64_t j = 0; j < pc; ++j)
                              gp[static_cast<size_t>(i * pc + j)] += g[i * ctot + coff + j];
                          coff += pc;
                        }
                      }
                    });
}
}  // namespace detail

inline Var concat_rows(const std::vector<Var>& parts) { return detail::concat_impl(parts, 0, "concat_rows"); }
inline Var concat_cols(const std::vector<Var>& parts) { return detail::concat_impl(parts, 1, "concat_cols"); }

/// Row-wise cross product of two n x 3 matrices.
inline Var cross_rows(Var a, Var b) {
  detail::require_same_tape(a, b, "cross_rows");
  const Tensor &av = a.val(), &bv = b.val();
  detail::require_same_shape(av, bv, "cross_rows");
  detail::require_2d(av, "cross_rows");
  if (av.cols() != 3) fail_shape("cross_rows: expected n x 3, got " + shape_str(av.shape()));
  int64_t n = av.rows();
  std::vector<double> y(static_cast<size_t>(n * 3));
  for (int64_t i = 0; i < n; ++i) {
    const double* u = av.data() + i * 3;
    const double* v = bv.data() + i * 3;
    y[static_cast<size_t>(i * 3 + 0)] = u[1] * v[2] - u[2] * v[1];
    y[static_cast<size_t>(i * 3 + 1)] = u[2] * v[0] - u[0] * v[2];
    y[static_cast<size_t>(i * 3 + 2)] = u[0] * v[1] - u[1] * v[0];
  }
  return a.tape->emit(Tensor({n, 3}, std::move(y)), {a, b},
                      [a, b, av, bv, n](const Tensor& g, GradBuf& gb) {
                        // d/da (a x b) applied to g is b x g; d/db is g x a
                        auto& ga = gb.at(a.id, n * 3);
                        auto& gbv = gb.at(b.id, n * 3);
                        for (int64_t i = 0; i < n; ++i) {
                          const double* u = av.data() + i * 3;
                          const double* v = bv.data() + i * 3;
                          const double* gr = g.data() + i * 3;
                          ga[static_cast<size_t>(i * 3 + 0)] += v[1] * gr[2] - v[2] * gr[1];
                          ga[static_cast<size_t>(i * 3 + 1)] += v[2] * gr[0] - v[0] * gr[2];
                          ga[static_cast<size_t>(i * 3 + 2)] += v[0] * gr[1] - v[1] * gr[0];
                          gbv[static_cast<size_t>(i * 3 + 0)] += gr[1] * u[2] - gr[2] * u[1];
                          gbv[static_cast<size_t>(i * 3 + 1)] += gr[2] * u[0] - gr[0] * u[2];
                          gbv[static_cast<size_t>(i * 3 + 2)] += gr[0] * u[1] - gr[1] * u[0];
                        }
                      });
}

inline Var dot(Var a, Var b) { return sum(mul(a, b)); }

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator-(Var a) { return neg(a); }

}  // namespace hoiopt
