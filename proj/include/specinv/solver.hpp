#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "specinv/common.hpp"
#include "specinv/phase_features.hpp"

namespace specinv {

/// Hermitian tridiagonal system A x = rhs. A[l+1][l] = lower[l] and
/// A[l][l+1] = upper[l] = conj(lower[l]); the main diagonal is real.
struct TridiagonalHermitianSystem {
  std::vector<double> diag;
  std::vector<cplx> lower;
  std::vector<cplx> upper;
  std::vector<cplx> rhs;

  std::size_t size() const noexcept { return diag.size(); }

  void check_shape() const {
    const std::size_t n = diag.size();
    if (n == 0 || rhs.size() != n || lower.size() + 1 != n || upper.size() + 1 != n)
      throw ConfigError("tridiagonal system: inconsistent diagonal lengths");
  }

  bool is_hermitian() const {
    for (std::size_t l = 0; l < lower.size(); ++l) {
      if (upper[l] != std::conj(lower[l])) return false;
    }
    return true;
  }

  double max_diag() const {
    double m = 0.0;
    for (double d : diag) m = std::max(m, d);
    return m;
  }
};

/// Diagonals of the weight matrices: lambda (length L+1) weights the
/// time-propagation residual and gamma (length L) the frequency residual.
struct WeightFrame {
  std::vector<double> lambda_w;
  std::vector<double> gamma_w;
};

enum class WeightScheme {
  /// lambda = |Y_prev| |Y_cur|, gamma_l = |Y_cur[l]| |Y_cur[l+1]|
  Geometric,
  /// lambda = |Y_cur|^2, gamma_l = |Y_cur[l+1]|^2
  SquaredCurrent,
  Uniform,
  /// Geometric lambda, gamma = 0: pure integration along time.
  TimeOnly,
};

inline const char* to_string(WeightScheme s) {
  switch (s) {
    case WeightScheme::Geometric: return "geometric";
    case WeightScheme::SquaredCurrent: return "squared";
    case WeightScheme::Uniform: return "uniform";
    case WeightScheme::TimeOnly: return "time-only";
  }
  return "?";
}

inline WeightFrame make_weights(WeightScheme scheme, std::span<const double> mag_prev,
                                std::span<const double> mag_cur) {
  const std::size_t n = mag_cur.size();
  if (n < 2 || mag_prev.size() != n) throw ConfigError("make_weights: length mismatch");
  WeightFrame w{std::vector<double>(n), std::vector<double>(n - 1)};
  for (std::size_t l = 0; l < n; ++l) {
    switch (scheme) {
      case WeightScheme::Geometric:
      case WeightScheme::TimeOnly: w.lambda_w[l] = mag_prev[l] * mag_cur[l]; break;
      case WeightScheme::SquaredCurrent: w.lambda_w[l] = mag_cur[l] * mag_cur[l]; break;
      case WeightScheme::Uniform: w.lambda_w[l] = 1.0; break;
    }
  }
  for (std::size_t l = 0; l + 1 < n; ++l) {
    switch (scheme) {
      case WeightScheme::Geometric: w.gamma_w[l] = mag_cur[l] * mag_cur[l + 1]; break;
      case WeightScheme::SquaredCurrent: w.gamma_w[l] = mag_cur[l + 1] * mag_cur[l + 1]; break;
      case WeightScheme::Uniform: w.gamma_w[l] = 1.0; break;
      case WeightScheme::TimeOnly: w.gamma_w[l] = 0.0; break;
    }
  }
  return w;
}

/// Normal equations (Lambda + D^H Gamma D) z = Lambda (prev .* v) of the
/// weighted two-term least squares problem, assembled directly from the
/// diagonals. D has -u on its main diagonal and ones above it, so with
/// d_l = -u_l:
///   diag[l]  = lambda_l + gamma_l |d_l|^2 + gamma_{l-1}
///   lower[l] = gamma_l d_l,  upper[l] = gamma_l conj(d_l)
inline TridiagonalHermitianSystem build_system(const ComplexRatios& ratios, std::span<const cplx> prev_frame,
                                               const WeightFrame& weights) {
  const std::size_t n = prev_frame.size();
  if (n == 0 || ratios.v.size() != n || ratios.u.size() + 1 != n || weights.lambda_w.size() != n ||
      weights.gamma_w.size() + 1 != n)
    throw ConfigError("build_system: length mismatch");

  TridiagonalHermitianSystem sys;
  sys.diag.resize(n);
  sys.lower.resize(n - 1);
  sys.upper.resize(n - 1);
  sys.rhs.resize(n);
  for (std::size_t l = 0; l < n; ++l) {
    const double lam = weights.lambda_w[l];
    double d = lam;
    if (l + 1 < n) d += weights.gamma_w[l] * std::norm(ratios.u[l]);
    if (l > 0) d += weights.gamma_w[l - 1];
    sys.diag[l] = d;
    sys.rhs[l] = lam * (prev_frame[l] * ratios.v[l]);
  }
  for (std::size_t l = 0; l + 1 < n; ++l) {
    const cplx dl = -ratios.u[l];
    sys.lower[l] = weights.gamma_w[l] * dl;
    sys.upper[l] = weights.gamma_w[l] * std::conj(dl);
  }
  return sys;
}

/// Relative diagonal shift delta * max(diag) added before every solve so the
/// pivots of the PSD matrix stay strictly positive.
inline constexpr double kDefaultRegularization = 1e-12;

/// Thomas' algorithm specialised to Hermitian tridiagonal matrices: pivots are
/// real, no pivoting, O(n) time and two length-n buffers.
inline std::vector<cplx> thomas_solve(const TridiagonalHermitianSystem& sys,
                                      double regularization = kDefaultRegularization) {
  sys.check_shape();
  const std::size_t n = sys.size();
  const double shift = regularization * sys.max_diag();

  std::vector<cplx> c(n);  // c[i] = upper[i] / pivot_i; reused for nothing else
  std::vector<cplx> x(n);  // holds d' during the forward sweep, then the solution

  double pivot = sys.diag[0] + shift;
  if (!(pivot > 0.0)) throw SolverError("thomas_solve: non-positive pivot at row 0");
  double inv = 1.0 / pivot;
  x[0] = sys.rhs[0] * inv;
  for (std::size_t i = 1; i < n; ++i) {
    const cplx up = sys.upper[i - 1];
    c[i - 1] = up * inv;
    const cplx lo = sys.lower[i - 1];
    // lo * c[i-1] = |lower|^2 / pivot, real for a Hermitian matrix.
    pivot = sys.diag[i] + shift - (lo.real() * c[i - 1].real() - lo.imag() * c[i - 1].imag());
    if (!(pivot > 0.0)) throw SolverError("thomas_solve: non-positive pivot at row " + std::to_string(i));
    inv = 1.0 / pivot;
    x[i] = (sys.rhs[i] - lo * x[i - 1]) * inv;
  }
  for (std::size_t i = n - 1; i-- > 0;) x[i] -= c[i] * x[i + 1];
  return x;
}

/// Materialises A as a dense n x n matrix (regularised the same way as
/// thomas_solve).
inline Eigen::MatrixXcd dense_matrix(const TridiagonalHermitianSystem& sys,
                                     double regularization = kDefaultRegularization) {
  sys.check_shape();
  const auto n = static_cast<Eigen::Index>(sys.size());
  const double shift = regularization * sys.max_diag();
  Eigen::MatrixXcd a = Eigen::MatrixXcd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) a(i, i) = sys.diag[static_cast<std::size_t>(i)] + shift;
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    a(i + 1, i) = sys.lower[static_cast<std::size_t>(i)];
    a(i, i + 1) = sys.upper[static_cast<std::size_t>(i)];
  }
  return a;
}

/// Direct baseline: dense LU with partial pivoting, O(n^2) memory, O(n^3) work.
inline std::vector<cplx> dense_solve_oracle(const TridiagonalHermitianSystem& sys,
                                            double regularization = kDefaultRegularization) {
  const Eigen::MatrixXcd a = dense_matrix(sys, regularization);
  const auto n = a.rows();
  Eigen::VectorXcd b(n);
  for (Eigen::Index i = 0; i < n; ++i) b(i) = sys.rhs[static_cast<std::size_t>(i)];
  const Eigen::PartialPivLU<Eigen::MatrixXcd> lu(a);
  if (lu.matrixLU().diagonal().cwiseAbs().minCoeff() == 0.0) throw SolverError("dense_solve_oracle: singular matrix");
  const Eigen::VectorXcd xe = lu.solve(b);
  std::vector<cplx> x(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    x[static_cast<std::size_t>(i)] = xe(i);
    if (!std::isfinite(xe(i).real()) || !std::isfinite(xe(i).imag()))
      throw SolverError("dense_solve_oracle: non-finite solution");
  }
  return x;
}

/// y = A x using the three diagonals only.
inline void tridiagonal_apply(const TridiagonalHermitianSystem& sys, double shift, std::span<const cplx> x,
                              std::span<cplx> y) {
  const std::size_t n = sys.size();
  for (std::size_t i = 0; i < n; ++i) {
    cplx acc = (sys.diag[i] + shift) * x[i];
    if (i > 0) acc += sys.lower[i - 1] * x[i - 1];
    if (i + 1 < n) acc += sys.upper[i] * x[i + 1];
    y[i] = acc;
  }
}

struct IterativeResult {
  std::vector<cplx> x;
  std::size_t iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
};

/// Matrix-free Jacobi-preconditioned conjugate gradients. Stops once
/// ||b - A x|| / ||b|| < tol or after max_iter iterations (0 means n).
inline IterativeResult iterative_solve(const TridiagonalHermitianSystem& sys, double tol = 1e-8,
                                       std::size_t max_iter = 0,
                                       double regularization = kDefaultRegularization) {
  sys.check_shape();
  require(tol > 0.0, "iterative_solve: tol must be positive");
  const std::size_t n = sys.size();
  if (max_iter == 0) max_iter = n;
  const double shift = regularization * sys.max_diag();

  IterativeResult res;
  res.x.assign(n, cplx{});
  double bnorm = 0.0;
  for (const auto& v : sys.rhs) bnorm += std::norm(v);
  bnorm = std::sqrt(bnorm);
  if (bnorm == 0.0) {
    res.converged = true;
    return res;
  }

  std::vector<double> inv_diag(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = sys.diag[i] + shift;
    if (!(d > 0.0)) throw SolverError("iterative_solve: non-positive diagonal at row " + std::to_string(i));
    inv_diag[i] = 1.0 / d;
  }
  std::vector<cplx> r(sys.rhs), z(n), p(n), ap(n);
  double rz = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = inv_diag[i] * r[i];
    p[i] = z[i];
    rz += (std::conj(r[i]) * z[i]).real();
  }
  for (std::size_t it = 1; it <= max_iter; ++it) {
    tridiagonal_apply(sys, shift, p, ap);
    double pap = 0.0;
    for (std::size_t i = 0; i < n; ++i) pap += (std::conj(p[i]) * ap[i]).real();
    if (!(pap > 0.0)) break;
    const double alpha = rz / pap;
    double rnorm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      res.x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
      rnorm += std::norm(r[i]);
    }
    res.iterations = it;
    res.relative_residual = std::sqrt(rnorm) / bnorm;
    if (res.relative_residual < tol) {
      res.converged = true;
      return res;
    }
    double rz_next = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      z[i] = inv_diag[i] * r[i];
      rz_next += (std::conj(r[i]) * z[i]).real();
    }
    const double beta = rz_next / rz;
    rz = rz_next;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  return res;
}

}  // namespace specinv
