// Test-only reference implementations: deliberately slow, direct routes used
// to cross-check the library. Nothing here may call into qmc solver code.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "qmc/likelihood.hpp"

namespace oracle {

// Central finite difference.
inline double fd_derivative(const std::function<double(double)>& f, double x,
                            double h = 1e-6) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Golden-section search on [a, b] for a unimodal scalar function.
inline double golden_min(const std::function<double(double)>& f, double a, double b,
                         double tol = 1e-10) {
  const double gr = 0.6180339887498949;
  double c = b - gr * (b - a);
  double d = a + gr * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

// Projection of v (entrywise >= 0 not required) onto the l1 ball of radius k,
// found by bisection on the soft-threshold level.
inline Eigen::VectorXd l1_ball_project_bisect(const Eigen::VectorXd& v, double k) {
  const Eigen::VectorXd a = v.cwiseAbs();
  if (a.sum() <= k) return v;
  double lo = 0.0, hi = a.maxCoeff();
  for (int it = 0; it < 200; ++it) {
    const double theta = 0.5 * (lo + hi);
    const double s = (a.array() - theta).max(0.0).sum();
    if (s > k)
      lo = theta;
    else
      hi = theta;
  }
  const double theta = 0.5 * (lo + hi);
  return v.array().sign() * (a.array() - theta).max(0.0);
}

// Minimizer of the ridge system  min_U lambda/2 ||U||_F^2 + rho/2 ||M - U V^T||_F^2
// via a stacked least-squares solve, one row of U at a time:
//   min_u || [sqrt(rho) V; sqrt(lambda) I] u - [sqrt(rho) m; 0] ||^2
// solved with column-pivoted QR. Independent of the normal-equations path.
inline Eigen::MatrixXd ridge_factor_qr(const Eigen::MatrixXd& m_target,
                                       const Eigen::MatrixXd& v, double rho, double lambda) {
  const Eigen::Index rows = m_target.rows();
  const Eigen::Index r = v.cols();
  Eigen::MatrixXd design(v.rows() + r, r);
  design.topRows(v.rows()) = std::sqrt(rho) * v;
  design.bottomRows(r) = std::sqrt(lambda) * Eigen::MatrixXd::Identity(r, r);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  Eigen::MatrixXd u(rows, r);
  Eigen::VectorXd rhs(v.rows() + r);
  rhs.setZero();
  for (Eigen::Index i = 0; i < rows; ++i) {
    rhs.head(v.rows()) = std::sqrt(rho) * m_target.row(i).transpose();
    u.row(i) = qr.solve(rhs).transpose();
  }
  return u;
}

// Scalar maximum-likelihood point of one quantization bin: argmin -log f.
inline double per_entry_ml(double lower, double upper) {
  const double lo = std::isinf(lower) ? upper - 60.0 : lower - 60.0;
  const double hi = std::isinf(upper) ? lower + 60.0 : upper + 60.0;
  return golden_min([&](double z) { return -qmc::log_bin_prob(z, lower, upper); }, lo, hi, 1e-12);
}

// Accelerated proximal gradient (FISTA) on G(X, lambda) = -F_Y(X) +
// lambda ||X||_*: gradient step on the smooth part (curvature <= 1/4, so the
// 4.0 step is 1/L), then singular-value soft-thresholding. Momentum is reset
// whenever the objective rises (function-value restart), which keeps the
// accepted iterates monotone: the step after a restart is a plain proximal
// step and cannot increase G at this step size. Converges to the global
// optimum of the convex G. Factorization- and ALM-free.
inline Eigen::MatrixXd prox_gradient_penalized(const qmc::ObservedMatrix& obs, double lambda,
                                               Eigen::MatrixXd x, int max_iters = 300000,
                                               double stall_tol = 1e-13) {
  const double step = 4.0;
  const auto g_of = [&](const Eigen::MatrixXd& m) {
    return qmc::neg_log_likelihood(m, obs) + lambda * qmc::trace_norm(m);
  };
  const auto svt = [](const Eigen::MatrixXd& m, double thr) -> Eigen::MatrixXd {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd sv = (svd.singularValues().array() - thr).max(0.0);
    return svd.matrixU() * sv.asDiagonal() * svd.matrixV().transpose();
  };

  Eigen::MatrixXd y = x;
  Eigen::MatrixXd x_prev = x;
  double momentum = 1.0;
  double best = g_of(x);
  int stall = 0;
  for (int k = 0; k < max_iters && stall < 3000; ++k) {
    const Eigen::MatrixXd x_next =
        svt(y - step * qmc::grad_neg_log_likelihood(y, obs), step * lambda);
    const double g = g_of(x_next);
    if (g > best) {
      y = x;
      momentum = 1.0;
      ++stall;
      continue;
    }
    const double next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
    y = x_next + ((momentum - 1.0) / next) * (x_next - x_prev);
    momentum = next;
    x_prev = x;
    x = x_next;
    if (g < best - stall_tol * (1.0 + std::abs(best))) {
      stall = 0;
    } else {
      ++stall;
    }
    best = g;
  }
  return x;
}

// Direct minimization of G(X, lambda) = -F_Y(X) + lambda ||X||_* by cyclic
// per-entry golden-section line search with shrinking brackets. Slow and
// factorization-free. The axis-aligned moves can jam above the optimum on the
// coupled trace-norm term, so treat the result as an upper bound on G*, not
// as G* itself; prox_gradient_penalized is the equality-grade reference.
inline Eigen::MatrixXd coordinate_descent_penalized(const qmc::ObservedMatrix& obs, double lambda,
                                                    Eigen::MatrixXd x, int max_sweeps = 400,
                                                    double sweep_tol = 1e-9) {
  auto g_of = [&](const Eigen::MatrixXd& m) {
    return qmc::neg_log_likelihood(m, obs) + lambda * qmc::trace_norm(m);
  };
  double radius = 4.0;
  double prev = g_of(x);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double center = x(i, j);
        const double best = golden_min(
            [&](double z) {
              Eigen::MatrixXd trial = x;
              trial(i, j) = z;
              return g_of(trial);
            },
            center - radius, center + radius, 1e-9);
        x(i, j) = best;
      }
    }
    const double cur = g_of(x);
    if (prev - cur < sweep_tol * (1.0 + std::abs(prev)) && radius < 0.51) break;
    if (prev - cur < 1e-6 * (1.0 + std::abs(prev))) radius = std::max(0.5, radius * 0.5);
    prev = cur;
  }
  return x;
}

}  // namespace oracle
