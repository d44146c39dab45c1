#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qmc/likelihood.hpp"
#include "qmc/rng.hpp"

namespace qmc {

// Thin factors of X = U V^T; U is m x r, V is n x r.
struct FactorPair {
  Eigen::MatrixXd u;
  Eigen::MatrixXd v;
};

struct SolverConfig {
  double lambda = 1.0;       // trace-norm penalty weight
  double rho = 1.0;          // ALM penalty (fixed; no schedule)
  int rank = 10;             // factor width r; over-estimates are fine
  double inner_tol = 1e-6;   // relative factor change per sweep
  double outer_tol = 1e-5;   // relative feasibility gap ||Z - UV^T||
  double z_tol = 1e-8;       // per-entry first-order residual
  int max_inner = 100;
  int max_outer = 300;
  int max_z_iters = 200;
  std::uint64_t seed = 0;
  // true: step the multiplier from the stale Z, then re-solve the Z
  // subproblem; false: conventional ALM order (Z first, then multiplier).
  bool multiplier_before_z = true;
  // Per-outer-iteration G(Z, lambda) tracking costs one SVD per iteration.
  bool track_objective = true;

  void validate(Eigen::Index m, Eigen::Index n) const {
    if (!(lambda >= 0.0)) throw std::invalid_argument("SolverConfig: lambda must be >= 0");
    if (!(rho > 0.0)) throw std::invalid_argument("SolverConfig: rho must be > 0");
    if (rank < 1 || rank > std::min(m, n))
      throw std::invalid_argument("SolverConfig: rank must lie in 1..min(m,n)");
    if (!(inner_tol > 0.0) || !(outer_tol > 0.0) || !(z_tol > 0.0))
      throw std::invalid_argument("SolverConfig: tolerances must be positive");
    if (max_inner < 1 || max_outer < 1 || max_z_iters < 1)
      throw std::invalid_argument("SolverConfig: iteration caps must be positive");
  }
};

struct SolveResult {
  Eigen::MatrixXd x_star;
  FactorPair factors;
  Eigen::MatrixXd multiplier;
  std::vector<ObjectiveBreakdown> objective_trace;
  std::vector<double> lagrangian_trace;
  std::vector<double> feasibility_trace;
  long outer_iters = 0;
  long total_inner_iters = 0;
  long total_z_iters = 0;
  double wall_time_seconds = 0.0;
  bool converged = false;
};

// U, V entrywise uniform on [0,1], reproducible per seed.
inline FactorPair init_factors(Eigen::Index m, Eigen::Index n, int r, std::uint64_t seed) {
  if (m < 1 || n < 1 || r < 1 || r > std::min(m, n))
    throw std::invalid_argument("init_factors: need 1 <= r <= min(m,n)");
  Rng rng(seed);
  FactorPair f{Eigen::MatrixXd(m, r), Eigen::MatrixXd(n, r)};
  for (Eigen::Index i = 0; i < m; ++i)
    for (int j = 0; j < r; ++j) f.u(i, j) = rng.uniform01();
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < r; ++j) f.v(i, j) = rng.uniform01();
  return f;
}

namespace detail {

// Solve B = A * (rho G + lambda I)^-1 with G symmetric positive semidefinite,
// via Cholesky of the regularized Gram matrix.
inline Eigen::MatrixXd solve_regularized(const Eigen::MatrixXd& a, const Eigen::MatrixXd& gram,
                                         double rho, double lambda) {
  Eigen::MatrixXd sys = rho * gram;
  sys.diagonal().array() += lambda;
  Eigen::LLT<Eigen::MatrixXd> llt(sys);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error(
        "factor update: system rho*G + lambda*I is singular (lambda = 0 with rank-deficient "
        "factor)");
  return llt.solve(a.transpose()).transpose();
}

}  // namespace detail

// Closed-form U <- (rho Z + Lambda) V (rho V^T V + lambda I)^-1, the exact
// minimizer over U of lambda/2 ||U||_F^2 + rho/2 ||Z - U V^T + Lambda/rho||_F^2.
inline Eigen::MatrixXd update_factor_u(const Eigen::MatrixXd& z, const Eigen::MatrixXd& multiplier,
                                       const Eigen::MatrixXd& v, double rho, double lambda) {
  if (z.rows() != multiplier.rows() || z.cols() != multiplier.cols() || z.cols() != v.rows())
    throw std::invalid_argument("update_factor_u: inconsistent shapes");
  return detail::solve_regularized((rho * z + multiplier) * v, v.transpose() * v, rho, lambda);
}

// V <- (rho Z + Lambda)^T U (rho U^T U + lambda I)^-1.
inline Eigen::MatrixXd update_factor_v(const Eigen::MatrixXd& z, const Eigen::MatrixXd& multiplier,
                                       const Eigen::MatrixXd& u, double rho, double lambda) {
  if (z.rows() != multiplier.rows() || z.cols() != multiplier.cols() || z.rows() != u.rows())
    throw std::invalid_argument("update_factor_v: inconsistent shapes");
  return detail::solve_regularized((rho * z + multiplier).transpose() * u, u.transpose() * u, rho,
                                   lambda);
}

struct InnerResult {
  FactorPair factors;
  int sweeps = 0;
};

// Alternate the two closed-form updates until the relative change of both
// factors drops below inner_tol.
inline InnerResult inner_alternation(const Eigen::MatrixXd& z, const Eigen::MatrixXd& multiplier,
                                     FactorPair factors, const SolverConfig& config) {
#ifdef QMC_INNER_MONOTONIC_CHECKS
  const auto inner_objective = [&](const Eigen::MatrixXd& u, const Eigen::MatrixXd& v) {
    return 0.5 * config.lambda * (u.squaredNorm() + v.squaredNorm()) +
           0.5 * config.rho * (z - u * v.transpose() + multiplier / config.rho).squaredNorm();
  };
  double last_obj = inner_objective(factors.u, factors.v);
  const auto check_descent = [&last_obj](double obj) {
    if (obj > last_obj + 1e-9 * (1.0 + std::abs(last_obj)))
      throw std::logic_error("inner_alternation: half-step increased the inner objective");
    last_obj = obj;
  };
#endif
  for (int sweep = 1; sweep <= config.max_inner; ++sweep) {
    Eigen::MatrixXd u_next = update_factor_u(z, multiplier, factors.v, config.rho, config.lambda);
#ifdef QMC_INNER_MONOTONIC_CHECKS
    check_descent(inner_objective(u_next, factors.v));
#endif
    Eigen::MatrixXd v_next = update_factor_v(z, multiplier, u_next, config.rho, config.lambda);
#ifdef QMC_INNER_MONOTONIC_CHECKS
    check_descent(inner_objective(u_next, v_next));
#endif
    const double du = (u_next - factors.u).norm() / (1.0 + factors.u.norm());
    const double dv = (v_next - factors.v).norm() / (1.0 + factors.v.norm());
    factors.u = std::move(u_next);
    factors.v = std::move(v_next);
    if (std::max(du, dv) < config.inner_tol) return {std::move(factors), sweep};
  }
  return {std::move(factors), config.max_inner};
}

struct ZResult {
  Eigen::MatrixXd z;
  long iters = 0;
  bool converged = true;
  double worst_residual = 0.0;
};

// argmin_X -F_Y(X) + rho/2 ||X - target||_F^2, separable per entry.
// Unobserved entries equal the target exactly (the data term never touches
// them); each observed entry is a 1-D rho-strongly-convex problem solved by
// gradient descent with Armijo backtracking, warm-started.
inline ZResult solve_z_subproblem(const ObservedMatrix& obs, const Eigen::MatrixXd& target,
                                  double rho, double z_tol, int max_z_iters,
                                  const Eigen::MatrixXd& warm_start) {
  if (!(rho > 0.0)) throw std::invalid_argument("solve_z_subproblem: rho must be > 0");
  check_dims(target, obs, "solve_z_subproblem");
  check_dims(warm_start, obs, "solve_z_subproblem");

  ZResult result;
  result.z = target;
  const double step0 = 1.0 / (rho + 0.25);  // curvature: <= 1/4 from -log f, rho from the prox
  for (const Observation& e : obs.entries()) {
    const auto [lo, up] = obs.scheme().bounds(e.level);
    const double t = target(e.row, e.col);
    const auto value = [&](double x) {
      return -log_bin_prob(x, lo, up) + 0.5 * rho * (x - t) * (x - t);
    };
    double x = warm_start(e.row, e.col);
    double grad = -grad_log_bin_prob(x, lo, up) + rho * (x - t);
    int it = 0;
    while (std::abs(grad) > z_tol && it < max_z_iters) {
      const double h0 = value(x);
      double step = step0;
      double cand = x - step * grad;
      while (value(cand) > h0 - 1e-4 * step * grad * grad && step > 1e-18) {
        step *= 0.5;
        cand = x - step * grad;
      }
      x = cand;
      grad = -grad_log_bin_prob(x, lo, up) + rho * (x - t);
      ++it;
    }
    result.iters += it;
    if (std::abs(grad) > z_tol) {
      result.converged = false;
      result.worst_residual = std::max(result.worst_residual, std::abs(grad));
    }
    result.z(e.row, e.col) = x;
  }
  return result;
}

// QMC-BIF: outer ALM loop around the bilinear splitting
//   min -F_Y(Z) + lambda/2 (||U||^2 + ||V||^2)  s.t.  Z = U V^T.
// Each outer iteration runs the inner U/V alternation, steps the multiplier,
// and re-solves the separable Z subproblem; Z is returned as X*.
inline SolveResult qmc_bif(const ObservedMatrix& obs, const SolverConfig& config) {
  config.validate(obs.rows(), obs.cols());
  const auto t_start = std::chrono::steady_clock::now();

  SolverConfig cfg = config;
  if (cfg.lambda == 0.0) {
    cfg.lambda = 1e-10;
    std::cerr << "qmc_bif: lambda = 0 regularized to 1e-10 to keep factor updates nonsingular\n";
  }
  const double rho = cfg.rho;

  SolveResult result;
  FactorPair factors = init_factors(obs.rows(), obs.cols(), cfg.rank, cfg.seed);
  Eigen::MatrixXd z = obs.level_matrix();
  Eigen::MatrixXd multiplier = Eigen::MatrixXd::Zero(obs.rows(), obs.cols());

  for (int outer = 1; outer <= cfg.max_outer; ++outer) {
    InnerResult inner = inner_alternation(z, multiplier, std::move(factors), cfg);
    factors = std::move(inner.factors);
    result.total_inner_iters += inner.sweeps;

    const Eigen::MatrixXd product = factors.u * factors.v.transpose();
    if (cfg.multiplier_before_z) {
      multiplier += rho * (z - product);
      ZResult zr = solve_z_subproblem(obs, product - multiplier / rho, rho, cfg.z_tol,
                                      cfg.max_z_iters, z);
      z = std::move(zr.z);
      result.total_z_iters += zr.iters;
    } else {
      ZResult zr = solve_z_subproblem(obs, product - multiplier / rho, rho, cfg.z_tol,
                                      cfg.max_z_iters, z);
      z = std::move(zr.z);
      result.total_z_iters += zr.iters;
      multiplier += rho * (z - product);
    }
    result.outer_iters = outer;

    const double gap = (z - product).norm() / (1.0 + z.norm());
    result.feasibility_trace.push_back(gap);
    result.lagrangian_trace.push_back(
        neg_log_likelihood(z, obs) +
        0.5 * cfg.lambda * (factors.u.squaredNorm() + factors.v.squaredNorm()) +
        (multiplier.array() * (z - product).array()).sum() +
        0.5 * rho * (z - product).squaredNorm());
    if (cfg.track_objective)
      result.objective_trace.push_back(penalized_objective(z, obs, config.lambda));

    if (gap < cfg.outer_tol) {
      result.converged = true;
      break;
    }
  }

  result.x_star = std::move(z);
  result.factors = std::move(factors);
  result.multiplier = std::move(multiplier);
  result.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

}  // namespace qmc
