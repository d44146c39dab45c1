#pragma once

#include <Eigen/Dense>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>

#include "qmc/likelihood.hpp"
#include "qmc/solver.hpp"

// Textbook reconstructions of the two comparison methods: projected gradient
// over a trace-norm ball, and alternating gradient descent on a fixed-rank
// factorization. Both minimize the plain negative log-likelihood.
namespace qmc {

enum class BaselineVariant { trace_ball, fixed_rank };

struct BaselineConfig {
  BaselineVariant variant = BaselineVariant::trace_ball;
  double trace_radius = 1.0;  // trace_ball: radius k of the feasible ball
  int rank = 1;               // fixed_rank: exact factor width r*
  double initial_step = 4.0;  // matches the 1/4 curvature bound of the data term
  double tol = 1e-6;          // relative objective change between accepted rounds
  int max_iters = 500;
  std::uint64_t seed = 0;

  void validate(Eigen::Index m, Eigen::Index n) const {
    if (variant == BaselineVariant::trace_ball) {
      if (!(trace_radius > 0.0))
        throw std::invalid_argument("BaselineConfig: trace_radius must be > 0");
    } else {
      if (rank < 1 || rank > std::min(m, n))
        throw std::invalid_argument("BaselineConfig: rank must lie in 1..min(m,n)");
    }
    if (!(initial_step > 0.0)) throw std::invalid_argument("BaselineConfig: initial_step must be > 0");
    if (!(tol > 0.0)) throw std::invalid_argument("BaselineConfig: tol must be > 0");
    if (max_iters < 1) throw std::invalid_argument("BaselineConfig: max_iters must be positive");
  }
};

// Euclidean projection onto {X : ||X||_* <= k}: project the singular values
// onto the l1 ball of radius k, keeping the singular vectors. Interior points
// are returned unchanged, bit for bit. If sum_out is given it receives the
// trace norm of the returned matrix.
inline Eigen::MatrixXd project_trace_ball(const Eigen::MatrixXd& x, double k,
                                          double* sum_out = nullptr) {
  if (!(k > 0.0)) throw std::invalid_argument("project_trace_ball: k must be > 0");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double total = sv.sum();
  if (total <= k) {
    if (sum_out) *sum_out = total;
    return x;
  }
  // Singular values arrive sorted descending; find the soft-threshold level
  // theta with sum(max(sv - theta, 0)) = k.
  double cumulative = 0.0;
  double theta = 0.0;
  for (Eigen::Index j = 0; j < sv.size(); ++j) {
    cumulative += sv(j);
    const double candidate = (cumulative - k) / static_cast<double>(j + 1);
    if (j + 1 == sv.size() || sv(j + 1) <= candidate) {
      theta = candidate;
      break;
    }
  }
  const Eigen::VectorXd projected = (sv.array() - theta).max(0.0);
  if (sum_out) *sum_out = projected.sum();
  return svd.matrixU() * projected.asDiagonal() * svd.matrixV().transpose();
}

// Trace norm of U V^T without forming the product: QR both factors, then the
// singular values of the small R_u R_v^T.
inline double trace_norm_factored(const Eigen::MatrixXd& u, const Eigen::MatrixXd& v) {
  if (u.cols() != v.cols()) throw std::invalid_argument("trace_norm_factored: width mismatch");
  const Eigen::Index r = u.cols();
  if (u.rows() < r || v.rows() < r)
    return trace_norm(u * v.transpose());
  Eigen::HouseholderQR<Eigen::MatrixXd> qu(u);
  Eigen::HouseholderQR<Eigen::MatrixXd> qv(v);
  const Eigen::MatrixXd ru =
      qu.matrixQR().topRows(r).template triangularView<Eigen::Upper>();
  const Eigen::MatrixXd rv =
      qv.matrixQR().topRows(r).template triangularView<Eigen::Upper>();
  return Eigen::BDCSVD<Eigen::MatrixXd>(ru * rv.transpose()).singularValues().sum();
}

// Projected gradient on  min -F_Y(X)  s.t.  ||X||_* <= k,  with backtracking
// validated against the proximal quadratic model. Accepted iterates are
// recorded in objective_trace (lambda fixed at 0, so total == data term);
// feasibility_trace records max(0, ||X||_* - k) per accepted step.
inline SolveResult qmc_trace_ball(const ObservedMatrix& obs, const BaselineConfig& config) {
  if (config.variant != BaselineVariant::trace_ball)
    throw std::invalid_argument("qmc_trace_ball: config.variant must be trace_ball");
  config.validate(obs.rows(), obs.cols());
  const auto t_start = std::chrono::steady_clock::now();
  const double k = config.trace_radius;

  SolveResult result;
  double tn = 0.0;
  Eigen::MatrixXd x = project_trace_ball(obs.level_matrix(), k, &tn);
  double f = neg_log_likelihood(x, obs);
  {
    ObjectiveBreakdown b;
    b.data_term = f;
    b.trace_norm = tn;
    b.total = f;
    result.objective_trace.push_back(b);
    result.feasibility_trace.push_back(std::max(0.0, tn - k));
  }

  double step = config.initial_step;
  for (int iter = 1; iter <= config.max_iters; ++iter) {
    const Eigen::MatrixXd grad = grad_neg_log_likelihood(x, obs);
    Eigen::MatrixXd cand;
    double f_cand = f;
    bool moved = false;
    while (step > 1e-18) {
      double tn_cand = 0.0;
      cand = project_trace_ball(x - step * grad, k, &tn_cand);
      const Eigen::MatrixXd dx = cand - x;
      f_cand = neg_log_likelihood(cand, obs);
      const double model =
          f + (grad.array() * dx.array()).sum() + dx.squaredNorm() / (2.0 * step);
      if (f_cand <= model + 1e-12 * (1.0 + std::abs(f))) {
        tn = tn_cand;
        moved = dx.norm() > 0.0;
        break;
      }
      step *= 0.5;
    }
    if (!moved) {
      result.converged = true;  // projection fixed point: stationary for the convex problem
      result.outer_iters = iter;
      break;
    }
    if (f_cand > f + 1e-12 * (1.0 + std::abs(f))) {
      result.outer_iters = iter;
      break;  // model accepted but no descent: numerically stalled
    }
    const double f_prev = f;
    x = std::move(cand);
    f = f_cand;
    result.outer_iters = iter;
    ObjectiveBreakdown b;
    b.data_term = f;
    b.trace_norm = tn;
    b.total = f;
    result.objective_trace.push_back(b);
    result.feasibility_trace.push_back(std::max(0.0, tn - k));
    if (std::abs(f_prev - f) <= config.tol * (1.0 + std::abs(f_prev))) {
      result.converged = true;
      break;
    }
    step = std::min(step * 2.0, 1e6);
  }

  result.x_star = std::move(x);
  result.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

// Alternating backtracking gradient descent on -F_Y(U V^T) with U: m x r*,
// V: n x r*. Every iterate has rank <= r* by construction. Accepted rounds
// are recorded in objective_trace.
inline SolveResult qmc_fixed_rank(const ObservedMatrix& obs, const BaselineConfig& config) {
  if (config.variant != BaselineVariant::fixed_rank)
    throw std::invalid_argument("qmc_fixed_rank: config.variant must be fixed_rank");
  config.validate(obs.rows(), obs.cols());
  const auto t_start = std::chrono::steady_clock::now();

  SolveResult result;
  FactorPair factors = init_factors(obs.rows(), obs.cols(), config.rank, config.seed);
  double f = neg_log_likelihood(factors.u * factors.v.transpose(), obs);
  {
    ObjectiveBreakdown b;
    b.data_term = f;
    b.trace_norm = trace_norm_factored(factors.u, factors.v);
    b.total = f;
    result.objective_trace.push_back(b);
  }

  double step_u = config.initial_step;
  double step_v = config.initial_step;
  // One backtracking gradient step on a factor; returns false when no step
  // size down to 1e-18 yields an Armijo decrease.
  const auto descend = [&](Eigen::MatrixXd& factor, const auto& product_of,
                           const auto& grad_of, double& step) {
    const Eigen::MatrixXd grad = grad_of();
    const double g2 = grad.squaredNorm();
    if (g2 == 0.0) return false;
    while (step > 1e-18) {
      const Eigen::MatrixXd trial = factor - step * grad;
      const double f_trial = neg_log_likelihood(product_of(trial), obs);
      if (f_trial <= f - 1e-4 * step * g2) {
        factor = trial;
        f = f_trial;
        step = std::min(step * 2.0, 1e6);
        return true;
      }
      step *= 0.5;
    }
    return false;
  };

  for (int iter = 1; iter <= config.max_iters; ++iter) {
    const double f_prev = f;
    // The explicit return types matter: a deduced return type would hand back
    // an unevaluated expression referencing a dead temporary.
    const bool moved_u = descend(
        factors.u,
        [&](const Eigen::MatrixXd& u) -> Eigen::MatrixXd { return u * factors.v.transpose(); },
        [&]() -> Eigen::MatrixXd {
          return grad_neg_log_likelihood(factors.u * factors.v.transpose(), obs) * factors.v;
        },
        step_u);
    const bool moved_v = descend(
        factors.v,
        [&](const Eigen::MatrixXd& v) -> Eigen::MatrixXd { return factors.u * v.transpose(); },
        [&]() -> Eigen::MatrixXd {
          return grad_neg_log_likelihood(factors.u * factors.v.transpose(), obs).transpose() *
                 factors.u;
        },
        step_v);
    result.outer_iters = iter;
    ObjectiveBreakdown b;
    b.data_term = f;
    b.trace_norm = trace_norm_factored(factors.u, factors.v);
    b.total = f;
    result.objective_trace.push_back(b);
    if (!moved_u && !moved_v) {
      result.converged = true;
      break;
    }
    if (std::abs(f_prev - f) <= config.tol * (1.0 + std::abs(f_prev))) {
      result.converged = true;
      break;
    }
  }

  result.x_star = factors.u * factors.v.transpose();
  result.factors = std::move(factors);
  result.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

}  // namespace qmc
