#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qmc/quantization.hpp"

namespace qmc {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Per-entry cap on -log f; entries this far from their bin carry no usable
// curvature and would otherwise push the data term toward overflow.
inline constexpr double kNegLogClamp = 700.0;

// Logistic CDF 1/(1+e^-x); exact at +-inf.
inline double logistic_cdf(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1/(1+e^-x)) without underflow on either tail.
inline double log_sigmoid(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

// log(1 - e^a) for a <= 0, accurate near both ends.
inline double log1m_exp(double a) {
  if (a == -kInf) return 0.0;
  if (a > -0.6931471805599453) return std::log(-std::expm1(a));
  return std::log1p(-std::exp(a));
}

// log of the bin probability f(x) = cdf(U - x) - cdf(L - x).
//
// Evaluated through the factorization f = cdf(u) * cdf(-l) * (1 - e^{l-u})
// with u = U - x, l = L - x; direct subtraction of the two CDFs loses all
// precision once both arguments are far in the same tail (|x| beyond ~37).
inline double log_bin_prob(double x, double lower, double upper) {
  if (!(lower < upper))
    throw std::invalid_argument("log_bin_prob: requires lower < upper");
  const double u = upper - x;
  const double l = lower - x;
  const double a = (l == -kInf || u == kInf) ? -kInf : l - u;
  return log_sigmoid(u) + log_sigmoid(-l) + log1m_exp(a);
}

// d/dx log f(x). Bounded by 1 in magnitude (the per-bin log-likelihood is
// 1-Lipschitz). Split into two positive ratios evaluated in log space; each
// stays O(1/width) even when the naive numerator and denominator underflow.
inline double grad_log_bin_prob(double x, double lower, double upper) {
  if (!(lower < upper))
    throw std::invalid_argument("grad_log_bin_prob: requires lower < upper");
  const double u = upper - x;
  const double l = lower - x;
  const double a = (l == -kInf || u == kInf) ? -kInf : l - u;
  const double lm = log1m_exp(a);
  const double t1 = (l == -kInf) ? 0.0 : std::exp(log_sigmoid(l) - log_sigmoid(u) - lm);
  const double t2 = (u == kInf) ? 0.0 : std::exp(log_sigmoid(-u) - log_sigmoid(-l) - lm);
  return t1 - t2;
}

struct Observation {
  Eigen::Index row;
  Eigen::Index col;
  int level;
};

// Quantized partial observations of an m x n matrix: the index set Omega with
// one quantization level per observed entry, plus the scheme that maps levels
// to (L, U) bounds. Entries are kept sorted row-major so that every traversal
// (sums, gradients) has a fixed order. Immutable after construction.
class ObservedMatrix {
 public:
  ObservedMatrix(Eigen::Index rows, Eigen::Index cols, std::vector<Observation> entries,
                 QuantizationScheme scheme)
      : rows_(rows), cols_(cols), entries_(std::move(entries)), scheme_(std::move(scheme)) {
    if (rows_ < 1 || cols_ < 1)
      throw std::invalid_argument("ObservedMatrix: dimensions must be positive");
    if (entries_.empty())
      throw std::invalid_argument("ObservedMatrix: at least one observed entry required");
    std::sort(entries_.begin(), entries_.end(), [](const Observation& a, const Observation& b) {
      return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    for (std::size_t k = 0; k < entries_.size(); ++k) {
      const Observation& e = entries_[k];
      if (e.row < 0 || e.row >= rows_ || e.col < 0 || e.col >= cols_)
        throw std::invalid_argument("ObservedMatrix: index (" + std::to_string(e.row) + "," +
                                    std::to_string(e.col) + ") out of range");
      if (e.level < 1 || e.level > scheme_.num_levels())
        throw std::invalid_argument("ObservedMatrix: level " + std::to_string(e.level) +
                                    " invalid for scheme");
      if (k > 0 && entries_[k - 1].row == e.row && entries_[k - 1].col == e.col)
        throw std::invalid_argument("ObservedMatrix: duplicate index (" + std::to_string(e.row) +
                                    "," + std::to_string(e.col) + ")");
    }
  }

  Eigen::Index rows() const { return rows_; }
  Eigen::Index cols() const { return cols_; }
  std::int64_t size() const { return static_cast<std::int64_t>(entries_.size()); }
  const std::vector<Observation>& entries() const { return entries_; }
  const QuantizationScheme& scheme() const { return scheme_; }

  // Level values at observed entries, 0 elsewhere.
  Eigen::MatrixXd level_matrix() const {
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(rows_, cols_);
    for (const Observation& e : entries_) y(e.row, e.col) = e.level;
    return y;
  }

 private:
  Eigen::Index rows_, cols_;
  std::vector<Observation> entries_;
  QuantizationScheme scheme_;
};

struct ClampStats {
  std::int64_t clamped = 0;
};

inline void check_dims(const Eigen::MatrixXd& x, const ObservedMatrix& obs, const char* who) {
  if (x.rows() != obs.rows() || x.cols() != obs.cols())
    throw std::invalid_argument(std::string(who) + ": matrix is " + std::to_string(x.rows()) +
                                "x" + std::to_string(x.cols()) + ", observations are " +
                                std::to_string(obs.rows()) + "x" + std::to_string(obs.cols()));
}

// -F_Y(X) = sum over observed entries of -log f_ij(X_ij). Per-row partial
// sums in index order keep the result independent of how Omega is split
// across workers. Clamped entries are counted, never dropped.
inline double neg_log_likelihood(const Eigen::MatrixXd& x, const ObservedMatrix& obs,
                                 ClampStats* stats = nullptr) {
  check_dims(x, obs, "neg_log_likelihood");
  const auto& entries = obs.entries();
  double total = 0.0;
  double row_sum = 0.0;
  Eigen::Index row = entries.front().row;
  for (const Observation& e : entries) {
    if (e.row != row) {
      total += row_sum;
      row_sum = 0.0;
      row = e.row;
    }
    const auto [lo, up] = obs.scheme().bounds(e.level);
    double nl = -log_bin_prob(x(e.row, e.col), lo, up);
    if (nl > kNegLogClamp) {
      nl = kNegLogClamp;
      if (stats) ++stats->clamped;
    }
    row_sum += nl;
  }
  return total + row_sum;
}

// Gradient of -F_Y: entry (i,j) is -d/dx log f_ij at X_ij on Omega, exactly
// zero elsewhere.
inline Eigen::MatrixXd grad_neg_log_likelihood(const Eigen::MatrixXd& x,
                                               const ObservedMatrix& obs) {
  check_dims(x, obs, "grad_neg_log_likelihood");
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  for (const Observation& e : obs.entries()) {
    const auto [lo, up] = obs.scheme().bounds(e.level);
    g(e.row, e.col) = -grad_log_bin_prob(x(e.row, e.col), lo, up);
  }
  return g;
}

// Sum of singular values.
inline double trace_norm(const Eigen::MatrixXd& x) {
  return Eigen::BDCSVD<Eigen::MatrixXd>(x).singularValues().sum();
}

// G(X, lambda) = -F_Y(X) + lambda * ||X||_* split into its two terms.
struct ObjectiveBreakdown {
  double data_term = 0.0;
  double trace_norm = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

inline ObjectiveBreakdown penalized_objective(const Eigen::MatrixXd& x, const ObservedMatrix& obs,
                                              double lambda, ClampStats* stats = nullptr) {
  if (!(lambda >= 0.0))
    throw std::invalid_argument("penalized_objective: lambda must be nonnegative");
  ObjectiveBreakdown b;
  b.data_term = neg_log_likelihood(x, obs, stats);
  b.trace_norm = trace_norm(x);
  b.lambda = lambda;
  b.total = b.data_term + lambda * b.trace_norm;
  return b;
}

}  // namespace qmc
