#pragma once

#include <Eigen/Dense>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qmc/likelihood.hpp"
#include "qmc/quantization.hpp"
#include "qmc/rng.hpp"
#include "qmc/textio.hpp"

namespace qmc {

struct SyntheticParams {
  Eigen::Index m = 0;
  Eigen::Index n = 0;
  int rank = 1;
  int num_levels = 2;
  double missing_frac = 0.0;
  double noise_scale = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const SyntheticParams&) const = default;

  void validate() const {
    if (m < 1 || n < 1) throw std::invalid_argument("generate_synthetic: dimensions must be positive");
    if (rank < 1 || rank > std::min(m, n))
      throw std::invalid_argument("generate_synthetic: rank must lie in 1..min(m,n)");
    if (num_levels < 2) throw std::invalid_argument("generate_synthetic: need at least 2 levels");
    if (!(missing_frac >= 0.0) || missing_frac >= 1.0)
      throw std::invalid_argument("generate_synthetic: missing_frac must lie in [0,1)");
    if (!(noise_scale >= 0.0))
      throw std::invalid_argument("generate_synthetic: noise_scale must be >= 0");
  }
};

struct SyntheticInstance {
  SyntheticParams params;
  Eigen::MatrixXd ground_truth;
  // true = hidden; observed entries are exactly the false positions.
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask;
  ObservedMatrix observed;
};

// Low-rank ground truth from thin orthonormal factors and uniform singular
// values, affinely rescaled onto [1, num_levels] (the rescale can raise the
// rank by at most one), then quantized with optional logistic noise, with a
// uniformly random set of ceil(missing_frac * m * n) entries hidden.
inline SyntheticInstance generate_synthetic(const SyntheticParams& params) {
  params.validate();
  const Eigen::Index m = params.m, n = params.n;
  const std::int64_t total = static_cast<std::int64_t>(m) * n;
  const std::int64_t hidden =
      static_cast<std::int64_t>(std::ceil(params.missing_frac * static_cast<double>(total)));
  if (hidden >= total)
    throw std::invalid_argument("generate_synthetic: missing_frac hides every entry");

  Rng rng(params.seed);
  const auto gaussian = [&rng](Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd g(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) g(i, j) = rng.normal();
    return g;
  };
  const Eigen::MatrixXd qu =
      Eigen::HouseholderQR<Eigen::MatrixXd>(gaussian(m, params.rank)).householderQ() *
      Eigen::MatrixXd::Identity(m, params.rank);
  const Eigen::MatrixXd qv =
      Eigen::HouseholderQR<Eigen::MatrixXd>(gaussian(n, params.rank)).householderQ() *
      Eigen::MatrixXd::Identity(n, params.rank);
  Eigen::VectorXd sigma(params.rank);
  for (int i = 0; i < params.rank; ++i) sigma(i) = rng.uniform01();

  Eigen::MatrixXd truth = qu * sigma.asDiagonal() * qv.transpose();
  const double lo = truth.minCoeff();
  const double hi = truth.maxCoeff();
  if (!(hi - lo > 1e-12))
    throw std::runtime_error("generate_synthetic: degenerate ground truth (constant matrix)");
  truth = (1.0 + (params.num_levels - 1.0) * (truth.array() - lo) / (hi - lo)).matrix();

  const QuantizationScheme scheme = QuantizationScheme::uniform(params.num_levels);
  Eigen::MatrixXi levels(m, n);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const double noise = params.noise_scale > 0.0 ? params.noise_scale * rng.logistic() : 0.0;
      levels(i, j) = scheme.quantize(truth(i, j) + noise);
    }

  std::vector<std::int64_t> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask(m, n);
  mask.setConstant(false);
  for (std::int64_t k = 0; k < hidden; ++k)
    mask(static_cast<Eigen::Index>(order[static_cast<std::size_t>(k)] / n),
         static_cast<Eigen::Index>(order[static_cast<std::size_t>(k)] % n)) = true;

  std::vector<Observation> entries;
  entries.reserve(static_cast<std::size_t>(total - hidden));
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (!mask(i, j)) entries.push_back({i, j, levels(i, j)});

  return SyntheticInstance{params, std::move(truth), std::move(mask),
                           ObservedMatrix(m, n, std::move(entries), scheme)};
}

struct RatingsDataset {
  ObservedMatrix observed;
  std::vector<int> user_counts;
  std::vector<int> item_counts;
};

inline constexpr Eigen::Index kMovielensUsers = 943;
inline constexpr Eigen::Index kMovielensItems = 1682;
inline constexpr std::int64_t kMovielensRatings = 100000;
inline constexpr int kMovielensMinPerUser = 20;

// Strict u.data reader: tab-separated `user item rating timestamp` records
// with 1-based ids, validated against the fixed 943 x 1682 / 100,000-rating
// shape of the 100k release.
inline RatingsDataset load_movielens(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_movielens: cannot open " + path);

  std::vector<Observation> entries;
  entries.reserve(static_cast<std::size_t>(kMovielensRatings));
  std::vector<int> user_counts(static_cast<std::size_t>(kMovielensUsers), 0);
  std::vector<int> item_counts(static_cast<std::size_t>(kMovielensItems), 0);
  std::vector<char> seen(static_cast<std::size_t>(kMovielensUsers * kMovielensItems), 0);

  std::string line;
  long line_no = 0;
  const auto fail = [&](const std::string& what) {
    throw std::runtime_error("load_movielens: " + path + ":" + std::to_string(line_no) + ": " +
                             what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view stripped =
        !line.empty() && line.back() == '\r' ? std::string_view(line).substr(0, line.size() - 1)
                                             : std::string_view(line);
    if (stripped.empty() && in.peek() == std::char_traits<char>::eof()) break;
    const std::vector<std::string_view> fields = split(stripped, '\t');
    if (fields.size() != 4)
      fail("expected 4 tab-separated fields, got " + std::to_string(fields.size()));
    long user = 0, item = 0, rating = 0;
    try {
      user = parse_int<long>(fields[0], "user id");
      item = parse_int<long>(fields[1], "item id");
      rating = parse_int<long>(fields[2], "rating");
      parse_int<long>(fields[3], "timestamp");
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
    if (user < 1 || user > kMovielensUsers)
      fail("user id " + std::to_string(user) + " out of range 1..943");
    if (item < 1 || item > kMovielensItems)
      fail("item id " + std::to_string(item) + " out of range 1..1682");
    if (rating < 1 || rating > 5) fail("rating " + std::to_string(rating) + " outside 1..5");
    const std::size_t key =
        static_cast<std::size_t>((user - 1) * kMovielensItems + (item - 1));
    if (seen[key])
      fail("duplicate rating for user " + std::to_string(user) + ", item " + std::to_string(item));
    seen[key] = 1;
    entries.push_back({static_cast<Eigen::Index>(user - 1), static_cast<Eigen::Index>(item - 1),
                       static_cast<int>(rating)});
    ++user_counts[static_cast<std::size_t>(user - 1)];
    ++item_counts[static_cast<std::size_t>(item - 1)];
  }

  if (static_cast<std::int64_t>(entries.size()) != kMovielensRatings)
    throw std::runtime_error("load_movielens: " + path + ": expected 100000 records, got " +
                             std::to_string(entries.size()));
  for (Eigen::Index u = 0; u < kMovielensUsers; ++u)
    if (user_counts[static_cast<std::size_t>(u)] < kMovielensMinPerUser)
      throw std::runtime_error("load_movielens: " + path + ": user " + std::to_string(u + 1) +
                               " has only " +
                               std::to_string(user_counts[static_cast<std::size_t>(u)]) +
                               " ratings (minimum 20)");

  return RatingsDataset{
      ObservedMatrix(kMovielensUsers, kMovielensItems, std::move(entries),
                     QuantizationScheme::uniform(5)),
      std::move(user_counts), std::move(item_counts)};
}

// Uniformly random partition of the observed entries; both sides keep the
// full matrix shape and scheme.
inline std::pair<ObservedMatrix, ObservedMatrix> split_holdout(const ObservedMatrix& obs,
                                                               double holdout_frac,
                                                               std::uint64_t seed) {
  if (!(holdout_frac > 0.0) || !(holdout_frac < 1.0))
    throw std::invalid_argument("split_holdout: holdout_frac must lie in (0,1)");
  const std::int64_t total = obs.size();
  const std::int64_t h = std::llround(holdout_frac * static_cast<double>(total));
  if (h < 1 || h >= total)
    throw std::invalid_argument("split_holdout: fraction leaves an empty side");

  std::vector<std::int64_t> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());

  std::vector<char> in_holdout(static_cast<std::size_t>(total), 0);
  for (std::int64_t k = 0; k < h; ++k) in_holdout[static_cast<std::size_t>(order[k])] = 1;

  std::vector<Observation> train, holdout;
  train.reserve(static_cast<std::size_t>(total - h));
  holdout.reserve(static_cast<std::size_t>(h));
  const auto& entries = obs.entries();
  for (std::size_t k = 0; k < entries.size(); ++k)
    (in_holdout[k] ? holdout : train).push_back(entries[k]);

  return {ObservedMatrix(obs.rows(), obs.cols(), std::move(train), obs.scheme()),
          ObservedMatrix(obs.rows(), obs.cols(), std::move(holdout), obs.scheme())};
}

struct SubmatrixSelection {
  ObservedMatrix observed;
  std::vector<Eigen::Index> row_ids;  // original indices, ascending
  std::vector<Eigen::Index> col_ids;
};

// Keep the keep_rows rows and keep_cols columns with the most observations
// (ties favor the lower index), reindexed densely in original order.
inline SubmatrixSelection densest_submatrix(const ObservedMatrix& obs, Eigen::Index keep_rows,
                                            Eigen::Index keep_cols) {
  if (keep_rows < 1 || keep_rows > obs.rows() || keep_cols < 1 || keep_cols > obs.cols())
    throw std::invalid_argument("densest_submatrix: keep counts out of range");

  std::vector<std::int64_t> row_count(static_cast<std::size_t>(obs.rows()), 0);
  std::vector<std::int64_t> col_count(static_cast<std::size_t>(obs.cols()), 0);
  for (const Observation& e : obs.entries()) {
    ++row_count[static_cast<std::size_t>(e.row)];
    ++col_count[static_cast<std::size_t>(e.col)];
  }
  const auto top = [](const std::vector<std::int64_t>& counts, Eigen::Index keep) {
    std::vector<Eigen::Index> idx(counts.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
      return counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(b)];
    });
    idx.resize(static_cast<std::size_t>(keep));
    std::sort(idx.begin(), idx.end());
    return idx;
  };
  std::vector<Eigen::Index> rows = top(row_count, keep_rows);
  std::vector<Eigen::Index> cols = top(col_count, keep_cols);

  std::vector<Eigen::Index> row_map(static_cast<std::size_t>(obs.rows()), -1);
  std::vector<Eigen::Index> col_map(static_cast<std::size_t>(obs.cols()), -1);
  for (std::size_t k = 0; k < rows.size(); ++k) row_map[static_cast<std::size_t>(rows[k])] = static_cast<Eigen::Index>(k);
  for (std::size_t k = 0; k < cols.size(); ++k) col_map[static_cast<std::size_t>(cols[k])] = static_cast<Eigen::Index>(k);

  std::vector<Observation> entries;
  for (const Observation& e : obs.entries()) {
    const Eigen::Index r = row_map[static_cast<std::size_t>(e.row)];
    const Eigen::Index c = col_map[static_cast<std::size_t>(e.col)];
    if (r >= 0 && c >= 0) entries.push_back({r, c, e.level});
  }
  return SubmatrixSelection{ObservedMatrix(keep_rows, keep_cols, std::move(entries), obs.scheme()),
                            std::move(rows), std::move(cols)};
}

// --- instance and matrix files ---------------------------------------------
//
// Instance file:
//   qmc-instance m=<int> n=<int> levels=<int> rank=<int> missing=<float>
//                noise=<float> seed=<int> observed=<count> truth=<0|1>
//   (one `i j level` line per observed entry, 0-based, row-major)
//   [literal line `truth`, then m lines of n space-separated values]
//
// Matrix file:
//   qmc-matrix <rows> <cols>
//   (rows lines of cols space-separated values)

struct InstanceFile {
  SyntheticParams params;  // rank 0 when unknown (non-synthetic provenance)
  ObservedMatrix observed;
  std::optional<Eigen::MatrixXd> ground_truth;
};

inline void write_instance(std::ostream& out, const ObservedMatrix& obs,
                           const Eigen::MatrixXd* truth, const SyntheticParams& params) {
  out << "qmc-instance m=" << obs.rows() << " n=" << obs.cols()
      << " levels=" << obs.scheme().num_levels() << " rank=" << params.rank
      << " missing=" << format_double(params.missing_frac)
      << " noise=" << format_double(params.noise_scale) << " seed=" << params.seed
      << " observed=" << obs.size() << " truth=" << (truth ? 1 : 0) << "\n";
  for (const Observation& e : obs.entries())
    out << e.row << " " << e.col << " " << e.level << "\n";
  if (truth) {
    out << "truth\n";
    for (Eigen::Index i = 0; i < truth->rows(); ++i) {
      for (Eigen::Index j = 0; j < truth->cols(); ++j) {
        if (j) out << " ";
        out << format_double((*truth)(i, j));
      }
      out << "\n";
    }
  }
}

inline void write_instance(const std::string& path, const SyntheticInstance& instance) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_instance: cannot open " + path + " for writing");
  write_instance(out, instance.observed, &instance.ground_truth, instance.params);
  if (!out) throw std::runtime_error("write_instance: write to " + path + " failed");
}

inline void write_instance(const std::string& path, const ObservedMatrix& obs,
                           const Eigen::MatrixXd* truth = nullptr,
                           const SyntheticParams& params = {}) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_instance: cannot open " + path + " for writing");
  write_instance(out, obs, truth, params);
  if (!out) throw std::runtime_error("write_instance: write to " + path + " failed");
}

inline InstanceFile read_instance(std::istream& in, const std::string& name) {
  long line_no = 0;
  const auto fail = [&](const std::string& what) {
    throw std::runtime_error("read_instance: " + name + ":" + std::to_string(line_no) + ": " +
                             what);
  };
  std::string line;
  if (!std::getline(in, line)) {
    line_no = 1;
    fail("empty file");
  }
  ++line_no;

  SyntheticParams params;
  params.rank = 0;
  Eigen::Index m = -1, n = -1;
  int levels = -1;
  std::int64_t observed = -1;
  int has_truth = 0;
  {
    const std::vector<std::string_view> tokens = split(trim(line), ' ');
    if (tokens.empty() || tokens[0] != "qmc-instance") fail("expected 'qmc-instance' header");
    for (std::size_t t = 1; t < tokens.size(); ++t) {
      const std::vector<std::string_view> kv = split(tokens[t], '=');
      if (kv.size() != 2) fail("malformed header token '" + std::string(tokens[t]) + "'");
      const std::string_view key = kv[0], value = kv[1];
      try {
        if (key == "m")
          m = parse_int<Eigen::Index>(value, "m");
        else if (key == "n")
          n = parse_int<Eigen::Index>(value, "n");
        else if (key == "levels")
          levels = parse_int<int>(value, "levels");
        else if (key == "rank")
          params.rank = parse_int<int>(value, "rank");
        else if (key == "missing")
          params.missing_frac = parse_double(value, "missing");
        else if (key == "noise")
          params.noise_scale = parse_double(value, "noise");
        else if (key == "seed")
          params.seed = parse_int<std::uint64_t>(value, "seed");
        else if (key == "observed")
          observed = parse_int<std::int64_t>(value, "observed");
        else if (key == "truth")
          has_truth = parse_int<int>(value, "truth");
        else
          fail("unknown header key '" + std::string(key) + "'");
      } catch (const std::invalid_argument& e) {
        fail(e.what());
      }
    }
  }
  if (m < 1 || n < 1) fail("header must set positive m and n");
  if (levels < 1) fail("header must set levels >= 1");
  if (observed < 1) fail("header must set observed >= 1");
  params.m = m;
  params.n = n;
  params.num_levels = levels;

  std::vector<Observation> entries;
  entries.reserve(static_cast<std::size_t>(observed));
  for (std::int64_t k = 0; k < observed; ++k) {
    if (!std::getline(in, line)) fail("truncated: expected " + std::to_string(observed) +
                                      " entry lines, got " + std::to_string(k));
    ++line_no;
    const std::vector<std::string_view> fields = split(trim(line), ' ');
    if (fields.size() != 3) fail("expected 'i j level'");
    try {
      entries.push_back({parse_int<Eigen::Index>(fields[0], "row"),
                         parse_int<Eigen::Index>(fields[1], "col"),
                         parse_int<int>(fields[2], "level")});
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
  }

  std::optional<Eigen::MatrixXd> truth;
  if (has_truth) {
    if (!std::getline(in, line) || trim(line) != "truth") {
      ++line_no;
      fail("expected literal 'truth' line");
    }
    ++line_no;
    Eigen::MatrixXd t(m, n);
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!std::getline(in, line)) fail("truncated ground-truth block");
      ++line_no;
      const std::vector<std::string_view> fields = split(trim(line), ' ');
      if (static_cast<Eigen::Index>(fields.size()) != n)
        fail("ground-truth row has " + std::to_string(fields.size()) + " values, expected " +
             std::to_string(n));
      try {
        for (Eigen::Index j = 0; j < n; ++j) t(i, j) = parse_double(fields[static_cast<std::size_t>(j)], "truth value");
      } catch (const std::invalid_argument& e) {
        fail(e.what());
      }
    }
    truth = std::move(t);
  }

  QuantizationScheme scheme = levels == 1
                                  ? QuantizationScheme({-kInf, kInf})
                                  : QuantizationScheme::uniform(levels);
  try {
    return InstanceFile{params, ObservedMatrix(m, n, std::move(entries), std::move(scheme)),
                        std::move(truth)};
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("read_instance: " + name + ": " + e.what());
  }
}

inline InstanceFile read_instance(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_instance: cannot open " + path);
  return read_instance(in, path);
}

inline void write_matrix(std::ostream& out, const Eigen::MatrixXd& x) {
  out << "qmc-matrix " << x.rows() << " " << x.cols() << "\n";
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (j) out << " ";
      out << format_double(x(i, j));
    }
    out << "\n";
  }
}

inline void write_matrix(const std::string& path, const Eigen::MatrixXd& x) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_matrix: cannot open " + path + " for writing");
  write_matrix(out, x);
  if (!out) throw std::runtime_error("write_matrix: write to " + path + " failed");
}

inline Eigen::MatrixXd read_matrix(std::istream& in, const std::string& name) {
  long line_no = 1;
  const auto fail = [&](const std::string& what) {
    throw std::runtime_error("read_matrix: " + name + ":" + std::to_string(line_no) + ": " + what);
  };
  std::string line;
  if (!std::getline(in, line)) fail("empty file");
  const std::vector<std::string_view> header = split(trim(line), ' ');
  if (header.size() != 3 || header[0] != "qmc-matrix") fail("expected 'qmc-matrix <rows> <cols>'");
  Eigen::Index rows = 0, cols = 0;
  try {
    rows = parse_int<Eigen::Index>(header[1], "rows");
    cols = parse_int<Eigen::Index>(header[2], "cols");
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  if (rows < 1 || cols < 1) fail("dimensions must be positive");
  Eigen::MatrixXd x(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (!std::getline(in, line)) fail("truncated: expected " + std::to_string(rows) + " rows");
    ++line_no;
    const std::vector<std::string_view> fields = split(trim(line), ' ');
    if (static_cast<Eigen::Index>(fields.size()) != cols)
      fail("row has " + std::to_string(fields.size()) + " values, expected " +
           std::to_string(cols));
    try {
      for (Eigen::Index j = 0; j < cols; ++j) x(i, j) = parse_double(fields[static_cast<std::size_t>(j)], "value");
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
  }
  return x;
}

inline Eigen::MatrixXd read_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_matrix: cannot open " + path);
  return read_matrix(in, path);
}

}  // namespace qmc
