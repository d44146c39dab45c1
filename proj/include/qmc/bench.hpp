#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <istream>
#include <limits>
#include <mutex>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "qmc/baselines.hpp"
#include "qmc/data.hpp"
#include "qmc/likelihood.hpp"
#include "qmc/solver.hpp"
#include "qmc/textio.hpp"

namespace qmc {

inline double relative_error(const Eigen::MatrixXd& x_hat, const Eigen::MatrixXd& x0) {
  if (x_hat.rows() != x0.rows() || x_hat.cols() != x0.cols())
    throw std::invalid_argument("relative_error: shape mismatch");
  const double denom = x0.norm();
  if (!(denom > 0.0)) throw std::invalid_argument("relative_error: ground truth is zero");
  return (x_hat - x0).norm() / denom;
}

// Root mean squared error of predictions against held-out levels, with the
// predictions clamped onto [1, num_levels] by default.
inline double rmse(const Eigen::MatrixXd& x_hat, const ObservedMatrix& holdout,
                   bool clamp = true) {
  check_dims(x_hat, holdout, "rmse");
  const double hi = holdout.scheme().num_levels();
  double sum = 0.0;
  for (const Observation& e : holdout.entries()) {
    double v = x_hat(e.row, e.col);
    if (clamp) v = std::min(std::max(v, 1.0), hi);
    const double d = v - static_cast<double>(e.level);
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(holdout.size()));
}

enum class DatasetKind { synthetic, movielens };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::synthetic;
  SyntheticParams synth;       // synthetic: per-run seed overrides synth.seed
  std::string data_path;       // movielens: u.data location
  double holdout_frac = 0.1;   // movielens
  Eigen::Index sub_rows = 0;   // movielens: 0 = full matrix,
  Eigen::Index sub_cols = 0;   // otherwise densest sub_rows x sub_cols block

  // Equality compares only the fields the kind actually uses.
  bool operator==(const DatasetSpec& other) const {
    if (kind != other.kind) return false;
    if (kind == DatasetKind::synthetic) return synth == other.synth;
    return data_path == other.data_path && holdout_frac == other.holdout_frac &&
           sub_rows == other.sub_rows && sub_cols == other.sub_cols;
  }

  std::string id() const {
    if (kind == DatasetKind::synthetic) {
      return "synth-m" + std::to_string(synth.m) + "-n" + std::to_string(synth.n) + "-r" +
             std::to_string(synth.rank) + "-l" + std::to_string(synth.num_levels) + "-mf" +
             format_double(synth.missing_frac) + "-ns" + format_double(synth.noise_scale);
    }
    std::string id = "ml100k-h" + format_double(holdout_frac);
    if (sub_rows > 0)
      id += "-sub" + std::to_string(sub_rows) + "x" + std::to_string(sub_cols);
    return id;
  }
};

inline const char* kMethodNames[] = {"qmc-bif", "trace-ball", "fixed-rank"};

struct MethodSpec {
  std::string name;                // one of kMethodNames
  std::vector<double> lambdas;     // qmc-bif grid
  std::vector<int> ranks;          // qmc-bif factor width / fixed-rank r* grid
  std::vector<double> trace_radii; // trace-ball grid
  double rho = 1.0;                // qmc-bif

  bool operator==(const MethodSpec&) const = default;
};

struct ExperimentSpec {
  DatasetSpec dataset;
  std::vector<MethodSpec> methods;
  std::vector<std::uint64_t> seeds;
  int max_outer = 300;   // qmc-bif outer-iteration cap
  int max_iters = 500;   // baseline iteration cap
  double tol = 1e-5;
  bool clamp_rmse = true;
  std::string out_path;  // advisory; the caller picks the actual sink

  bool operator==(const ExperimentSpec&) const = default;

  void validate() const {
    if (methods.empty()) throw std::invalid_argument("ExperimentSpec: no methods");
    if (seeds.empty()) throw std::invalid_argument("ExperimentSpec: no seeds");
    if (!(tol > 0.0)) throw std::invalid_argument("ExperimentSpec: tol must be > 0");
    if (max_outer < 1 || max_iters < 1)
      throw std::invalid_argument("ExperimentSpec: iteration caps must be positive");
    for (const MethodSpec& m : methods) {
      if (m.name == "qmc-bif") {
        if (m.lambdas.empty() || m.ranks.empty())
          throw std::invalid_argument("ExperimentSpec: qmc-bif needs lambda and rank grids");
        if (!(m.rho > 0.0)) throw std::invalid_argument("ExperimentSpec: qmc-bif needs rho > 0");
      } else if (m.name == "trace-ball") {
        if (m.trace_radii.empty())
          throw std::invalid_argument("ExperimentSpec: trace-ball needs a k grid");
        for (double k : m.trace_radii)
          if (!(k > 0.0)) throw std::invalid_argument("ExperimentSpec: k must be > 0");
      } else if (m.name == "fixed-rank") {
        if (m.ranks.empty())
          throw std::invalid_argument("ExperimentSpec: fixed-rank needs a rank grid");
      } else {
        throw std::invalid_argument("ExperimentSpec: unknown method '" + m.name +
                                    "' (expected qmc-bif, trace-ball, or fixed-rank)");
      }
      for (int r : m.ranks)
        if (r < 1) throw std::invalid_argument("ExperimentSpec: ranks must be positive");
      for (double l : m.lambdas)
        if (!(l >= 0.0)) throw std::invalid_argument("ExperimentSpec: lambda must be >= 0");
    }
    if (dataset.kind == DatasetKind::synthetic) {
      SyntheticParams p = dataset.synth;
      p.seed = 0;
      p.validate();
    } else {
      if (dataset.data_path.empty())
        throw std::invalid_argument("ExperimentSpec: movielens needs data_path");
      if (!(dataset.holdout_frac > 0.0) || !(dataset.holdout_frac < 1.0))
        throw std::invalid_argument("ExperimentSpec: holdout must lie in (0,1)");
      if ((dataset.sub_rows > 0) != (dataset.sub_cols > 0))
        throw std::invalid_argument("ExperimentSpec: sub_rows and sub_cols go together");
    }
  }
};

struct ResultRow {
  std::string dataset;
  std::string method;
  std::optional<double> lambda;
  std::optional<double> rho;
  std::optional<int> rank;
  std::optional<double> k;
  std::uint64_t seed = 0;
  std::string metric;
  double value = std::numeric_limits<double>::quiet_NaN();
  long iters = 0;
  double wall_time = 0.0;
  std::string status = "ok";
};

inline constexpr const char* kCsvHeader =
    "dataset,method,lambda,rho,rank,k,seed,metric,value,iters,wall_time,status";

inline std::string csv_line(const ResultRow& row) {
  const auto opt_double = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
  };
  std::string line = row.dataset + "," + row.method + "," + opt_double(row.lambda) + "," +
                     opt_double(row.rho) + "," + (row.rank ? std::to_string(*row.rank) : "") +
                     "," + opt_double(row.k) + "," + std::to_string(row.seed) + "," + row.metric +
                     "," + format_double(row.value) + "," + std::to_string(row.iters) + "," +
                     format_double(row.wall_time) + "," + row.status;
  return line;
}

// --- spec file: one `key value` pair per line, '#' comments -----------------
//
//   dataset synthetic | movielens
//   m/n/rank/levels/missing/noise      (synthetic)
//   data_path/holdout/sub_rows/sub_cols (movielens)
//   method <name> [lambda=..,..] [rank=..,..] [k=..,..] [rho=..]
//   seeds 1,2,3
//   max_outer / max_iters / tol / clamp_rmse / out

inline ExperimentSpec parse_spec(std::istream& in, const std::string& name) {
  ExperimentSpec spec;
  spec.dataset.synth.rank = 0;  // force explicit rank for synthetic datasets
  bool saw_dataset = false;
  std::string line;
  long line_no = 0;
  const auto fail = [&](const std::string& what) {
    throw std::runtime_error("parse_spec: " + name + ":" + std::to_string(line_no) + ": " + what);
  };
  const auto parse_list_d = [&](std::string_view text) {
    std::vector<double> out;
    for (std::string_view part : split(text, ','))
      out.push_back(parse_double(trim(part), "list value"));
    return out;
  };
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    const std::size_t sep = stripped.find(' ');
    if (sep == std::string_view::npos) fail("expected 'key value'");
    const std::string_view key = stripped.substr(0, sep);
    const std::string_view value = trim(stripped.substr(sep + 1));
    if (value.empty()) fail("missing value for '" + std::string(key) + "'");
    try {
      if (key == "dataset") {
        if (value == "synthetic")
          spec.dataset.kind = DatasetKind::synthetic;
        else if (value == "movielens")
          spec.dataset.kind = DatasetKind::movielens;
        else
          fail("unknown dataset '" + std::string(value) + "'");
        saw_dataset = true;
      } else if (key == "m")
        spec.dataset.synth.m = parse_int<Eigen::Index>(value, "m");
      else if (key == "n")
        spec.dataset.synth.n = parse_int<Eigen::Index>(value, "n");
      else if (key == "rank")
        spec.dataset.synth.rank = parse_int<int>(value, "rank");
      else if (key == "levels")
        spec.dataset.synth.num_levels = parse_int<int>(value, "levels");
      else if (key == "missing")
        spec.dataset.synth.missing_frac = parse_double(value, "missing");
      else if (key == "noise")
        spec.dataset.synth.noise_scale = parse_double(value, "noise");
      else if (key == "data_path")
        spec.dataset.data_path = std::string(value);
      else if (key == "holdout")
        spec.dataset.holdout_frac = parse_double(value, "holdout");
      else if (key == "sub_rows")
        spec.dataset.sub_rows = parse_int<Eigen::Index>(value, "sub_rows");
      else if (key == "sub_cols")
        spec.dataset.sub_cols = parse_int<Eigen::Index>(value, "sub_cols");
      else if (key == "method") {
        MethodSpec method;
        const std::vector<std::string_view> tokens = split(value, ' ');
        method.name = std::string(trim(tokens[0]));
        for (std::size_t t = 1; t < tokens.size(); ++t) {
          const std::string_view tok = trim(tokens[t]);
          if (tok.empty()) continue;
          const std::size_t eq = tok.find('=');
          if (eq == std::string_view::npos)
            fail("malformed method option '" + std::string(tok) + "'");
          const std::string_view opt = tok.substr(0, eq);
          const std::string_view arg = tok.substr(eq + 1);
          if (opt == "lambda")
            method.lambdas = parse_list_d(arg);
          else if (opt == "k")
            method.trace_radii = parse_list_d(arg);
          else if (opt == "rank") {
            method.ranks.clear();
            for (std::string_view part : split(arg, ','))
              method.ranks.push_back(parse_int<int>(trim(part), "rank"));
          } else if (opt == "rho")
            method.rho = parse_double(arg, "rho");
          else
            fail("unknown method option '" + std::string(opt) + "'");
        }
        spec.methods.push_back(std::move(method));
      } else if (key == "seeds") {
        spec.seeds.clear();
        for (std::string_view part : split(value, ','))
          spec.seeds.push_back(parse_int<std::uint64_t>(trim(part), "seed"));
      } else if (key == "max_outer")
        spec.max_outer = parse_int<int>(value, "max_outer");
      else if (key == "max_iters")
        spec.max_iters = parse_int<int>(value, "max_iters");
      else if (key == "tol")
        spec.tol = parse_double(value, "tol");
      else if (key == "clamp_rmse")
        spec.clamp_rmse = parse_int<int>(value, "clamp_rmse") != 0;
      else if (key == "out")
        spec.out_path = std::string(value);
      else
        fail("unknown key '" + std::string(key) + "'");
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
  }
  if (!saw_dataset) {
    line_no = 0;
    fail("spec never set 'dataset'");
  }
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("parse_spec: " + name + ": " + e.what());
  }
  return spec;
}

inline void print_spec(std::ostream& out, const ExperimentSpec& spec) {
  if (spec.dataset.kind == DatasetKind::synthetic) {
    out << "dataset synthetic\n";
    out << "m " << spec.dataset.synth.m << "\n";
    out << "n " << spec.dataset.synth.n << "\n";
    out << "rank " << spec.dataset.synth.rank << "\n";
    out << "levels " << spec.dataset.synth.num_levels << "\n";
    out << "missing " << format_double(spec.dataset.synth.missing_frac) << "\n";
    out << "noise " << format_double(spec.dataset.synth.noise_scale) << "\n";
  } else {
    out << "dataset movielens\n";
    out << "data_path " << spec.dataset.data_path << "\n";
    out << "holdout " << format_double(spec.dataset.holdout_frac) << "\n";
    if (spec.dataset.sub_rows > 0) {
      out << "sub_rows " << spec.dataset.sub_rows << "\n";
      out << "sub_cols " << spec.dataset.sub_cols << "\n";
    }
  }
  for (const MethodSpec& m : spec.methods) {
    out << "method " << m.name;
    const auto list_d = [&](const char* key, const std::vector<double>& v) {
      if (v.empty()) return;
      out << " " << key << "=";
      for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << format_double(v[i]);
    };
    list_d("lambda", m.lambdas);
    if (!m.ranks.empty()) {
      out << " rank=";
      for (std::size_t i = 0; i < m.ranks.size(); ++i) out << (i ? "," : "") << m.ranks[i];
    }
    list_d("k", m.trace_radii);
    if (m.name == "qmc-bif") out << " rho=" << format_double(m.rho);
    out << "\n";
  }
  out << "seeds ";
  for (std::size_t i = 0; i < spec.seeds.size(); ++i) out << (i ? "," : "") << spec.seeds[i];
  out << "\n";
  out << "max_outer " << spec.max_outer << "\n";
  out << "max_iters " << spec.max_iters << "\n";
  out << "tol " << format_double(spec.tol) << "\n";
  out << "clamp_rmse " << (spec.clamp_rmse ? 1 : 0) << "\n";
  if (!spec.out_path.empty()) out << "out " << spec.out_path << "\n";
}

namespace detail {

struct RunPoint {
  std::string method;
  std::optional<double> lambda;
  std::optional<double> rho;
  std::optional<int> rank;
  std::optional<double> k;
  std::uint64_t seed = 0;
};

inline std::vector<RunPoint> enumerate_points(const ExperimentSpec& spec) {
  std::vector<RunPoint> points;
  for (const MethodSpec& m : spec.methods) {
    if (m.name == "qmc-bif") {
      for (double lambda : m.lambdas)
        for (int rank : m.ranks)
          for (std::uint64_t seed : spec.seeds)
            points.push_back({m.name, lambda, m.rho, rank, std::nullopt, seed});
    } else if (m.name == "trace-ball") {
      for (double k : m.trace_radii)
        for (std::uint64_t seed : spec.seeds)
          points.push_back({m.name, std::nullopt, std::nullopt, std::nullopt, k, seed});
    } else {
      for (int rank : m.ranks)
        for (std::uint64_t seed : spec.seeds)
          points.push_back({m.name, std::nullopt, std::nullopt, rank, std::nullopt, seed});
    }
  }
  return points;
}

inline std::string sanitize_status(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

// Run one grid point end to end: build its dataset, solve, score.
inline std::vector<ResultRow> execute_point(const ExperimentSpec& spec,
                                            const ObservedMatrix* ml_obs, const RunPoint& point) {
  ResultRow base;
  base.dataset = spec.dataset.id();
  base.method = point.method;
  base.lambda = point.lambda;
  base.rho = point.rho;
  base.rank = point.rank;
  base.k = point.k;
  base.seed = point.seed;
  try {
    std::optional<SyntheticInstance> synth;
    std::optional<std::pair<ObservedMatrix, ObservedMatrix>> split;
    const ObservedMatrix* train = nullptr;
    if (spec.dataset.kind == DatasetKind::synthetic) {
      SyntheticParams params = spec.dataset.synth;
      params.seed = point.seed;
      synth.emplace(generate_synthetic(params));
      train = &synth->observed;
    } else {
      split.emplace(split_holdout(*ml_obs, spec.dataset.holdout_frac, point.seed));
      train = &split->first;
    }

    Eigen::MatrixXd x_hat;
    double objective = 0.0;
    long iters = 0;
    double wall = 0.0;
    bool converged = false;
    if (point.method == "qmc-bif") {
      SolverConfig cfg;
      cfg.lambda = *point.lambda;
      cfg.rho = *point.rho;
      cfg.rank = *point.rank;
      cfg.outer_tol = spec.tol;
      cfg.max_outer = spec.max_outer;
      cfg.seed = point.seed;
      cfg.track_objective = false;
      SolveResult res = qmc_bif(*train, cfg);
      x_hat = std::move(res.x_star);
      objective = penalized_objective(x_hat, *train, cfg.lambda).total;
      iters = res.outer_iters;
      wall = res.wall_time_seconds;
      converged = res.converged;
    } else if (point.method == "trace-ball") {
      BaselineConfig cfg;
      cfg.variant = BaselineVariant::trace_ball;
      cfg.trace_radius = *point.k;
      cfg.tol = spec.tol;
      cfg.max_iters = spec.max_iters;
      cfg.seed = point.seed;
      SolveResult res = qmc_trace_ball(*train, cfg);
      x_hat = std::move(res.x_star);
      objective = res.objective_trace.back().total;
      iters = res.outer_iters;
      wall = res.wall_time_seconds;
      converged = res.converged;
    } else {
      BaselineConfig cfg;
      cfg.variant = BaselineVariant::fixed_rank;
      cfg.rank = *point.rank;
      cfg.tol = spec.tol;
      cfg.max_iters = spec.max_iters;
      cfg.seed = point.seed;
      SolveResult res = qmc_fixed_rank(*train, cfg);
      x_hat = std::move(res.x_star);
      objective = res.objective_trace.back().total;
      iters = res.outer_iters;
      wall = res.wall_time_seconds;
      converged = res.converged;
    }

    base.iters = iters;
    base.wall_time = wall;
    base.status = converged ? "ok" : "noconv";

    std::vector<ResultRow> rows;
    ResultRow fit = base;
    if (spec.dataset.kind == DatasetKind::synthetic) {
      fit.metric = "relative_error";
      fit.value = relative_error(x_hat, synth->ground_truth);
    } else {
      fit.metric = spec.clamp_rmse ? "rmse" : "rmse_raw";
      fit.value = rmse(x_hat, split->second, spec.clamp_rmse);
    }
    rows.push_back(fit);

    ResultRow obj = base;
    obj.metric = "objective";
    obj.value = objective;
    rows.push_back(obj);

    ResultRow tn = base;
    tn.metric = "trace_norm";
    tn.value = trace_norm(x_hat);
    rows.push_back(tn);
    return rows;
  } catch (const std::exception& e) {
    ResultRow err = base;
    err.metric = "objective";
    err.value = std::numeric_limits<double>::quiet_NaN();
    err.status = "error:" + sanitize_status(e.what());
    return {err};
  }
}

}  // namespace detail

struct BenchOptions {
  int workers = 1;
  std::ostream* progress = nullptr;
};

// Execute the full grid. Rows stream to `csv` in grid order as soon as each
// point (and all points before it) completes; grid points run concurrently
// across `workers` threads. Identical specs produce identical output except
// for the wall_time column.
inline std::vector<ResultRow> run_experiments(const ExperimentSpec& spec, std::ostream& csv,
                                              const BenchOptions& options = {}) {
  spec.validate();
  if (options.workers < 1) throw std::invalid_argument("run_experiments: workers must be >= 1");

  std::optional<ObservedMatrix> ml_obs;
  if (spec.dataset.kind == DatasetKind::movielens) {
    RatingsDataset ds = load_movielens(spec.dataset.data_path);
    if (spec.dataset.sub_rows > 0) {
      SubmatrixSelection sel =
          densest_submatrix(ds.observed, spec.dataset.sub_rows, spec.dataset.sub_cols);
      ml_obs.emplace(std::move(sel.observed));
    } else {
      ml_obs.emplace(std::move(ds.observed));
    }
  }

  const std::vector<detail::RunPoint> points = detail::enumerate_points(spec);
  std::vector<std::vector<ResultRow>> results(points.size());
  std::vector<char> ready(points.size(), 0);
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<std::size_t> next_point{0};

  const auto worker = [&] {
    for (;;) {
      const std::size_t idx = next_point.fetch_add(1);
      if (idx >= points.size()) return;
      std::vector<ResultRow> rows =
          detail::execute_point(spec, ml_obs ? &*ml_obs : nullptr, points[idx]);
      {
        std::lock_guard<std::mutex> lock(mu);
        results[idx] = std::move(rows);
        ready[idx] = 1;
      }
      cv.notify_all();
    }
  };
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(options.workers));
  for (int w = 0; w < options.workers; ++w) threads.emplace_back(worker);

  std::vector<ResultRow> all;
  csv << kCsvHeader << "\n";
  for (std::size_t idx = 0; idx < points.size(); ++idx) {
    {
      std::unique_lock<std::mutex> lock(mu);
      cv.wait(lock, [&] { return ready[idx] == 1; });
    }
    for (const ResultRow& row : results[idx]) {
      csv << csv_line(row) << "\n";
      all.push_back(row);
    }
    csv.flush();
    if (options.progress) {
      const ResultRow& first = results[idx].front();
      *options.progress << "[" << (idx + 1) << "/" << points.size() << "] " << first.method
                        << " seed=" << first.seed << " status=" << first.status << "\n";
    }
  }
  for (std::thread& t : threads) t.join();
  return all;
}

}  // namespace qmc
