#include <CLI11.hpp>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qmc/baselines.hpp"
#include "qmc/bench.hpp"
#include "qmc/data.hpp"
#include "qmc/likelihood.hpp"
#include "qmc/quantization.hpp"
#include "qmc/solver.hpp"

namespace {

int numerical_rank(const Eigen::MatrixXd& x, double rel_tol = 1e-8) {
  const Eigen::VectorXd sv = Eigen::BDCSVD<Eigen::MatrixXd>(x).singularValues();
  if (sv.size() == 0 || sv(0) <= 0.0) return 0;
  int r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > rel_tol * sv(0)) ++r;
  return r;
}

std::string sanitize_cell(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

struct SynthArgs {
  qmc::SyntheticParams params;
  std::string out = "instance.txt";
  bool no_truth = false;
};

int run_synth(const SynthArgs& args) {
  std::cout << "config: subcommand=synth m=" << args.params.m << " n=" << args.params.n
            << " rank=" << args.params.rank << " levels=" << args.params.num_levels
            << " missing=" << qmc::format_double(args.params.missing_frac)
            << " noise=" << qmc::format_double(args.params.noise_scale)
            << " seed=" << args.params.seed << " out=" << args.out
            << " truth=" << (args.no_truth ? 0 : 1) << "\n";

  const qmc::SyntheticInstance inst = qmc::generate_synthetic(args.params);
  if (args.no_truth)
    qmc::write_instance(args.out, inst.observed, nullptr, inst.params);
  else
    qmc::write_instance(args.out, inst);

  const std::int64_t total = static_cast<std::int64_t>(args.params.m) * args.params.n;
  std::cout << "synth: observed=" << inst.observed.size()
            << " hidden=" << (total - inst.observed.size())
            << " rank_numeric=" << numerical_rank(inst.ground_truth)
            << " min=" << qmc::format_double(inst.ground_truth.minCoeff())
            << " max=" << qmc::format_double(inst.ground_truth.maxCoeff()) << "\n";
  std::cout << "synth: wrote " << args.out << "\n";
  return 0;
}

struct MovielensArgs {
  std::string data;
  double holdout = 0.0;
  std::uint64_t seed = 0;
  Eigen::Index sub_rows = 0;
  Eigen::Index sub_cols = 0;
  std::string out;
  std::string out_train;
  std::string out_holdout;
  std::string mapping;
};

int run_movielens(const MovielensArgs& args) {
  std::cout << "config: subcommand=movielens data=" << args.data
            << " holdout=" << qmc::format_double(args.holdout) << " seed=" << args.seed
            << " sub_rows=" << args.sub_rows << " sub_cols=" << args.sub_cols
            << " out=" << args.out << " out_train=" << args.out_train
            << " out_holdout=" << args.out_holdout << " mapping=" << args.mapping << "\n";
  if ((args.sub_rows > 0) != (args.sub_cols > 0))
    throw std::invalid_argument("movielens: --sub-rows and --sub-cols go together");

  const qmc::RatingsDataset ds = qmc::load_movielens(args.data);
  int min_user = ds.user_counts.front();
  for (int c : ds.user_counts) min_user = std::min(min_user, c);
  std::cout << "movielens: users=" << ds.observed.rows() << " items=" << ds.observed.cols()
            << " ratings=" << ds.observed.size() << " min_user_count=" << min_user << "\n";

  std::optional<qmc::ObservedMatrix> working;
  if (args.sub_rows > 0) {
    qmc::SubmatrixSelection sel = qmc::densest_submatrix(ds.observed, args.sub_rows, args.sub_cols);
    std::cout << "movielens: submatrix " << args.sub_rows << "x" << args.sub_cols
              << " ratings=" << sel.observed.size() << "\n";
    if (!args.mapping.empty()) {
      std::ofstream map(args.mapping);
      if (!map) throw std::runtime_error("movielens: cannot open " + args.mapping);
      map << "qmc-mapping rows " << sel.row_ids.size() << " cols " << sel.col_ids.size() << "\n";
      for (std::size_t k = 0; k < sel.row_ids.size(); ++k)
        map << "row " << k << " " << sel.row_ids[k] << "\n";
      for (std::size_t k = 0; k < sel.col_ids.size(); ++k)
        map << "col " << k << " " << sel.col_ids[k] << "\n";
      std::cout << "movielens: wrote mapping " << args.mapping << "\n";
    }
    working.emplace(std::move(sel.observed));
  } else {
    if (!args.mapping.empty())
      throw std::invalid_argument("movielens: --mapping requires --sub-rows/--sub-cols");
    working.emplace(ds.observed);
  }

  qmc::SyntheticParams meta;
  meta.rank = 0;  // unknown provenance
  meta.seed = args.seed;
  if (!args.out.empty()) {
    qmc::write_instance(args.out, *working, nullptr, meta);
    std::cout << "movielens: wrote " << args.out << "\n";
  }
  if (args.holdout > 0.0) {
    const std::string train_path = args.out_train.empty() ? "ml_train.txt" : args.out_train;
    const std::string holdout_path = args.out_holdout.empty() ? "ml_holdout.txt" : args.out_holdout;
    const auto [train, hold] = qmc::split_holdout(*working, args.holdout, args.seed);
    qmc::write_instance(train_path, train, nullptr, meta);
    qmc::write_instance(holdout_path, hold, nullptr, meta);
    std::cout << "movielens: wrote train=" << train_path << " (" << train.size()
              << ") holdout=" << holdout_path << " (" << hold.size() << ")\n";
  } else if (!args.out_train.empty() || !args.out_holdout.empty()) {
    throw std::invalid_argument("movielens: --out-train/--out-holdout require --holdout > 0");
  }
  return 0;
}

struct SolveArgs {
  std::string input;
  std::string movielens;
  double holdout = 0.0;
  std::string method = "qmc-bif";
  double lambda = -1.0;  // <0: resolve to 0.1 * sqrt(|observed|)
  double rho = 1.0;
  int rank = 10;
  double k = -1.0;  // <0: resolve to half the trace norm of the level matrix
  double outer_tol = 1e-5;
  double inner_tol = 1e-6;
  double z_tol = 1e-8;
  double tol = 1e-6;
  int max_outer = 300;
  int max_inner = 100;
  int max_z_iters = 200;
  int max_iters = 500;
  std::uint64_t seed = 0;
  bool standard_order = false;
  bool no_clamp = false;
  std::string out = "solve_results.csv";
  std::string matrix_out = "recovered.txt";
};

int run_solve(SolveArgs args) {
  if (args.input.empty() == args.movielens.empty())
    throw std::invalid_argument("solve: pass exactly one of --input and --movielens");

  std::optional<qmc::InstanceFile> instance;
  std::optional<qmc::ObservedMatrix> full;
  std::string dataset_id;
  if (!args.input.empty()) {
    instance.emplace(qmc::read_instance(args.input));
    full.emplace(instance->observed);
    dataset_id = sanitize_cell(args.input);
  } else {
    full.emplace(qmc::load_movielens(args.movielens).observed);
    dataset_id = "ml100k-h" + qmc::format_double(args.holdout);
  }

  std::optional<qmc::ObservedMatrix> train, holdout;
  if (args.holdout > 0.0) {
    auto [tr, ho] = qmc::split_holdout(*full, args.holdout, args.seed);
    train.emplace(std::move(tr));
    holdout.emplace(std::move(ho));
  } else {
    train.emplace(std::move(*full));
  }

  if (args.lambda < 0.0)
    args.lambda = 0.1 * std::sqrt(static_cast<double>(train->size()));
  if (args.k < 0.0) args.k = 0.5 * qmc::trace_norm(train->level_matrix());

  std::cout << "config: subcommand=solve input=" << args.input << " movielens=" << args.movielens
            << " holdout=" << qmc::format_double(args.holdout) << " method=" << args.method
            << " lambda=" << qmc::format_double(args.lambda)
            << " rho=" << qmc::format_double(args.rho) << " rank=" << args.rank
            << " k=" << qmc::format_double(args.k)
            << " outer_tol=" << qmc::format_double(args.outer_tol)
            << " inner_tol=" << qmc::format_double(args.inner_tol)
            << " z_tol=" << qmc::format_double(args.z_tol) << " tol=" << qmc::format_double(args.tol)
            << " max_outer=" << args.max_outer << " max_inner=" << args.max_inner
            << " max_z_iters=" << args.max_z_iters << " max_iters=" << args.max_iters
            << " seed=" << args.seed << " standard_order=" << (args.standard_order ? 1 : 0)
            << " clamp=" << (args.no_clamp ? 0 : 1) << " out=" << args.out
            << " matrix_out=" << args.matrix_out << "\n";
  std::cout << "solve: shape=" << train->rows() << "x" << train->cols()
            << " levels=" << train->scheme().num_levels() << " observed=" << train->size()
            << (holdout ? " holdout=" + std::to_string(holdout->size()) : std::string()) << "\n";

  qmc::ResultRow base;
  base.dataset = dataset_id;
  base.method = args.method;
  base.seed = args.seed;

  Eigen::MatrixXd x_hat;
  double objective = 0.0;
  bool converged = false;
  if (args.method == "qmc-bif") {
    qmc::SolverConfig cfg;
    cfg.lambda = args.lambda;
    cfg.rho = args.rho;
    cfg.rank = args.rank;
    cfg.outer_tol = args.outer_tol;
    cfg.inner_tol = args.inner_tol;
    cfg.z_tol = args.z_tol;
    cfg.max_outer = args.max_outer;
    cfg.max_inner = args.max_inner;
    cfg.max_z_iters = args.max_z_iters;
    cfg.seed = args.seed;
    cfg.multiplier_before_z = !args.standard_order;
    cfg.track_objective = false;
    qmc::SolveResult res = qmc::qmc_bif(*train, cfg);
    x_hat = std::move(res.x_star);
    converged = res.converged;
    base.lambda = args.lambda;
    base.rho = args.rho;
    base.rank = args.rank;
    base.iters = res.outer_iters;
    base.wall_time = res.wall_time_seconds;
  } else if (args.method == "trace-ball") {
    qmc::BaselineConfig cfg;
    cfg.variant = qmc::BaselineVariant::trace_ball;
    cfg.trace_radius = args.k;
    cfg.tol = args.tol;
    cfg.max_iters = args.max_iters;
    cfg.seed = args.seed;
    qmc::SolveResult res = qmc::qmc_trace_ball(*train, cfg);
    x_hat = std::move(res.x_star);
    converged = res.converged;
    base.k = args.k;
    base.iters = res.outer_iters;
    base.wall_time = res.wall_time_seconds;
  } else {
    qmc::BaselineConfig cfg;
    cfg.variant = qmc::BaselineVariant::fixed_rank;
    cfg.rank = args.rank;
    cfg.tol = args.tol;
    cfg.max_iters = args.max_iters;
    cfg.seed = args.seed;
    qmc::SolveResult res = qmc::qmc_fixed_rank(*train, cfg);
    x_hat = std::move(res.x_star);
    converged = res.converged;
    base.rank = args.rank;
    base.iters = res.outer_iters;
    base.wall_time = res.wall_time_seconds;
  }
  base.status = converged ? "ok" : "noconv";

  const qmc::ObjectiveBreakdown breakdown =
      qmc::penalized_objective(x_hat, *train, args.method == "qmc-bif" ? args.lambda : 0.0);
  objective = args.method == "qmc-bif" ? breakdown.total : breakdown.data_term;

  std::cout << "result: method=" << args.method
            << " status=" << (converged ? "converged" : "not-converged") << " iters=" << base.iters
            << " wall_time=" << qmc::format_double(base.wall_time) << "\n";
  std::cout << "result: objective=" << qmc::format_double(objective)
            << " data_term=" << qmc::format_double(breakdown.data_term)
            << " trace_norm=" << qmc::format_double(breakdown.trace_norm)
            << " lambda=" << qmc::format_double(breakdown.lambda) << "\n";

  std::vector<qmc::ResultRow> rows;
  if (instance && instance->ground_truth) {
    qmc::ResultRow row = base;
    row.metric = "relative_error";
    row.value = qmc::relative_error(x_hat, *instance->ground_truth);
    rows.push_back(row);
    std::cout << "result: relative_error=" << qmc::format_double(row.value) << "\n";
  }
  if (holdout) {
    qmc::ResultRow row = base;
    row.metric = args.no_clamp ? "rmse_raw" : "rmse";
    row.value = qmc::rmse(x_hat, *holdout, !args.no_clamp);
    rows.push_back(row);
    std::cout << "result: " << row.metric << "=" << qmc::format_double(row.value) << "\n";
  }
  {
    qmc::ResultRow row = base;
    row.metric = "objective";
    row.value = objective;
    rows.push_back(row);
    row.metric = "trace_norm";
    row.value = breakdown.trace_norm;
    rows.push_back(row);
  }

  std::ofstream csv(args.out);
  if (!csv) throw std::runtime_error("solve: cannot open " + args.out + " for writing");
  csv << qmc::kCsvHeader << "\n";
  for (const qmc::ResultRow& row : rows) csv << qmc::csv_line(row) << "\n";
  if (!csv) throw std::runtime_error("solve: write to " + args.out + " failed");

  qmc::write_matrix(args.matrix_out, x_hat);
  std::cout << "solve: wrote " << args.out << " and " << args.matrix_out << "\n";
  return 0;
}

struct BenchArgs {
  std::string spec_path;
  int workers = 1;
  std::string out;
};

int run_bench(const BenchArgs& args) {
  qmc::ExperimentSpec spec = [&] {
    std::ifstream in(args.spec_path);
    if (!in) throw std::runtime_error("bench: cannot open " + args.spec_path);
    return qmc::parse_spec(in, args.spec_path);
  }();
  const std::string out_path = !args.out.empty()       ? args.out
                               : !spec.out_path.empty() ? spec.out_path
                                                        : std::string("results.csv");

  std::cout << "config: subcommand=bench spec=" << args.spec_path << " workers=" << args.workers
            << " out=" << out_path << "\n";
  std::stringstream spec_echo;
  qmc::print_spec(spec_echo, spec);
  std::string line;
  while (std::getline(spec_echo, line)) std::cout << "spec: " << line << "\n";

  std::ofstream csv(out_path);
  if (!csv) throw std::runtime_error("bench: cannot open " + out_path + " for writing");
  qmc::BenchOptions options;
  options.workers = args.workers;
  options.progress = &std::cerr;
  const std::vector<qmc::ResultRow> rows = qmc::run_experiments(spec, csv, options);
  if (!csv) throw std::runtime_error("bench: write to " + out_path + " failed");
  std::cout << "bench: rows=" << rows.size() << " out=" << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantized low-rank matrix completion: solver, baselines, data, benchmarks"};
  app.name("qmc");
  app.require_subcommand(1);

  SynthArgs synth;
  synth.params.m = 250;
  synth.params.n = 350;
  synth.params.rank = 5;
  synth.params.num_levels = 10;
  synth.params.missing_frac = 0.1;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a synthetic quantized instance");
  synth_cmd->add_option("--m", synth.params.m, "Rows")->capture_default_str();
  synth_cmd->add_option("--n", synth.params.n, "Columns")->capture_default_str();
  synth_cmd->add_option("--rank", synth.params.rank, "Ground-truth rank")->capture_default_str();
  synth_cmd->add_option("--levels", synth.params.num_levels, "Quantization levels")
      ->capture_default_str();
  synth_cmd->add_option("--missing", synth.params.missing_frac, "Fraction of entries hidden")
      ->capture_default_str();
  synth_cmd->add_option("--noise", synth.params.noise_scale, "Logistic noise scale")
      ->capture_default_str();
  synth_cmd->add_option("--seed", synth.params.seed, "RNG seed")->capture_default_str();
  synth_cmd->add_option("--out", synth.out, "Instance file to write")->capture_default_str();
  synth_cmd->add_flag("--no-truth", synth.no_truth, "Omit the ground-truth block");

  MovielensArgs ml;
  CLI::App* ml_cmd = app.add_subcommand("movielens", "Validate and export MovieLens-100k data");
  ml_cmd->add_option("--data", ml.data, "Path to u.data")->required();
  ml_cmd->add_option("--holdout", ml.holdout, "Holdout fraction (0 = no split)")
      ->capture_default_str();
  ml_cmd->add_option("--seed", ml.seed, "Split seed")->capture_default_str();
  ml_cmd->add_option("--sub-rows", ml.sub_rows, "Keep this many densest rows (0 = all)")
      ->capture_default_str();
  ml_cmd->add_option("--sub-cols", ml.sub_cols, "Keep this many densest columns (0 = all)")
      ->capture_default_str();
  ml_cmd->add_option("--out", ml.out, "Write the (filtered) dataset as an instance file");
  ml_cmd->add_option("--out-train", ml.out_train, "Train-split instance file");
  ml_cmd->add_option("--out-holdout", ml.out_holdout, "Holdout-split instance file");
  ml_cmd->add_option("--mapping", ml.mapping, "Write submatrix index mapping here");

  SolveArgs solve;
  CLI::App* solve_cmd = app.add_subcommand("solve", "Run one method on one instance");
  solve_cmd->add_option("--input", solve.input, "Instance file");
  solve_cmd->add_option("--movielens", solve.movielens, "u.data path (instead of --input)");
  solve_cmd->add_option("--holdout", solve.holdout, "Holdout fraction for RMSE (0 = none)")
      ->capture_default_str();
  solve_cmd->add_option("--method", solve.method, "Solver")
      ->check(CLI::IsMember({"qmc-bif", "trace-ball", "fixed-rank"}))
      ->capture_default_str();
  solve_cmd->add_option("--lambda", solve.lambda,
                        "Trace-norm weight (default 0.1*sqrt(|observed|))");
  solve_cmd->add_option("--rho", solve.rho, "ALM penalty")->capture_default_str();
  solve_cmd->add_option("--rank", solve.rank, "Factor width (qmc-bif, fixed-rank)")
      ->capture_default_str();
  solve_cmd->add_option("--k", solve.k,
                        "Trace-ball radius (default half the level-matrix trace norm)");
  solve_cmd->add_option("--outer-tol", solve.outer_tol, "qmc-bif outer tolerance")
      ->capture_default_str();
  solve_cmd->add_option("--inner-tol", solve.inner_tol, "qmc-bif inner tolerance")
      ->capture_default_str();
  solve_cmd->add_option("--z-tol", solve.z_tol, "qmc-bif Z-subproblem tolerance")
      ->capture_default_str();
  solve_cmd->add_option("--tol", solve.tol, "Baseline relative-change tolerance")
      ->capture_default_str();
  solve_cmd->add_option("--max-outer", solve.max_outer, "qmc-bif outer iteration cap")
      ->capture_default_str();
  solve_cmd->add_option("--max-inner", solve.max_inner, "qmc-bif inner sweep cap")
      ->capture_default_str();
  solve_cmd->add_option("--max-z-iters", solve.max_z_iters, "qmc-bif per-entry Z cap")
      ->capture_default_str();
  solve_cmd->add_option("--max-iters", solve.max_iters, "Baseline iteration cap")
      ->capture_default_str();
  solve_cmd->add_option("--seed", solve.seed, "RNG seed (init and split)")->capture_default_str();
  solve_cmd->add_flag("--standard-order", solve.standard_order,
                      "Update the multiplier after the Z subproblem instead of before");
  solve_cmd->add_flag("--no-clamp", solve.no_clamp, "Score RMSE without clamping to [1, levels]");
  solve_cmd->add_option("--out", solve.out, "Result CSV")->capture_default_str();
  solve_cmd->add_option("--matrix-out", solve.matrix_out, "Recovered matrix file")
      ->capture_default_str();

  BenchArgs bench;
  CLI::App* bench_cmd = app.add_subcommand("bench", "Run an experiment grid from a spec file");
  bench_cmd->add_option("--spec", bench.spec_path, "Experiment spec file")->required();
  bench_cmd->add_option("--workers", bench.workers, "Concurrent grid points")
      ->capture_default_str();
  bench_cmd->add_option("--out", bench.out, "Result CSV (overrides the spec's `out`)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth_cmd) return run_synth(synth);
    if (*ml_cmd) return run_movielens(ml);
    if (*solve_cmd) return run_solve(solve);
    if (*bench_cmd) return run_bench(bench);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
