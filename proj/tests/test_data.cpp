#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qmc/data.hpp"
#include "qmc/likelihood.hpp"
#include "qmc/quantization.hpp"

using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

qmc::SyntheticParams base_params() {
  qmc::SyntheticParams p;
  p.m = 30;
  p.n = 20;
  p.rank = 3;
  p.num_levels = 10;
  p.missing_frac = 0.1;
  p.noise_scale = 0.0;
  p.seed = 5;
  return p;
}

int numerical_rank(const Eigen::MatrixXd& x, double rel_tol = 1e-8) {
  const Eigen::VectorXd sv = Eigen::BDCSVD<Eigen::MatrixXd>(x).singularValues();
  int r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > rel_tol * sv(0)) ++r;
  return r;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

// A structurally valid stand-in for u.data: 100,000 distinct (user, item)
// pairs covering all 943 users with at least 20 ratings each.
void write_fake_movielens(const std::filesystem::path& path) {
  std::ofstream out(path);
  REQUIRE(out.good());
  long written = 0;
  for (long user = 1; user <= 943; ++user) {
    const long count = user <= 42 ? 107 : 106;
    for (long k = 0; k < count; ++k) {
      const long item = ((7 * user + 13 * k) % 1682) + 1;
      const long rating = ((user + k) % 5) + 1;
      out << user << "\t" << item << "\t" << rating << "\t" << 874965758 + k << "\n";
      ++written;
    }
  }
  REQUIRE(written == 100000);
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  REQUIRE(out.good());
  for (const std::string& line : lines) out << line << "\n";
}

}  // namespace

TEST_CASE("synthetic instance honors counts, range, and rank") {
  const qmc::SyntheticInstance inst = qmc::generate_synthetic(base_params());
  const std::int64_t total = 30 * 20;
  const std::int64_t hidden = 60;  // ceil(0.1 * 600)
  CHECK(inst.observed.size() == total - hidden);
  CHECK(inst.mask.count() == hidden);

  CHECK_THAT(inst.ground_truth.minCoeff(), WithinAbs(1.0, 1e-10));
  CHECK_THAT(inst.ground_truth.maxCoeff(), WithinAbs(10.0, 1e-10));
  CHECK(numerical_rank(inst.ground_truth) <= 3 + 1);

  std::set<std::pair<Eigen::Index, Eigen::Index>> observed_at;
  for (const qmc::Observation& e : inst.observed.entries()) observed_at.insert({e.row, e.col});
  for (Eigen::Index i = 0; i < 30; ++i)
    for (Eigen::Index j = 0; j < 20; ++j)
      CHECK(observed_at.count({i, j}) == (inst.mask(i, j) ? 0u : 1u));
}

TEST_CASE("noiseless synthetic levels are rounded ground truth") {
  const qmc::SyntheticInstance inst = qmc::generate_synthetic(base_params());
  for (const qmc::Observation& e : inst.observed.entries())
    CHECK(e.level == std::lround(inst.ground_truth(e.row, e.col)));
}

TEST_CASE("synthetic generation is deterministic per seed") {
  const qmc::SyntheticInstance a = qmc::generate_synthetic(base_params());
  const qmc::SyntheticInstance b = qmc::generate_synthetic(base_params());
  CHECK(a.ground_truth == b.ground_truth);
  REQUIRE(a.observed.size() == b.observed.size());
  for (std::size_t k = 0; k < a.observed.entries().size(); ++k) {
    CHECK(a.observed.entries()[k].row == b.observed.entries()[k].row);
    CHECK(a.observed.entries()[k].col == b.observed.entries()[k].col);
    CHECK(a.observed.entries()[k].level == b.observed.entries()[k].level);
  }

  qmc::SyntheticParams other = base_params();
  other.seed = 6;
  CHECK(qmc::generate_synthetic(other).ground_truth != a.ground_truth);
}

TEST_CASE("fully observed synthetic instance") {
  qmc::SyntheticParams p = base_params();
  p.missing_frac = 0.0;
  const qmc::SyntheticInstance inst = qmc::generate_synthetic(p);
  CHECK(inst.observed.size() == 600);
  CHECK(inst.mask.count() == 0);
}

TEST_CASE("logistic observation noise perturbs some levels") {
  qmc::SyntheticParams p = base_params();
  p.noise_scale = 1.0;
  const qmc::SyntheticInstance noisy = qmc::generate_synthetic(p);
  const qmc::SyntheticInstance clean = qmc::generate_synthetic(base_params());
  CHECK(noisy.ground_truth == clean.ground_truth);

  int differing = 0;
  const Eigen::MatrixXd clean_levels = clean.observed.level_matrix();
  for (const qmc::Observation& e : noisy.observed.entries()) {
    CHECK(e.level >= 1);
    CHECK(e.level <= 10);
    if (clean_levels(e.row, e.col) != 0.0 &&
        e.level != static_cast<int>(clean_levels(e.row, e.col)))
      ++differing;
  }
  CHECK(differing > 0);
}

TEST_CASE("synthetic parameter validation") {
  qmc::SyntheticParams p = base_params();
  p.rank = 0;
  CHECK_THROWS_AS(qmc::generate_synthetic(p), std::invalid_argument);
  p = base_params();
  p.rank = 21;
  CHECK_THROWS_AS(qmc::generate_synthetic(p), std::invalid_argument);
  p = base_params();
  p.num_levels = 1;
  CHECK_THROWS_AS(qmc::generate_synthetic(p), std::invalid_argument);
  p = base_params();
  p.missing_frac = 1.0;
  CHECK_THROWS_AS(qmc::generate_synthetic(p), std::invalid_argument);
  p = base_params();
  p.missing_frac = -0.1;
  CHECK_THROWS_AS(qmc::generate_synthetic(p), std::invalid_argument);
  p = base_params();
  p.noise_scale = -1.0;
  CHECK_THROWS_AS(qmc::generate_synthetic(p), std::invalid_argument);
}

TEST_CASE("holdout split partitions the observations") {
  const qmc::SyntheticInstance inst = qmc::generate_synthetic(base_params());
  const auto [train, holdout] = qmc::split_holdout(inst.observed, 0.1, 11);
  CHECK(holdout.size() == 54);  // llround(0.1 * 540)
  CHECK(train.size() == 486);
  CHECK(train.rows() == inst.observed.rows());
  CHECK(holdout.cols() == inst.observed.cols());

  std::set<std::pair<Eigen::Index, Eigen::Index>> train_at, holdout_at, all_at;
  for (const qmc::Observation& e : train.entries()) train_at.insert({e.row, e.col});
  for (const qmc::Observation& e : holdout.entries()) holdout_at.insert({e.row, e.col});
  for (const qmc::Observation& e : inst.observed.entries()) all_at.insert({e.row, e.col});
  CHECK(train_at.size() + holdout_at.size() == all_at.size());
  for (const auto& rc : holdout_at) CHECK(train_at.count(rc) == 0);
  for (const auto& rc : all_at) CHECK(train_at.count(rc) + holdout_at.count(rc) == 1);

  const auto [train2, holdout2] = qmc::split_holdout(inst.observed, 0.1, 11);
  CHECK(train2.level_matrix() == train.level_matrix());
  CHECK(holdout2.level_matrix() == holdout.level_matrix());

  const auto [train3, holdout3] = qmc::split_holdout(inst.observed, 0.1, 12);
  CHECK(holdout3.level_matrix() != holdout.level_matrix());
}

TEST_CASE("degenerate holdout fractions are rejected") {
  const qmc::QuantizationScheme scheme = qmc::QuantizationScheme::uniform(3);
  std::vector<qmc::Observation> entries{{0, 0, 1}, {0, 1, 2}, {1, 0, 3}};
  const qmc::ObservedMatrix obs(2, 2, std::move(entries), scheme);
  CHECK_THROWS_AS(qmc::split_holdout(obs, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(qmc::split_holdout(obs, 1.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(qmc::split_holdout(obs, 0.1, 1), std::invalid_argument);   // rounds to 0
  CHECK_THROWS_AS(qmc::split_holdout(obs, 0.95, 1), std::invalid_argument);  // rounds to all
}

TEST_CASE("movielens loader accepts a structurally valid file") {
  const std::filesystem::path path = temp_file("qmc_test_udata_valid.tsv");
  write_fake_movielens(path);
  const qmc::RatingsDataset ds = qmc::load_movielens(path.string());
  CHECK(ds.observed.rows() == 943);
  CHECK(ds.observed.cols() == 1682);
  CHECK(ds.observed.size() == 100000);
  CHECK(ds.observed.scheme().num_levels() == 5);
  for (int c : ds.user_counts) CHECK(c >= 20);
  long item_total = 0;
  for (int c : ds.item_counts) item_total += c;
  CHECK(item_total == 100000);
  std::filesystem::remove(path);
}

TEST_CASE("movielens loader reports malformed lines by number") {
  const std::filesystem::path path = temp_file("qmc_test_udata_bad.tsv");

  write_lines(path, {"1\t5\t3\t100", "2\t9\t6\t101", "3\t4\t2\t102"});
  CHECK_THROWS_WITH(qmc::load_movielens(path.string()),
                    ContainsSubstring(":2:") && ContainsSubstring("rating 6"));

  write_lines(path, {"1\t5\t3", "2\t9\t4\t101"});
  CHECK_THROWS_WITH(qmc::load_movielens(path.string()),
                    ContainsSubstring(":1:") && ContainsSubstring("4 tab-separated"));

  write_lines(path, {"1\t5\t3\t100", "1\t5\t4\t101"});
  CHECK_THROWS_WITH(qmc::load_movielens(path.string()),
                    ContainsSubstring(":2:") && ContainsSubstring("duplicate"));

  write_lines(path, {"944\t5\t3\t100"});
  CHECK_THROWS_WITH(qmc::load_movielens(path.string()),
                    ContainsSubstring(":1:") && ContainsSubstring("out of range"));

  write_lines(path, {"1\tx\t3\t100"});
  CHECK_THROWS_WITH(qmc::load_movielens(path.string()),
                    ContainsSubstring(":1:") && ContainsSubstring("integer"));

  write_lines(path, {});
  CHECK_THROWS_WITH(qmc::load_movielens(path.string()),
                    ContainsSubstring("expected 100000 records, got 0"));

  CHECK_THROWS_WITH(qmc::load_movielens("/nonexistent/u.data"),
                    ContainsSubstring("cannot open"));
  std::filesystem::remove(path);
}

TEST_CASE("densest submatrix keeps the highest-count rows and columns") {
  const qmc::QuantizationScheme scheme = qmc::QuantizationScheme::uniform(5);
  // Row counts 1,3,2,1; the top two rows are 1 and 2.
  std::vector<qmc::Observation> entries{{0, 0, 1}, {1, 0, 2}, {1, 1, 3}, {1, 4, 4},
                                        {2, 1, 5}, {2, 2, 1}, {3, 3, 2}};
  const qmc::ObservedMatrix obs(4, 5, std::move(entries), scheme);

  const qmc::SubmatrixSelection sel = qmc::densest_submatrix(obs, 2, 3);
  CHECK(sel.row_ids == std::vector<Eigen::Index>{1, 2});
  // Column counts: c0=2, c1=2, c2=1, c3=1, c4=1; ties at 1 favor lower index.
  CHECK(sel.col_ids == std::vector<Eigen::Index>{0, 1, 2});
  CHECK(sel.observed.rows() == 2);
  CHECK(sel.observed.cols() == 3);

  std::set<std::tuple<Eigen::Index, Eigen::Index, int>> got;
  for (const qmc::Observation& e : sel.observed.entries()) got.insert({e.row, e.col, e.level});
  const std::set<std::tuple<Eigen::Index, Eigen::Index, int>> expect{
      {0, 0, 2}, {0, 1, 3}, {1, 1, 5}, {1, 2, 1}};
  CHECK(got == expect);

  CHECK_THROWS_AS(qmc::densest_submatrix(obs, 0, 3), std::invalid_argument);
  CHECK_THROWS_AS(qmc::densest_submatrix(obs, 2, 6), std::invalid_argument);
}

TEST_CASE("densest submatrix selection is a top-k by count") {
  const qmc::SyntheticInstance inst = qmc::generate_synthetic(base_params());
  const qmc::SubmatrixSelection sel = qmc::densest_submatrix(inst.observed, 10, 8);

  std::vector<long> row_count(30, 0), col_count(20, 0);
  for (const qmc::Observation& e : inst.observed.entries()) {
    ++row_count[static_cast<std::size_t>(e.row)];
    ++col_count[static_cast<std::size_t>(e.col)];
  }
  const auto check_topk = [](const std::vector<long>& counts,
                             const std::vector<Eigen::Index>& kept) {
    std::set<Eigen::Index> kept_set(kept.begin(), kept.end());
    long min_kept = std::numeric_limits<long>::max();
    long max_dropped = std::numeric_limits<long>::min();
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (kept_set.count(static_cast<Eigen::Index>(i)))
        min_kept = std::min(min_kept, counts[i]);
      else
        max_dropped = std::max(max_dropped, counts[i]);
    }
    CHECK(min_kept >= max_dropped);
  };
  check_topk(row_count, sel.row_ids);
  check_topk(col_count, sel.col_ids);
}

TEST_CASE("instance files round-trip exactly") {
  const qmc::SyntheticInstance inst = qmc::generate_synthetic(base_params());
  std::stringstream buffer;
  qmc::write_instance(buffer, inst.observed, &inst.ground_truth, inst.params);

  const qmc::InstanceFile loaded = qmc::read_instance(buffer, "buffer");
  CHECK(loaded.params.m == 30);
  CHECK(loaded.params.n == 20);
  CHECK(loaded.params.num_levels == 10);
  CHECK(loaded.params.rank == 3);
  CHECK(loaded.params.missing_frac == 0.1);
  CHECK(loaded.params.seed == 5);
  REQUIRE(loaded.ground_truth.has_value());
  CHECK(*loaded.ground_truth == inst.ground_truth);
  REQUIRE(loaded.observed.size() == inst.observed.size());
  for (std::size_t k = 0; k < inst.observed.entries().size(); ++k) {
    CHECK(loaded.observed.entries()[k].row == inst.observed.entries()[k].row);
    CHECK(loaded.observed.entries()[k].col == inst.observed.entries()[k].col);
    CHECK(loaded.observed.entries()[k].level == inst.observed.entries()[k].level);
  }
}

TEST_CASE("instance files without ground truth") {
  const qmc::SyntheticInstance inst = qmc::generate_synthetic(base_params());
  std::stringstream buffer;
  qmc::write_instance(buffer, inst.observed, nullptr, inst.params);
  const qmc::InstanceFile loaded = qmc::read_instance(buffer, "buffer");
  CHECK_FALSE(loaded.ground_truth.has_value());
  CHECK(loaded.observed.size() == inst.observed.size());
}

TEST_CASE("instance reader rejects malformed input") {
  const auto read_text = [](const std::string& text) {
    std::stringstream in(text);
    return qmc::read_instance(in, "buffer");
  };
  CHECK_THROWS_WITH(read_text(""), ContainsSubstring("empty file"));
  CHECK_THROWS_WITH(read_text("bogus-header\n"), ContainsSubstring("qmc-instance"));
  CHECK_THROWS_WITH(read_text("qmc-instance m=2 n=2 levels=3 observed=2 bad=1\n0 0 1\n0 1 2\n"),
                    ContainsSubstring("unknown header key"));
  CHECK_THROWS_WITH(read_text("qmc-instance m=2 n=2 levels=3 observed=3\n0 0 1\n0 1 2\n"),
                    ContainsSubstring("truncated"));
  CHECK_THROWS_WITH(read_text("qmc-instance m=2 n=2 levels=3 observed=1\n0 0\n"),
                    ContainsSubstring("expected 'i j level'"));
  CHECK_THROWS_WITH(read_text("qmc-instance m=2 n=2 levels=3 observed=1 truth=1\n0 0 1\nnope\n"),
                    ContainsSubstring("expected literal 'truth'"));
  CHECK_THROWS_WITH(
      read_text("qmc-instance m=2 n=2 levels=3 observed=1 truth=1\n0 0 1\ntruth\n1 2\n3\n"),
      ContainsSubstring("ground-truth row"));
  CHECK_THROWS_WITH(read_text("qmc-instance m=2 n=2 levels=3 observed=1\n0 0 9\n"),
                    ContainsSubstring("level"));
}

TEST_CASE("single-level instances round-trip with a whole-line scheme") {
  const qmc::QuantizationScheme whole({-qmc::kInf, qmc::kInf});
  std::vector<qmc::Observation> entries{{0, 0, 1}, {1, 1, 1}};
  const qmc::ObservedMatrix obs(2, 2, std::move(entries), whole);
  std::stringstream buffer;
  qmc::write_instance(buffer, obs, nullptr, {});
  const qmc::InstanceFile loaded = qmc::read_instance(buffer, "buffer");
  CHECK(loaded.observed.scheme().num_levels() == 1);
  CHECK(loaded.observed.size() == 2);
}

TEST_CASE("matrix files round-trip bitwise") {
  Eigen::MatrixXd x(3, 4);
  x << 0.0, -1.5, 1e300, 3.14159265358979312,
      -2.2250738585072014e-308, 7.0, -0.1, 0.1,
      123456789.123456789, -9.9e-99, 4.0, 1.0 / 3.0;
  std::stringstream buffer;
  qmc::write_matrix(buffer, x);
  const Eigen::MatrixXd y = qmc::read_matrix(buffer, "buffer");
  REQUIRE(y.rows() == 3);
  REQUIRE(y.cols() == 4);
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) CHECK(y(i, j) == x(i, j));
}

TEST_CASE("matrix reader rejects malformed input") {
  const auto read_text = [](const std::string& text) {
    std::stringstream in(text);
    return qmc::read_matrix(in, "buffer");
  };
  CHECK_THROWS_WITH(read_text(""), ContainsSubstring("empty file"));
  CHECK_THROWS_WITH(read_text("qmc-matrix 2\n"), ContainsSubstring("qmc-matrix"));
  CHECK_THROWS_WITH(read_text("qmc-matrix 2 2\n1 2\n"), ContainsSubstring("truncated"));
  CHECK_THROWS_WITH(read_text("qmc-matrix 1 3\n1 2\n"), ContainsSubstring("row has 2 values"));
  CHECK_THROWS_WITH(read_text("qmc-matrix 1 1\nfoo\n"), ContainsSubstring("number"));
  CHECK_THROWS_WITH(read_text("qmc-matrix 0 1\n"), ContainsSubstring("positive"));
}

TEST_CASE("instance files written to disk are readable back") {
  const std::filesystem::path path = temp_file("qmc_test_instance.txt");
  const qmc::SyntheticInstance inst = qmc::generate_synthetic(base_params());
  qmc::write_instance(path.string(), inst);
  const qmc::InstanceFile loaded = qmc::read_instance(path.string());
  CHECK(loaded.observed.size() == inst.observed.size());
  REQUIRE(loaded.ground_truth.has_value());
  CHECK(*loaded.ground_truth == inst.ground_truth);
  std::filesystem::remove(path);

  CHECK_THROWS_WITH(qmc::read_instance("/nonexistent/instance.txt"),
                    ContainsSubstring("cannot open"));
}
