#include <doctest.h>

#include <random>

#include "hfr/error.hpp"
#include "hfr/hierarchy.hpp"
#include "hfr/hts_baseline.hpp"

using namespace hfr;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = normal(rng);
  return m;
}

const std::vector<HierarchyDag>& dags() {
  static const std::vector<HierarchyDag> all{
      figure1_hierarchy(), {3, {{0, {1, 2}}}}, {6, {{0, {1, 2}}, {1, {3, 4}}, {2, {4, 5}}}}};
  return all;
}

}  // namespace

TEST_CASE("cg agrees with a dense solve") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 2 + trial % 9;
    const Eigen::MatrixXd b = random_matrix(n, n, rng);
    const Eigen::MatrixXd a = b * b.transpose() + Eigen::MatrixXd::Identity(n, n);
    const Eigen::VectorXd rhs = random_matrix(n, 1, rng);
    const CgResult r = cg_solve([&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return a * v; }, rhs,
                                CgConfig{1000, 1e-12});
    const Eigen::VectorXd dense = a.ldlt().solve(rhs);
    CHECK((r.x - dense).norm() / dense.norm() < 1e-9);
    CHECK(r.relative_residual <= 1e-12);
  }
  const CgResult zero = cg_solve([](const Eigen::VectorXd& v) -> Eigen::VectorXd { return v; },
                                 Eigen::VectorXd::Zero(3), CgConfig{});
  CHECK(zero.x.isZero());
  CHECK(zero.iterations == 0);
}

TEST_CASE("cg reports non-convergence") {
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(5, 5);
  a.diagonal() << 1, 10, 100, 1000, 10000;
  try {
    cg_solve([&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return a * v; }, Eigen::VectorXd::Ones(5),
             CgConfig{1, 1e-12});
    FAIL("expected NotConverged");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotConverged);
  }
}

TEST_CASE("ols reconciliation equals the pseudo-inverse projection") {
  std::mt19937_64 rng(2);
  for (const auto& dag : dags()) {
    const Eigen::MatrixXd s = summation_matrix(dag);
    const Eigen::MatrixXd proj = s * s.completeOrthogonalDecomposition().pseudoInverse();
    for (int trial = 0; trial < 20; ++trial) {
      const Eigen::VectorXd y = random_matrix(s.rows(), 1, rng);
      const Eigen::VectorXd r = reconcile(s, y, {}, CgConfig{});
      CHECK((r - proj * y).cwiseAbs().maxCoeff() < 1e-10);
      Eigen::MatrixXd col(s.rows(), 1);
      col.col(0) = r;
      CHECK(reconciliation_residuals(dag, col, 0, 1).cwiseAbs().maxCoeff() < 1e-10);
      // Projection is idempotent.
      CHECK((reconcile(s, r, {}, CgConfig{}) - r).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("three-node example") {
  const Eigen::MatrixXd s = summation_matrix({3, {{0, {1, 2}}}});
  const Eigen::VectorXd r = reconcile(s, Eigen::Vector3d(5, 2, 2), {}, CgConfig{});
  // Residual 1 spread over the constraint direction (1, -1, -1) / 3.
  CHECK(r(0) == doctest::Approx(14.0 / 3.0));
  CHECK(r(1) == doctest::Approx(7.0 / 3.0));
  CHECK(r(2) == doctest::Approx(7.0 / 3.0));
}

TEST_CASE("coherent forecasts are left unchanged") {
  std::mt19937_64 rng(3);
  for (const auto& dag : dags()) {
    const Eigen::MatrixXd s = summation_matrix(dag);
    const Eigen::MatrixXd coherent = s * random_matrix(s.cols(), 15, rng);
    const Eigen::MatrixXd r = reconcile_panel(s, coherent, {}, CgConfig{});
    CHECK((r - coherent).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("ols result is the closest coherent point") {
  std::mt19937_64 rng(4);
  const auto dag = figure1_hierarchy();
  const Eigen::MatrixXd s = summation_matrix(dag);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd y = random_matrix(7, 1, rng);
    const Eigen::VectorXd r = reconcile(s, y, {}, CgConfig{});
    const double best = (r - y).squaredNorm();
    for (int k = 0; k < 50; ++k) {
      const Eigen::VectorXd other = s * random_matrix(4, 1, rng);
      CHECK((other - y).squaredNorm() >= best - 1e-12);
    }
    // The correction is orthogonal to the coherent subspace.
    CHECK((s.transpose() * (y - r)).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("wls reconciliation") {
  std::mt19937_64 rng(5);
  const auto dag = figure1_hierarchy();
  const Eigen::MatrixXd s = summation_matrix(dag);

  ReconcilerWeights w;
  w.mode = ReconcileMode::wls_var;
  w.diag_weights = Eigen::VectorXd::Constant(7, 3.0);
  const Eigen::VectorXd y = random_matrix(7, 1, rng);
  CHECK((reconcile(s, y, w, CgConfig{}) - reconcile(s, y, {}, CgConfig{})).cwiseAbs().maxCoeff() < 1e-10);

  // Dense generalized least squares oracle.
  w.diag_weights = (random_matrix(7, 1, rng).array().abs() + 0.1).matrix();
  const Eigen::MatrixXd w_inv = w.diag_weights.cwiseInverse().asDiagonal();
  const Eigen::VectorXd oracle = s * (s.transpose() * w_inv * s).ldlt().solve(s.transpose() * w_inv * y);
  CHECK((reconcile(s, y, w, CgConfig{}) - oracle).cwiseAbs().maxCoeff() < 1e-10);

  // Weights from residuals: sample variances.
  const Eigen::MatrixXd res = random_matrix(7, 40, rng);
  const ReconcilerWeights est = wls_from_residuals(res);
  for (Eigen::Index i = 0; i < 7; ++i) {
    const double mean = res.row(i).mean();
    const double var = (res.row(i).array() - mean).square().sum() / 39.0;
    CHECK(est.diag_weights(i) == doctest::Approx(var).epsilon(1e-12));
  }

  CHECK_THROWS_AS(wls_from_residuals(random_matrix(7, 1, rng)), Error);
  w.diag_weights(2) = 0.0;
  CHECK_THROWS_AS(reconcile(s, y, w, CgConfig{}), Error);
  w.diag_weights.resize(3);
  CHECK_THROWS_AS(reconcile(s, y, w, CgConfig{}), Error);
  CHECK_THROWS_AS(reconcile(s, Eigen::VectorXd::Zero(6), {}, CgConfig{}), Error);
  CHECK_THROWS_AS(parse_reconcile_mode("mint"), Error);
}
