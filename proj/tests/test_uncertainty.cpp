#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "hfr/error.hpp"
#include "hfr/io.hpp"
#include "hfr/uncertainty.hpp"

using namespace hfr;
namespace fs = std::filesystem;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = normal(rng);
  return m;
}

Eigen::MatrixXd random_spd(Eigen::Index n, std::mt19937_64& rng) {
  const Eigen::MatrixXd b = random_matrix(n, n, rng);
  return b * b.transpose() / static_cast<double>(n) + 0.1 * Eigen::MatrixXd::Identity(n, n);
}

// a^T sigma a with a = e_parent - sum of e_child.
double quadratic_form(const Eigen::MatrixXd& sigma, const AggregationConstraint& c) {
  Eigen::VectorXd a = Eigen::VectorXd::Zero(sigma.rows());
  a(static_cast<Eigen::Index>(c.parent)) = 1.0;
  for (NodeId ch : c.children) a(static_cast<Eigen::Index>(ch)) -= 1.0;
  return a.dot(sigma * a);
}

}  // namespace

TEST_CASE("error covariance estimate") {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd r = random_matrix(4, 30, rng);
  const ErrorCovariance cov = estimate_error_covariance(r);
  for (Eigen::Index i = 0; i < 4; ++i) {
    for (Eigen::Index j = 0; j < 4; ++j) {
      const double mi = r.row(i).mean(), mj = r.row(j).mean();
      double s = 0.0;
      for (Eigen::Index t = 0; t < 30; ++t) s += (r(i, t) - mi) * (r(j, t) - mj);
      s /= 29.0;
      if (i == j) s += kCovarianceJitter;
      CHECK(cov.sigma(i, j) == doctest::Approx(s).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(estimate_error_covariance(random_matrix(4, 1, rng)), Error);
}

TEST_CASE("reconciliation variance examples") {
  ErrorCovariance cov{Eigen::MatrixXd::Identity(3, 3)};
  CHECK(reconciliation_variance(cov, {0, {1, 2}}) == 3.0);

  // Parent perfectly correlated with the sum of its children.
  Eigen::MatrixXd s(3, 3);
  s << 2, 1, 1, 1, 1, 0, 1, 0, 1;
  CHECK(reconciliation_variance({s}, {0, {1, 2}}) == doctest::Approx(0.0));

  std::mt19937_64 rng(2);
  const auto dag = figure1_hierarchy();
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd sigma = random_spd(7, rng);
    for (const auto& c : dag.constraints) {
      CHECK(reconciliation_variance({sigma}, c) == doctest::Approx(quadratic_form(sigma, c)).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(reconciliation_variance(cov, {0, {1, 5}}), Error);
}

TEST_CASE("reconciliation variance matches monte carlo") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  const auto dag = figure1_hierarchy();
  for (int trial = 0; trial < 3; ++trial) {
    const Eigen::MatrixXd sigma = random_spd(7, rng);
    const Eigen::MatrixXd l = sigma.llt().matrixL();
    const int samples = 200000;
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(3);
    Eigen::VectorXd z(7);
    for (int s = 0; s < samples; ++s) {
      for (Eigen::Index i = 0; i < 7; ++i) z(i) = normal(rng);
      const Eigen::VectorXd e = l * z;
      for (std::size_t c = 0; c < 3; ++c) {
        double r = e(static_cast<Eigen::Index>(dag.constraints[c].parent));
        for (NodeId ch : dag.constraints[c].children) r -= e(static_cast<Eigen::Index>(ch));
        acc(static_cast<Eigen::Index>(c)) += r * r;
      }
    }
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(acc(static_cast<Eigen::Index>(c)) / samples ==
            doctest::Approx(reconciliation_variance({sigma}, dag.constraints[c])).epsilon(0.02));
    }
  }
}

TEST_CASE("half-cauchy density") {
  CHECK(half_cauchy_logpdf(0.0, 1.0) == doctest::Approx(std::log(2.0 / std::numbers::pi)));
  CHECK(half_cauchy_logpdf(1.0, 1.0) == doctest::Approx(std::log(1.0 / std::numbers::pi)));
  CHECK(std::isinf(half_cauchy_logpdf(-0.1, 1.0)));

  // Simpson on [0, 1000 s] plus the analytic tail mass.
  for (double scale : {0.5, 1.0, 3.0}) {
    const double upper = 1000.0 * scale;
    const int n = 2000000;
    const double h = upper / n;
    double sum = std::exp(half_cauchy_logpdf(0.0, scale)) + std::exp(half_cauchy_logpdf(upper, scale));
    for (int k = 1; k < n; ++k) sum += (k % 2 ? 4.0 : 2.0) * std::exp(half_cauchy_logpdf(k * h, scale));
    const double tail = 1.0 - 2.0 / std::numbers::pi * std::atan(1000.0);
    CHECK(sum * h / 3.0 + tail == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("lkj density") {
  CHECK(lkj_logpdf_unnormalized(Eigen::MatrixXd::Identity(4, 4), 2.0) == doctest::Approx(0.0));
  Eigen::Matrix2d c;
  c << 1, 0.6, 0.6, 1;
  CHECK(lkj_logpdf_unnormalized(c, 3.0) == doctest::Approx(2.0 * std::log(1 - 0.36)).epsilon(1e-12));
  CHECK(lkj_logpdf_unnormalized(c, 1.0) == 0.0);

  auto code = [](const Eigen::MatrixXd& m) {
    try {
      lkj_logpdf_unnormalized(m, 2.0);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidConfig;
  };
  Eigen::Matrix2d bad_diag;
  bad_diag << 2, 0, 0, 1;
  CHECK(code(bad_diag) == ErrorCode::NotCorrelation);
  Eigen::Matrix2d asym;
  asym << 1, 0.2, 0.3, 1;
  CHECK(code(asym) == ErrorCode::NotCorrelation);
  CHECK(code(Eigen::MatrixXd::Ones(2, 3)) == ErrorCode::NotCorrelation);
  Eigen::Matrix3d indefinite;
  indefinite << 1, 0.9, -0.9, 0.9, 1, 0.9, -0.9, 0.9, 1;
  CHECK(code(indefinite) == ErrorCode::NotPositiveDefinite);
}

TEST_CASE("joint gaussian log-likelihood against the dense formula") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::MatrixXd sigma = random_spd(5, rng);
    const Eigen::MatrixXd r = random_matrix(5, 12, rng);
    const Eigen::MatrixXd inv = sigma.inverse();
    const double logdet = std::log(sigma.determinant());
    double expect = 0.0;
    for (Eigen::Index t = 0; t < 12; ++t) {
      expect += -0.5 * (5 * std::log(2 * std::numbers::pi) + logdet + r.col(t).dot(inv * r.col(t)));
    }
    CHECK(joint_gaussian_loglik(r, {sigma}) == doctest::Approx(expect).epsilon(1e-10));
  }
  CHECK_THROWS_AS(joint_gaussian_loglik(Eigen::MatrixXd::Zero(4, 3), {Eigen::MatrixXd::Identity(5, 5)}), Error);
  CHECK_THROWS_AS(joint_gaussian_loglik(Eigen::MatrixXd::Zero(2, 3), {-Eigen::MatrixXd::Identity(2, 2)}), Error);
}

TEST_CASE("log prior combines its pieces") {
  std::mt19937_64 rng(5);
  const Eigen::MatrixXd sigma = random_spd(3, rng);
  const PriorConfig prior{2.5, 1.5, 4.0};
  double expect = 0.0;
  for (Eigen::Index i = 0; i < 3; ++i) expect += half_cauchy_logpdf(std::sqrt(sigma(i, i)), 1.5);
  const Eigen::MatrixXd corr = correlation_from_covariance(sigma);
  expect += 1.5 * std::log(corr.determinant());
  expect += half_cauchy_logpdf(0.3, 0.25);
  CHECK(log_prior({sigma}, 0.3, prior) == doctest::Approx(expect).epsilon(1e-12));
  CHECK_THROWS_AS(log_prior({sigma}, 0.3, {0.0, 1.0, 1.0}), Error);
}

TEST_CASE("normal quantile inverts the normal cdf") {
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-13));
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0));
  for (double p : {1e-10, 1e-4, 0.01, 0.02425, 0.1, 0.3, 0.7, 0.9, 0.99, 1 - 1e-6}) {
    const double x = normal_quantile(p);
    CHECK(0.5 * std::erfc(-x / std::numbers::sqrt2) == doctest::Approx(p).epsilon(1e-10));
    CHECK(normal_quantile(1 - p) == doctest::Approx(-x).epsilon(1e-7));
  }
  CHECK(std::isinf(normal_quantile(0.0)));
  CHECK_THROWS_AS(normal_quantile(1.5), Error);
}

TEST_CASE("prediction intervals and their files") {
  std::mt19937_64 rng(6);
  const auto dag = figure1_hierarchy();
  const Eigen::MatrixXd sigma = random_spd(7, rng);
  const Eigen::MatrixXd f = random_matrix(7, 4, rng);
  const IntervalReport rep = prediction_intervals(f, {sigma}, dag, 0.95, 11);
  CHECK(rep.z == doctest::Approx(1.959963984540054));
  for (Eigen::Index i = 0; i < 7; ++i) {
    for (Eigen::Index t = 0; t < 4; ++t) {
      CHECK(rep.upper(i, t) - f(i, t) == doctest::Approx(rep.z * std::sqrt(sigma(i, i))));
      CHECK(f(i, t) - rep.lower(i, t) == doctest::Approx(rep.z * std::sqrt(sigma(i, i))));
    }
  }
  for (Eigen::Index c = 0; c < 3; ++c) {
    const double w = rep.z * std::sqrt(quadratic_form(sigma, dag.constraints[static_cast<std::size_t>(c)]));
    CHECK(rep.rec_upper(c, 0) == doctest::Approx(w));
    CHECK(rep.rec_lower(c, 3) == doctest::Approx(-w));
  }

  const fs::path dir = fs::temp_directory_path() / "hfr_test_intervals";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_intervals(rep, dir);
  const CsvTable nodes = read_csv(dir / "intervals.csv");
  CHECK(nodes.header == std::vector<std::string>{"node", "t", "forecast", "lower", "upper"});
  CHECK(nodes.values.rows() == 28);
  CHECK(nodes.values(0, 1) == 11.0);
  const CsvTable rec = read_csv(dir / "reconciliation_intervals.csv");
  CHECK(rec.header == std::vector<std::string>{"constraint_id", "t", "rec_lower", "rec_upper"});
  CHECK(rec.values.rows() == 12);
  fs::remove_all(dir);

  CHECK_THROWS_AS(prediction_intervals(f, {sigma}, dag, 1.0), Error);
  CHECK_THROWS_AS(prediction_intervals(f.topRows(6), {sigma}, dag, 0.9), Error);
}
