#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include <nlohmann/json.hpp>

#include "hfr/error.hpp"
#include "hfr/synthdata.hpp"

using namespace hfr;
namespace fs = std::filesystem;

namespace {

SynthConfig small_config(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.m = 4;
  cfg.t0 = 50;
  cfg.horizon = 80;
  cfg.seed = seed;
  return cfg;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("hfr_test_synth_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("gp series has the exponential-kernel autocorrelation") {
  std::mt19937_64 rng(1);
  const GpKernelConfig k{20.0, 1.5};
  const Eigen::Index len = 400000;
  const Eigen::VectorXd x = sample_gp_series(k, len, rng);
  const double var = x.squaredNorm() / static_cast<double>(len);
  CHECK(var == doctest::Approx(2.25).epsilon(0.05));
  for (Eigen::Index lag : {1, 5, 20}) {
    const double cov = x.head(len - lag).dot(x.tail(len - lag)) / static_cast<double>(len - lag);
    CAPTURE(lag);
    CHECK(cov / var == doctest::Approx(std::exp(-static_cast<double>(lag) / 20.0)).epsilon(0.03));
  }
  CHECK(sample_gp_series(k, 0, rng).size() == 0);
}

TEST_CASE("leaf targets follow the level plus drifting interaction") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd x(10, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = normal(rng);
  const Eigen::Vector3d theta(0.5, -1.0, 2.0), phi(1.0, 0.0, -0.5);
  const Eigen::VectorXd y = build_leaf_target(x, theta, phi, 0.0, rng);
  for (Eigen::Index t = 0; t < 10; ++t) {
    double expect = 0.0;
    for (int j = 0; j < 3; ++j) expect += x(t, j) * (theta(j) + (t + 1) / 10.0 * phi(j));
    CHECK(y(t) == doctest::Approx(expect).epsilon(1e-13));
  }
  CHECK_THROWS_AS(build_leaf_target(x, Eigen::Vector2d(1, 1), phi, 0.0, rng), Error);
}

TEST_CASE("generated truth is coherent and deterministic") {
  const SynthInstance a = generate(small_config(7));
  CHECK(a.truth.rows() == 7);
  CHECK(a.truth.cols() == 80);
  CHECK(a.covariates.rows() == 80);
  CHECK(a.covariates.cols() == 4);
  CHECK(reconciliation_residuals(a.config.hierarchy, a.truth, 0, 80).cwiseAbs().maxCoeff() < 1e-12);

  const SynthInstance b = generate(small_config(7));
  CHECK(a.truth == b.truth);
  CHECK(a.covariates == b.covariates);
  CHECK(generate(small_config(8)).truth != a.truth);

  const PanelData p = a.panel();
  CHECK(p.targets.cols() == 50);
  CHECK(p.covariates.size() == 7);
  CHECK(p.horizon() == 80);
}

TEST_CASE("noise-free leaves are recovered from the stored coefficients") {
  SynthConfig cfg = small_config(3);
  cfg.noise_std = 0.0;
  const SynthInstance inst = generate(cfg);
  const auto lv = leaves(cfg.hierarchy);
  for (std::size_t k = 0; k < lv.size(); ++k) {
    for (Eigen::Index t = 0; t < 80; ++t) {
      const double tau = static_cast<double>(t + 1) / 80.0;
      const double expect = inst.covariates.row(t).dot(inst.theta.row(k) + tau * inst.phi.row(k));
      CHECK(inst.truth(static_cast<Eigen::Index>(lv[k]), t) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  CHECK(cfg.effective_coef_std() == doctest::Approx(0.5));
}

TEST_CASE("config validation") {
  SynthConfig cfg = small_config(0);
  cfg.t0 = 80;
  CHECK_THROWS_AS(generate(cfg), Error);
  cfg = small_config(0);
  cfg.kernel.length_scale = 0.0;
  CHECK_THROWS_AS(generate(cfg), Error);
  cfg = small_config(0);
  cfg.noise_std = -1.0;
  CHECK_THROWS_AS(generate(cfg), Error);
  cfg = small_config(0);
  cfg.hierarchy = {2, {{0, {1}}, {1, {0}}}};
  CHECK_THROWS_AS(generate(cfg), Error);

  const auto j = nlohmann::json::parse(R"({"m": 3, "kernel": {"type": "rbf"}})");
  CHECK_THROWS_AS(j.get<SynthConfig>(), Error);
}

TEST_CASE("config json round trip") {
  SynthConfig cfg = small_config(99);
  cfg.noise_std = 0.25;
  cfg.kernel.length_scale = 7.0;
  const SynthConfig back = nlohmann::json(cfg).get<SynthConfig>();
  CHECK(back.m == cfg.m);
  CHECK(back.t0 == cfg.t0);
  CHECK(back.horizon == cfg.horizon);
  CHECK(back.noise_std == cfg.noise_std);
  CHECK(back.kernel.length_scale == 7.0);
  CHECK(back.hierarchy == cfg.hierarchy);
  CHECK(back.seed == 99);
  CHECK(generate(back).truth == generate(cfg).truth);
}

TEST_CASE("instance files round trip") {
  const SynthInstance inst = generate(small_config(11));
  const fs::path dir = scratch_dir("roundtrip");
  write_instance(inst, dir);
  for (const char* f : {"X.csv", "Y.csv", "hierarchy.json", "manifest.json"}) CHECK(fs::exists(dir / f));
  const SynthInstance back = read_instance(dir);
  CHECK((back.truth - inst.truth).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.covariates - inst.covariates).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.config.hierarchy == inst.config.hierarchy);
  fs::remove_all(dir);
}
