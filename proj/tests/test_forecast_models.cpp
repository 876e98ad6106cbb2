#include <doctest.h>

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "hfr/error.hpp"
#include "hfr/forecast_models.hpp"

using namespace hfr;

namespace {

Eigen::VectorXd random_vector(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
  return v;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = normal(rng);
  return m;
}

// Scalar reference evaluation, written out loop by loop.
double mlp_reference(const MlpModel& m, const Eigen::VectorXd& x) {
  double out = m.b2;
  for (Eigen::Index k = 0; k < m.w1.rows(); ++k) {
    double a = m.b1(k);
    for (Eigen::Index j = 0; j < m.w1.cols(); ++j) a += m.w1(k, j) * x(j);
    out += m.w2(k) * (a > 0.0 ? a : 0.0);
  }
  return out;
}

double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
}

}  // namespace

TEST_CASE("forward examples") {
  NodeModel lin = LinearModel{Eigen::Vector2d(2, 0), 1.0};
  CHECK(forward(lin, Eigen::Vector2d(3, 5)) == 7.0);

  MlpModel zero{Eigen::MatrixXd::Zero(4, 3), Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(4), 4.0};
  CHECK(forward(NodeModel(zero), Eigen::Vector3d(1, -2, 9)) == 4.0);

  MlpModel one{Eigen::RowVector2d(1, -1), Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, 2.0), 0.0};
  CHECK(forward(NodeModel(one), Eigen::Vector2d(3, 1)) == 4.0);
  CHECK(forward(NodeModel(one), Eigen::Vector2d(1, 3)) == 0.0);

  CHECK_THROWS_AS(forward(lin, Eigen::Vector3d(1, 2, 3)), Error);
}

TEST_CASE("batch forward agrees with the scalar reference") {
  std::mt19937_64 rng(5);
  const auto model = std::get<MlpModel>(init_model(ModelKind::mlp, 6, 13, 99));
  const Eigen::MatrixXd x = random_matrix(40, 6, rng);
  const Eigen::VectorXd batch = forward_batch(NodeModel(model), x);
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const Eigen::VectorXd row = x.row(t).transpose();
    CHECK(batch(t) == doctest::Approx(mlp_reference(model, row)).epsilon(1e-12));
    CHECK(forward(NodeModel(model), row) == doctest::Approx(mlp_reference(model, row)).epsilon(1e-12));
  }
}

TEST_CASE("param_gradient examples") {
  NodeModel lin = LinearModel{Eigen::VectorXd::Zero(1), 0.0};
  // squared loss (yhat - y)^2 with yhat = 0, y = 1: dL/dyhat = -2
  const Eigen::VectorXd g = param_gradient(lin, Eigen::VectorXd::Ones(1), -2.0);
  CHECK(g(0) == -2.0);

  const auto mlp = init_model(ModelKind::mlp, 4, 7, 3);
  CHECK(param_gradient(mlp, Eigen::Vector4d(1, 2, 3, 4), 0.0).isZero(0.0));
}

TEST_CASE("squared-loss gradients match central differences") {
  std::mt19937_64 rng(17);
  const double h = 1e-5;
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const ModelKind kind = trial % 2 ? ModelKind::mlp : ModelKind::linear;
    const std::size_t m = 1 + rng() % 6;
    NodeModel model = init_model(kind, m, 1 + rng() % 9, rng());
    // Random biases so the ReLU pattern is not all-on.
    Eigen::VectorXd theta = to_flat(model) + 0.3 * random_vector(static_cast<Eigen::Index>(param_count(model)), rng);
    assign_flat(model, theta);
    const Eigen::VectorXd x = random_vector(static_cast<Eigen::Index>(m), rng);
    const double y = std::normal_distribution<double>()(rng);
    auto loss = [&](const Eigen::VectorXd& p) {
      NodeModel tmp = model;
      assign_flat(tmp, p);
      const double r = forward(tmp, x) - y;
      return r * r;
    };
    const Eigen::VectorXd analytic = param_gradient(model, x, 2.0 * (forward(model, x) - y));
    Eigen::VectorXd numeric(theta.size());
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
      Eigen::VectorXd plus = theta, minus = theta;
      plus(k) += h;
      minus(k) -= h;
      numeric(k) = (loss(plus) - loss(minus)) / (2.0 * h);
    }
    // A kink inside the difference stencil makes the central difference meaningless.
    if (kind == ModelKind::mlp) {
      const auto& mm = std::get<MlpModel>(model);
      const Eigen::VectorXd pre = mm.w1 * x + mm.b1;
      if ((pre.cwiseAbs().array() < 1e-3).any()) continue;
    }
    ++checked;
    CHECK(rel_err(analytic, numeric) < 1e-4);
  }
  CHECK(checked > 80);
}

TEST_CASE("batch backward and jvp agree with per-sample gradients") {
  std::mt19937_64 rng(23);
  for (ModelKind kind : {ModelKind::linear, ModelKind::mlp}) {
    const NodeModel model = init_model(kind, 5, 11, 8);
    const Eigen::MatrixXd x = random_matrix(30, 5, rng);
    const Eigen::VectorXd up = random_vector(30, rng);
    Eigen::VectorXd expect = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(param_count(model)));
    Eigen::MatrixXd jac(30, expect.size());
    for (Eigen::Index t = 0; t < 30; ++t) {
      expect += param_gradient(model, x.row(t).transpose(), up(t));
      jac.row(t) = param_gradient(model, x.row(t).transpose(), 1.0).transpose();
    }
    BatchCache cache;
    forward_batch(model, x, &cache);
    CHECK(rel_err(backward_batch(model, x, up, &cache), expect) < 1e-12);
    CHECK(rel_err(backward_batch(model, x, up), expect) < 1e-12);
    const Eigen::VectorXd v = random_vector(expect.size(), rng);
    CHECK(rel_err(jvp_batch(model, x, v, &cache), jac * v) < 1e-12);
  }
}

TEST_CASE("relu subgradient at zero is zero") {
  MlpModel m{Eigen::RowVector2d(1, -1), Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, 3.0), 0.0};
  const Eigen::VectorXd g = param_gradient(NodeModel(m), Eigen::Vector2d(2, 2), 1.0);
  // layout: W1 (1x2), b1, w2, b2
  CHECK(g(0) == 0.0);
  CHECK(g(1) == 0.0);
  CHECK(g(2) == 0.0);
  CHECK(g(3) == 0.0);
  CHECK(g(4) == 1.0);
}

TEST_CASE("mlp output is homogeneous in the output layer") {
  std::mt19937_64 rng(2);
  auto m = std::get<MlpModel>(init_model(ModelKind::mlp, 3, 8, 4));
  m.b2 = 0.7;
  const Eigen::Vector3d x(0.3, -1.2, 2.0);
  const double base = forward(NodeModel(m), x);
  for (double c : {2.0, -0.5, 0.0, 8.0}) {
    MlpModel s = m;
    s.w2 *= c;
    s.b2 *= c;
    CHECK(forward(NodeModel(s), x) == c * base);
  }
}

TEST_CASE("init is deterministic and sized") {
  CHECK(to_flat(init_model(ModelKind::mlp, 10, 100, 42)) == to_flat(init_model(ModelKind::mlp, 10, 100, 42)));
  CHECK(to_flat(init_model(ModelKind::mlp, 10, 100, 42)) != to_flat(init_model(ModelKind::mlp, 10, 100, 43)));
  CHECK(param_count(init_model(ModelKind::linear, 3, 0, 1)) == 4);
  CHECK(to_flat(init_model(ModelKind::linear, 3, 0, 1)).size() == 4);
  CHECK(param_count(init_model(ModelKind::mlp, 10, 100, 1)) == 1201);
  CHECK_THROWS_AS(init_model(ModelKind::linear, 0, 1, 1), Error);
  CHECK_THROWS_AS(init_model(ModelKind::mlp, 3, 0, 1), Error);

  const auto big = std::get<MlpModel>(init_model(ModelKind::mlp, 50, 400, 9));
  const double var = big.w1.squaredNorm() / static_cast<double>(big.w1.size());
  CHECK(var == doctest::Approx(1.0 / 50).epsilon(0.05));
  CHECK(big.b1.isZero(0.0));
}

TEST_CASE("flat vectors and json checkpoints round-trip exactly") {
  std::mt19937_64 rng(31);
  for (ModelKind kind : {ModelKind::linear, ModelKind::mlp}) {
    NodeModel model = init_model(kind, 4, 6, 12);
    const Eigen::VectorXd theta = random_vector(static_cast<Eigen::Index>(param_count(model)), rng) / 3.0;
    assign_flat(model, theta);
    CHECK(to_flat(model) == theta);

    const nlohmann::json j = model;
    CHECK(j.at("kind") == (kind == ModelKind::mlp ? "mlp" : "linear"));
    const auto back = nlohmann::json::parse(j.dump()).get<NodeModel>();
    CHECK(to_flat(back) == theta);
  }
  NodeModel lin = init_model(ModelKind::linear, 4, 0, 1);
  CHECK_THROWS_AS(assign_flat(lin, Eigen::VectorXd::Zero(3)), Error);
}

TEST_CASE("model params blocks") {
  ModelParams p = init_params(ModelKind::mlp, 7, 10, 5, 1);
  CHECK(p.block_count() == 7);
  CHECK(to_flat(p.nodes[0]) != to_flat(p.nodes[1]));
  const Eigen::VectorXd b = Eigen::VectorXd::Constant(p.block(3).size(), 0.25);
  p.set_block(3, b);
  CHECK(to_flat(p.nodes[3]) == b);

  const ModelParams back = nlohmann::json::parse(nlohmann::json(p).dump()).get<ModelParams>();
  for (std::size_t i = 0; i < 7; ++i) CHECK(back.block(i) == p.block(i));
}

TEST_CASE("shared trunk gradients match per-output accumulation") {
  std::mt19937_64 rng(41);
  const SharedMlpModel m = init_shared_mlp(3, 4, 6, 2);
  const Eigen::MatrixXd x = random_matrix(20, 4, rng);
  const Eigen::MatrixXd out = shared_forward_batch(m, x);
  REQUIRE(out.rows() == 3);
  // Node j of a shared trunk equals an MLP with that row of w2.
  for (Eigen::Index j = 0; j < 3; ++j) {
    MlpModel single{m.w1, m.b1, m.w2.row(j).transpose(), m.b2(j)};
    CHECK(rel_err(out.row(j).transpose(), forward_batch(NodeModel(single), x)) < 1e-13);
  }
  // Finite differences of sum(U .* F) in the flat parameters.
  const Eigen::MatrixXd up = random_matrix(3, 20, rng);
  const Eigen::VectorXd analytic = shared_backward_batch(m, x, up);
  const Eigen::VectorXd theta = to_flat(m);
  Eigen::VectorXd numeric(theta.size());
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    SharedMlpModel a = m, b = m;
    Eigen::VectorXd tp = theta, tm = theta;
    tp(k) += 1e-6;
    tm(k) -= 1e-6;
    assign_flat(a, tp);
    assign_flat(b, tm);
    numeric(k) = ((up.array() * shared_forward_batch(a, x).array()).sum() -
                  (up.array() * shared_forward_batch(b, x).array()).sum()) /
                 2e-6;
  }
  CHECK(rel_err(analytic, numeric) < 1e-6);
}
