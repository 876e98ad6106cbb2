#include "hfr/forecast_models.hpp"

#include <cmath>
#include <random>
#include <string>

#include <nlohmann/json.hpp>

#include "hfr/error.hpp"
#include "hfr/rng.hpp"

namespace hfr {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void check_input(std::size_t expected, Eigen::Index got) {
  if (static_cast<std::size_t>(got) != expected) {
    throw Error(ErrorCode::DimensionMismatch, "model expects input dimension " +
                                                  std::to_string(expected) + ", got " +
                                                  std::to_string(got));
  }
}

void check_flat(std::size_t expected, Eigen::Index got) {
  if (static_cast<std::size_t>(got) != expected) {
    throw Error(ErrorCode::DimensionMismatch, "flat vector has " + std::to_string(got) +
                                                  " entries, model has " +
                                                  std::to_string(expected));
  }
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void write_row_major(const Eigen::MatrixXd& m, Eigen::VectorXd& flat, Eigen::Index offset) {
  Eigen::Map<RowMajor>(flat.data() + offset, m.rows(), m.cols()) = m;
}

void read_row_major(Eigen::MatrixXd& m, const Eigen::Ref<const Eigen::VectorXd>& flat,
                    Eigen::Index offset) {
  m = Eigen::Map<const RowMajor>(flat.data() + offset, m.rows(), m.cols());
}

Eigen::MatrixXd relu_mask(const Eigen::MatrixXd& pre) {
  return (pre.array() > 0.0).cast<double>().matrix();
}

Eigen::MatrixXd hidden_pre(const Eigen::MatrixXd& w1, const Eigen::VectorXd& b1,
                           const Eigen::Ref<const Eigen::MatrixXd>& x) {
  Eigen::MatrixXd pre = x * w1.transpose();
  pre.rowwise() += b1.transpose();
  return pre;
}

}  // namespace

ModelKind kind_of(const NodeModel& model) {
  return std::holds_alternative<LinearModel>(model) ? ModelKind::linear : ModelKind::mlp;
}

std::size_t input_dim(const NodeModel& model) {
  return std::visit(overloaded{[](const LinearModel& m) { return std::size_t(m.weights.size()); },
                               [](const MlpModel& m) { return std::size_t(m.w1.cols()); }},
                    model);
}

std::size_t param_count(const NodeModel& model) {
  return std::visit(overloaded{[](const LinearModel& m) { return std::size_t(m.weights.size() + 1); },
                               [](const MlpModel& m) {
                                 return std::size_t(m.w1.size() + m.b1.size() + m.w2.size() + 1);
                               }},
                    model);
}

double forward(const NodeModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  check_input(input_dim(model), x.size());
  return std::visit(
      overloaded{[&](const LinearModel& m) { return m.weights.dot(x) + m.bias; },
                 [&](const MlpModel& m) {
                   const Eigen::VectorXd hidden = (m.w1 * x + m.b1).cwiseMax(0.0);
                   return m.w2.dot(hidden) + m.b2;
                 }},
      model);
}

Eigen::VectorXd param_gradient(const NodeModel& model, const Eigen::Ref<const Eigen::VectorXd>& x,
                               double upstream) {
  check_input(input_dim(model), x.size());
  Eigen::VectorXd grad(param_count(model));
  std::visit(overloaded{[&](const LinearModel& m) {
                          grad.head(m.weights.size()) = upstream * x;
                          grad(m.weights.size()) = upstream;
                        },
                        [&](const MlpModel& m) {
                          const Eigen::Index h = m.w1.rows();
                          const Eigen::Index in = m.w1.cols();
                          const Eigen::VectorXd pre = m.w1 * x + m.b1;
                          // ReLU subgradient at 0 is 0.
                          const Eigen::VectorXd delta =
                              upstream * m.w2.cwiseProduct(relu_mask(pre));
                          write_row_major(delta * x.transpose(), grad, 0);
                          grad.segment(h * in, h) = delta;
                          grad.segment(h * in + h, h) = upstream * pre.cwiseMax(0.0);
                          grad(h * in + 2 * h) = upstream;
                        }},
             model);
  return grad;
}

Eigen::VectorXd forward_batch(const NodeModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x,
                              BatchCache* cache) {
  check_input(input_dim(model), x.cols());
  return std::visit(
      overloaded{[&](const LinearModel& m) -> Eigen::VectorXd {
                   Eigen::VectorXd out = x * m.weights;
                   out.array() += m.bias;
                   return out;
                 },
                 [&](const MlpModel& m) -> Eigen::VectorXd {
                   Eigen::MatrixXd pre = hidden_pre(m.w1, m.b1, x);
                   Eigen::VectorXd out = pre.cwiseMax(0.0) * m.w2;
                   out.array() += m.b2;
                   if (cache) cache->pre_activation = std::move(pre);
                   return out;
                 }},
      model);
}

Eigen::VectorXd backward_batch(const NodeModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x,
                               const Eigen::Ref<const Eigen::VectorXd>& upstream,
                               const BatchCache* cache) {
  check_input(input_dim(model), x.cols());
  if (upstream.size() != x.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "upstream length differs from batch size");
  }
  Eigen::VectorXd grad(param_count(model));
  std::visit(overloaded{[&](const LinearModel& m) {
                          grad.head(m.weights.size()) = x.transpose() * upstream;
                          grad(m.weights.size()) = upstream.sum();
                        },
                        [&](const MlpModel& m) {
                          const Eigen::Index h = m.w1.rows();
                          const Eigen::Index in = m.w1.cols();
                          Eigen::MatrixXd local;
                          const Eigen::MatrixXd* pre = nullptr;
                          if (cache && cache->pre_activation.rows() == x.rows()) {
                            pre = &cache->pre_activation;
                          } else {
                            local = hidden_pre(m.w1, m.b1, x);
                            pre = &local;
                          }
                          grad.segment(h * in + h, h) = pre->cwiseMax(0.0).transpose() * upstream;
                          // delta(t, k) = upstream_t * w2_k * 1[pre(t, k) > 0]
                          Eigen::MatrixXd delta = upstream * m.w2.transpose();
                          delta.array() *= (pre->array() > 0.0).cast<double>();
                          write_row_major(delta.transpose() * x, grad, 0);
                          grad.segment(h * in, h) = delta.colwise().sum().transpose();
                          grad(h * in + 2 * h) = upstream.sum();
                        }},
             model);
  return grad;
}

Eigen::VectorXd jvp_batch(const NodeModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x,
                          const Eigen::Ref<const Eigen::VectorXd>& direction,
                          const BatchCache* cache) {
  check_input(input_dim(model), x.cols());
  check_flat(param_count(model), direction.size());
  return std::visit(
      overloaded{[&](const LinearModel& m) -> Eigen::VectorXd {
                   Eigen::VectorXd out = x * direction.head(m.weights.size());
                   out.array() += direction(m.weights.size());
                   return out;
                 },
                 [&](const MlpModel& m) -> Eigen::VectorXd {
                   const Eigen::Index h = m.w1.rows();
                   const Eigen::Index in = m.w1.cols();
                   Eigen::MatrixXd local;
                   const Eigen::MatrixXd* pre = nullptr;
                   if (cache && cache->pre_activation.rows() == x.rows()) {
                     pre = &cache->pre_activation;
                   } else {
                     local = hidden_pre(m.w1, m.b1, x);
                     pre = &local;
                   }
                   Eigen::MatrixXd dw1(h, in);
                   read_row_major(dw1, direction, 0);
                   const Eigen::VectorXd db1 = direction.segment(h * in, h);
                   const Eigen::VectorXd dw2 = direction.segment(h * in + h, h);
                   const double db2 = direction(h * in + 2 * h);
                   Eigen::MatrixXd dpre = hidden_pre(dw1, db1, x);
                   dpre.array() *= (pre->array() > 0.0).cast<double>();
                   Eigen::VectorXd out = pre->cwiseMax(0.0) * dw2 + dpre * m.w2;
                   out.array() += db2;
                   return out;
                 }},
      model);
}

NodeModel init_model(ModelKind kind, std::size_t input_dim, std::size_t hidden_dim,
                     std::uint64_t seed) {
  if (input_dim == 0) throw Error(ErrorCode::BadDimension, "input dimension must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto in = static_cast<Eigen::Index>(input_dim);
  if (kind == ModelKind::linear) {
    LinearModel m;
    m.weights.resize(in);
    const double scale = 1.0 / std::sqrt(static_cast<double>(input_dim));
    for (Eigen::Index j = 0; j < in; ++j) m.weights(j) = scale * normal(rng);
    return m;
  }
  if (hidden_dim == 0) throw Error(ErrorCode::BadDimension, "hidden dimension must be >= 1");
  const auto h = static_cast<Eigen::Index>(hidden_dim);
  MlpModel m;
  m.w1.resize(h, in);
  m.b1 = Eigen::VectorXd::Zero(h);
  m.w2.resize(h);
  const double scale1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double scale2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  for (Eigen::Index k = 0; k < h; ++k) {
    for (Eigen::Index j = 0; j < in; ++j) m.w1(k, j) = scale1 * normal(rng);
  }
  for (Eigen::Index k = 0; k < h; ++k) m.w2(k) = scale2 * normal(rng);
  return m;
}

Eigen::VectorXd to_flat(const NodeModel& model) {
  Eigen::VectorXd flat(param_count(model));
  std::visit(overloaded{[&](const LinearModel& m) {
                          flat.head(m.weights.size()) = m.weights;
                          flat(m.weights.size()) = m.bias;
                        },
                        [&](const MlpModel& m) {
                          const Eigen::Index h = m.w1.rows();
                          const Eigen::Index in = m.w1.cols();
                          write_row_major(m.w1, flat, 0);
                          flat.segment(h * in, h) = m.b1;
                          flat.segment(h * in + h, h) = m.w2;
                          flat(h * in + 2 * h) = m.b2;
                        }},
             model);
  return flat;
}

void assign_flat(NodeModel& model, const Eigen::Ref<const Eigen::VectorXd>& flat) {
  check_flat(param_count(model), flat.size());
  std::visit(overloaded{[&](LinearModel& m) {
                          m.weights = flat.head(m.weights.size());
                          m.bias = flat(m.weights.size());
                        },
                        [&](MlpModel& m) {
                          const Eigen::Index h = m.w1.rows();
                          const Eigen::Index in = m.w1.cols();
                          read_row_major(m.w1, flat, 0);
                          m.b1 = flat.segment(h * in, h);
                          m.w2 = flat.segment(h * in + h, h);
                          m.b2 = flat(h * in + 2 * h);
                        }},
             model);
}

// ---------------------------------------------------------------------------
// Shared trunk

namespace {

std::size_t shared_param_count(const SharedMlpModel& m) {
  return static_cast<std::size_t>(m.w1.size() + m.b1.size() + m.w2.size() + m.b2.size());
}

}  // namespace

SharedMlpModel init_shared_mlp(std::size_t n_nodes, std::size_t input_dim, std::size_t hidden_dim,
                               std::uint64_t seed) {
  if (input_dim == 0 || hidden_dim == 0 || n_nodes == 0) {
    throw Error(ErrorCode::BadDimension, "shared MLP needs positive node, input and hidden sizes");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto in = static_cast<Eigen::Index>(input_dim);
  const auto h = static_cast<Eigen::Index>(hidden_dim);
  const auto n = static_cast<Eigen::Index>(n_nodes);
  SharedMlpModel m;
  m.w1.resize(h, in);
  m.b1 = Eigen::VectorXd::Zero(h);
  m.w2.resize(n, h);
  m.b2 = Eigen::VectorXd::Zero(n);
  const double scale1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double scale2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  for (Eigen::Index k = 0; k < h; ++k) {
    for (Eigen::Index j = 0; j < in; ++j) m.w1(k, j) = scale1 * normal(rng);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < h; ++k) m.w2(i, k) = scale2 * normal(rng);
  }
  return m;
}

Eigen::MatrixXd shared_forward_batch(const SharedMlpModel& model,
                                     const Eigen::Ref<const Eigen::MatrixXd>& x,
                                     BatchCache* cache) {
  check_input(static_cast<std::size_t>(model.w1.cols()), x.cols());
  Eigen::MatrixXd pre = hidden_pre(model.w1, model.b1, x);
  Eigen::MatrixXd out = model.w2 * pre.cwiseMax(0.0).transpose();
  out.colwise() += model.b2;
  if (cache) cache->pre_activation = std::move(pre);
  return out;
}

Eigen::VectorXd shared_backward_batch(const SharedMlpModel& model,
                                      const Eigen::Ref<const Eigen::MatrixXd>& x,
                                      const Eigen::Ref<const Eigen::MatrixXd>& upstream,
                                      const BatchCache* cache) {
  check_input(static_cast<std::size_t>(model.w1.cols()), x.cols());
  if (upstream.rows() != model.w2.rows() || upstream.cols() != x.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "upstream must be n_nodes x batch");
  }
  const Eigen::Index h = model.w1.rows();
  const Eigen::Index in = model.w1.cols();
  const Eigen::Index n = model.w2.rows();
  Eigen::MatrixXd local;
  const Eigen::MatrixXd* pre = nullptr;
  if (cache && cache->pre_activation.rows() == x.rows()) {
    pre = &cache->pre_activation;
  } else {
    local = hidden_pre(model.w1, model.b1, x);
    pre = &local;
  }
  Eigen::VectorXd grad(shared_param_count(model));
  Eigen::MatrixXd delta = upstream.transpose() * model.w2;  // T x h
  delta.array() *= (pre->array() > 0.0).cast<double>();
  write_row_major(delta.transpose() * x, grad, 0);
  grad.segment(h * in, h) = delta.colwise().sum().transpose();
  write_row_major(upstream * pre->cwiseMax(0.0), grad, h * in + h);
  grad.segment(h * in + h + n * h, n) = upstream.rowwise().sum();
  return grad;
}

Eigen::MatrixXd shared_jvp_batch(const SharedMlpModel& model,
                                 const Eigen::Ref<const Eigen::MatrixXd>& x,
                                 const Eigen::Ref<const Eigen::VectorXd>& direction,
                                 const BatchCache* cache) {
  check_input(static_cast<std::size_t>(model.w1.cols()), x.cols());
  check_flat(shared_param_count(model), direction.size());
  const Eigen::Index h = model.w1.rows();
  const Eigen::Index in = model.w1.cols();
  const Eigen::Index n = model.w2.rows();
  Eigen::MatrixXd local;
  const Eigen::MatrixXd* pre = nullptr;
  if (cache && cache->pre_activation.rows() == x.rows()) {
    pre = &cache->pre_activation;
  } else {
    local = hidden_pre(model.w1, model.b1, x);
    pre = &local;
  }
  Eigen::MatrixXd dw1(h, in);
  read_row_major(dw1, direction, 0);
  const Eigen::VectorXd db1 = direction.segment(h * in, h);
  Eigen::MatrixXd dw2(n, h);
  read_row_major(dw2, direction, h * in + h);
  const Eigen::VectorXd db2 = direction.segment(h * in + h + n * h, n);
  Eigen::MatrixXd dpre = hidden_pre(dw1, db1, x);
  dpre.array() *= (pre->array() > 0.0).cast<double>();
  Eigen::MatrixXd out = dw2 * pre->cwiseMax(0.0).transpose() + model.w2 * dpre.transpose();
  out.colwise() += db2;
  return out;
}

Eigen::VectorXd to_flat(const SharedMlpModel& model) {
  const Eigen::Index h = model.w1.rows();
  const Eigen::Index in = model.w1.cols();
  const Eigen::Index n = model.w2.rows();
  Eigen::VectorXd flat(shared_param_count(model));
  write_row_major(model.w1, flat, 0);
  flat.segment(h * in, h) = model.b1;
  write_row_major(model.w2, flat, h * in + h);
  flat.segment(h * in + h + n * h, n) = model.b2;
  return flat;
}

void assign_flat(SharedMlpModel& model, const Eigen::Ref<const Eigen::VectorXd>& flat) {
  check_flat(shared_param_count(model), flat.size());
  const Eigen::Index h = model.w1.rows();
  const Eigen::Index in = model.w1.cols();
  const Eigen::Index n = model.w2.rows();
  read_row_major(model.w1, flat, 0);
  model.b1 = flat.segment(h * in, h);
  read_row_major(model.w2, flat, h * in + h);
  model.b2 = flat.segment(h * in + h + n * h, n);
}

// ---------------------------------------------------------------------------

std::size_t ModelParams::block_count() const { return shared ? 1 : nodes.size(); }

Eigen::VectorXd ModelParams::block(std::size_t b) const {
  if (shared) return to_flat(*shared);
  return to_flat(nodes.at(b));
}

void ModelParams::set_block(std::size_t b, const Eigen::Ref<const Eigen::VectorXd>& flat) {
  if (shared) {
    assign_flat(*shared, flat);
  } else {
    assign_flat(nodes.at(b), flat);
  }
}

ModelParams init_params(ModelKind kind, std::size_t n_nodes, std::size_t input_dim,
                        std::size_t hidden_dim, std::uint64_t seed) {
  ModelParams params;
  params.nodes.reserve(n_nodes);
  for (std::size_t i = 0; i < n_nodes; ++i) {
    params.nodes.push_back(init_model(kind, input_dim, hidden_dim, derive_seed(seed, i)));
  }
  return params;
}

void to_json(nlohmann::json& j, const NodeModel& model) {
  const Eigen::VectorXd flat = to_flat(model);
  const bool linear = kind_of(model) == ModelKind::linear;
  const std::size_t hidden = linear ? 0 : static_cast<std::size_t>(std::get<MlpModel>(model).w1.rows());
  j = nlohmann::json{{"kind", linear ? "linear" : "mlp"},
                     {"input_dim", input_dim(model)},
                     {"hidden_dim", hidden},
                     {"weights", std::vector<double>(flat.data(), flat.data() + flat.size())}};
}

void from_json(const nlohmann::json& j, NodeModel& model) {
  const auto kind = j.at("kind").get<std::string>();
  const auto in = j.at("input_dim").get<std::size_t>();
  const auto weights = j.at("weights").get<std::vector<double>>();
  if (kind == "linear") {
    LinearModel m;
    m.weights.resize(static_cast<Eigen::Index>(in));
    model = m;
  } else if (kind == "mlp") {
    const auto h = static_cast<Eigen::Index>(j.at("hidden_dim").get<std::size_t>());
    MlpModel m;
    m.w1.resize(h, static_cast<Eigen::Index>(in));
    m.b1.resize(h);
    m.w2.resize(h);
    model = m;
  } else {
    throw Error(ErrorCode::InvalidConfig, "unknown model kind '" + kind + "'");
  }
  assign_flat(model, Eigen::Map<const Eigen::VectorXd>(weights.data(),
                                                       static_cast<Eigen::Index>(weights.size())));
}

void to_json(nlohmann::json& j, const ModelParams& params) {
  if (params.shared) {
    const auto& s = *params.shared;
    const Eigen::VectorXd flat = to_flat(s);
    j = nlohmann::json{{"kind", "shared_mlp"},
                       {"n_nodes", s.w2.rows()},
                       {"input_dim", s.w1.cols()},
                       {"hidden_dim", s.w1.rows()},
                       {"weights", std::vector<double>(flat.data(), flat.data() + flat.size())}};
    return;
  }
  j = nlohmann::json{{"kind", "per_node"}, {"nodes", params.nodes}};
}

void from_json(const nlohmann::json& j, ModelParams& params) {
  params = ModelParams{};
  if (j.at("kind").get<std::string>() == "shared_mlp") {
    SharedMlpModel s;
    const auto n = j.at("n_nodes").get<Eigen::Index>();
    const auto in = j.at("input_dim").get<Eigen::Index>();
    const auto h = j.at("hidden_dim").get<Eigen::Index>();
    s.w1.resize(h, in);
    s.b1.resize(h);
    s.w2.resize(n, h);
    s.b2.resize(n);
    const auto weights = j.at("weights").get<std::vector<double>>();
    assign_flat(s, Eigen::Map<const Eigen::VectorXd>(weights.data(),
                                                     static_cast<Eigen::Index>(weights.size())));
    params.shared = std::move(s);
    return;
  }
  params.nodes = j.at("nodes").get<std::vector<NodeModel>>();
}

}  // namespace hfr
