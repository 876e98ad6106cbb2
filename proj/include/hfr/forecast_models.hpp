#pragma once

// Per-node parametric forecasters f(x; theta) with exact parameter gradients.
//
// Flat layout (used by optimizers and checkpoints):
//   linear: [w_0 .. w_{m-1}, b]
//   mlp:    [W1 row-major (h x m), b1 (h), w2 (h), b2]
//   shared: [W1 row-major (h x m), b1 (h), W2 row-major (n x h), b2 (n)]

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace hfr {

enum class ModelKind { linear, mlp };

struct LinearModel {
  Eigen::VectorXd weights;
  double bias = 0.0;
};

/// One hidden ReLU layer: w2 . relu(W1 x + b1) + b2.
struct MlpModel {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::VectorXd w2;
  double b2 = 0.0;
};

using NodeModel = std::variant<LinearModel, MlpModel>;

/// Hidden pre-activations kept from a batch forward pass for the backward pass.
struct BatchCache {
  Eigen::MatrixXd pre_activation;  // T x h, empty for linear models
};

ModelKind kind_of(const NodeModel& model);
std::size_t input_dim(const NodeModel& model);
std::size_t param_count(const NodeModel& model);

double forward(const NodeModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Gradient of upstream * f(x; theta) with respect to theta.
Eigen::VectorXd param_gradient(const NodeModel& model, const Eigen::Ref<const Eigen::VectorXd>& x,
                               double upstream);

/// Outputs for every row of `x` (T x m).
Eigen::VectorXd forward_batch(const NodeModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x,
                              BatchCache* cache = nullptr);

/// sum_t upstream[t] * d f(x_t) / d theta. `cache` must come from forward_batch
/// on the same rows; when null the forward pass is recomputed.
Eigen::VectorXd backward_batch(const NodeModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x,
                               const Eigen::Ref<const Eigen::VectorXd>& upstream,
                               const BatchCache* cache = nullptr);

/// Directional derivative J v of the outputs for a flat parameter direction v.
Eigen::VectorXd jvp_batch(const NodeModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x,
                          const Eigen::Ref<const Eigen::VectorXd>& direction,
                          const BatchCache* cache = nullptr);

/// Weights ~ N(0, 1/fan_in), biases zero. Deterministic in seed.
NodeModel init_model(ModelKind kind, std::size_t input_dim, std::size_t hidden_dim,
                     std::uint64_t seed);

Eigen::VectorXd to_flat(const NodeModel& model);
void assign_flat(NodeModel& model, const Eigen::Ref<const Eigen::VectorXd>& flat);

/// Single hidden layer feeding one output per node.
struct SharedMlpModel {
  Eigen::MatrixXd w1;  // h x m
  Eigen::VectorXd b1;  // h
  Eigen::MatrixXd w2;  // n x h
  Eigen::VectorXd b2;  // n
};

/// One forecaster per node, or a shared trunk when `shared` is set.
struct ModelParams {
  std::vector<NodeModel> nodes;
  std::optional<SharedMlpModel> shared;

  /// Independently updatable parameter blocks: one per node, or one in total
  /// for the shared model.
  std::size_t block_count() const;
  Eigen::VectorXd block(std::size_t b) const;
  void set_block(std::size_t b, const Eigen::Ref<const Eigen::VectorXd>& flat);
};

ModelParams init_params(ModelKind kind, std::size_t n_nodes, std::size_t input_dim,
                        std::size_t hidden_dim, std::uint64_t seed);
SharedMlpModel init_shared_mlp(std::size_t n_nodes, std::size_t input_dim, std::size_t hidden_dim,
                               std::uint64_t seed);

/// n x T outputs of the shared model over rows of x.
Eigen::MatrixXd shared_forward_batch(const SharedMlpModel& model,
                                     const Eigen::Ref<const Eigen::MatrixXd>& x,
                                     BatchCache* cache = nullptr);
/// Flat gradient for an n x T upstream matrix.
Eigen::VectorXd shared_backward_batch(const SharedMlpModel& model,
                                      const Eigen::Ref<const Eigen::MatrixXd>& x,
                                      const Eigen::Ref<const Eigen::MatrixXd>& upstream,
                                      const BatchCache* cache = nullptr);
/// n x T directional derivative for a flat parameter direction.
Eigen::MatrixXd shared_jvp_batch(const SharedMlpModel& model,
                                 const Eigen::Ref<const Eigen::MatrixXd>& x,
                                 const Eigen::Ref<const Eigen::VectorXd>& direction,
                                 const BatchCache* cache = nullptr);
Eigen::VectorXd to_flat(const SharedMlpModel& model);
void assign_flat(SharedMlpModel& model, const Eigen::Ref<const Eigen::VectorXd>& flat);

// Checkpoint JSON: {"kind", "input_dim", "hidden_dim", "weights": [...]}.
void to_json(nlohmann::json& j, const NodeModel& model);
void from_json(const nlohmann::json& j, NodeModel& model);
void to_json(nlohmann::json& j, const ModelParams& params);
void from_json(const nlohmann::json& j, ModelParams& params);

}  // namespace hfr
