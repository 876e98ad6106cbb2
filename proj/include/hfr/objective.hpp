#pragma once

// Joint objective: squared forecasting loss over the labelled window plus
// lambda times the squared reconciliation residuals over the forecast window.
//
//   P(theta) = sum_i sum_{t < t0} (f_i(x_i^t) - y_i^t)^2
//            + lambda * sum_c sum_{t0 <= t < T} (f_parent(c) - sum_{j in children(c)} f_j)^2
//
// Time indices are zero-based columns; [0, t0) is the training window and
// [t0, T) the forecast window.

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "hfr/forecast_models.hpp"
#include "hfr/hierarchy.hpp"

namespace hfr {

struct ObjectiveConfig {
  double lambda = 0.0;
  Eigen::Index t0 = 0;
  Eigen::Index horizon = 0;  // T
};

/// Counts reads of per-node data. Used to check that block updates only look
/// at the data of the block being updated.
struct AccessProbe {
  std::vector<std::size_t> covariate_reads;
  std::vector<std::size_t> target_reads;
};

struct PanelData {
  HierarchyDag dag;
  std::vector<Eigen::MatrixXd> covariates;  // per node, T x m_i
  Eigen::MatrixXd targets;                  // n x t0, training window only
  AccessProbe* probe = nullptr;

  std::size_t n_nodes() const { return dag.n_nodes; }
  Eigen::Index t0() const { return targets.cols(); }
  Eigen::Index horizon() const { return covariates.empty() ? 0 : covariates.front().rows(); }

  const Eigen::MatrixXd& node_covariates(NodeId i) const;
  Eigen::MatrixXd::ConstRowXpr node_targets(NodeId i) const;
};

/// Throws InvalidConfig / DimensionMismatch when config, data and models disagree.
void check_consistent(const ModelParams& params, const PanelData& data, const ObjectiveConfig& cfg);

/// n x t_end forecasts for columns [0, t_end); t_end < 0 means the full horizon.
Eigen::MatrixXd compute_forecasts(const ModelParams& params, const PanelData& data,
                                  Eigen::Index t_end = -1);

double forecasting_loss(const Eigen::Ref<const Eigen::MatrixXd>& forecasts,
                        const Eigen::Ref<const Eigen::MatrixXd>& actuals);

double reconciliation_loss(const HierarchyDag& dag, const Eigen::Ref<const Eigen::MatrixXd>& forecasts,
                           Eigen::Index t0, Eigen::Index horizon);

double total_objective(const ModelParams& params, const PanelData& data, const ObjectiveConfig& cfg);

/// dP/dF for an n x k forecast matrix, k = t0 when lambda is zero, else T.
Eigen::MatrixXd output_sensitivity(const HierarchyDag& dag,
                                   const Eigen::Ref<const Eigen::MatrixXd>& forecasts,
                                   const Eigen::Ref<const Eigen::MatrixXd>& targets,
                                   const ObjectiveConfig& cfg);

struct ObjectiveEval {
  double value = 0.0;
  double forecasting = 0.0;
  double reconciliation = 0.0;
  Eigen::MatrixXd forecasts;              // n x k, the columns the objective needs
  std::vector<Eigen::VectorXd> gradient;  // one per parameter block
};

ObjectiveEval evaluate(const ModelParams& params, const PanelData& data, const ObjectiveConfig& cfg,
                       bool with_gradient);

/// Exact gradient of the joint objective, one flat vector per parameter block.
std::vector<Eigen::VectorXd> objective_gradient(const ModelParams& params, const PanelData& data,
                                                const ObjectiveConfig& cfg);

/// Partial gradient for one node's parameters given cached n x T forecasts.
/// Reads only that node's covariates and targets.
Eigen::VectorXd node_gradient(const ModelParams& params, const PanelData& data,
                              const ObjectiveConfig& cfg, const Eigen::MatrixXd& cached_forecasts,
                              NodeId node);

/// residual^2 / n: a lower bound on sum_i (yhat_i - y_i)^2 over the n nodes
/// of a constraint whenever the truth satisfies that constraint.
double cauchy_schwarz_lower_bound(double residual, std::size_t n);

}  // namespace hfr
