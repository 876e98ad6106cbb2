#include "hfr/objective.hpp"

#include <string>

#include "hfr/error.hpp"

namespace hfr {

const Eigen::MatrixXd& PanelData::node_covariates(NodeId i) const {
  if (probe) ++probe->covariate_reads.at(i);
  return covariates.at(i);
}

Eigen::MatrixXd::ConstRowXpr PanelData::node_targets(NodeId i) const {
  if (probe) ++probe->target_reads.at(i);
  return targets.row(static_cast<Eigen::Index>(i));
}

void check_consistent(const ModelParams& params, const PanelData& data, const ObjectiveConfig& cfg) {
  if (!(cfg.lambda >= 0.0)) throw Error(ErrorCode::InvalidConfig, "lambda must be >= 0");
  if (cfg.t0 < 1 || cfg.t0 > cfg.horizon) {
    throw Error(ErrorCode::InvalidConfig, "need 1 <= t0 <= T, got t0=" + std::to_string(cfg.t0) +
                                              " T=" + std::to_string(cfg.horizon));
  }
  const std::size_t n = data.n_nodes();
  if (data.covariates.size() != n || static_cast<std::size_t>(data.targets.rows()) != n) {
    throw Error(ErrorCode::DimensionMismatch, "panel must hold covariates and targets for every node");
  }
  if (data.t0() != cfg.t0 || data.horizon() != cfg.horizon) {
    throw Error(ErrorCode::DimensionMismatch, "panel window differs from objective config");
  }
  for (const auto& x : data.covariates) {
    if (x.rows() != cfg.horizon) {
      throw Error(ErrorCode::DimensionMismatch, "covariates must cover the full horizon");
    }
  }
  if (params.shared) {
    if (static_cast<std::size_t>(params.shared->w2.rows()) != n) {
      throw Error(ErrorCode::DimensionMismatch, "shared model output count differs from node count");
    }
    for (const auto& x : data.covariates) {
      if (x.cols() != params.shared->w1.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "shared model input dimension mismatch");
      }
    }
    return;
  }
  if (params.nodes.size() != n) {
    throw Error(ErrorCode::DimensionMismatch, "need one model per node");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (input_dim(params.nodes[i]) != static_cast<std::size_t>(data.covariates[i].cols())) {
      throw Error(ErrorCode::DimensionMismatch,
                  "model " + std::to_string(i) + " input dimension differs from its covariates");
    }
  }
}

Eigen::MatrixXd compute_forecasts(const ModelParams& params, const PanelData& data,
                                  Eigen::Index t_end) {
  if (t_end < 0) t_end = data.horizon();
  if (params.shared) {
    return shared_forward_batch(*params.shared, data.node_covariates(0).topRows(t_end));
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(data.n_nodes()), t_end);
  for (std::size_t i = 0; i < data.n_nodes(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) =
        forward_batch(params.nodes[i], data.node_covariates(i).topRows(t_end)).transpose();
  }
  return out;
}

double forecasting_loss(const Eigen::Ref<const Eigen::MatrixXd>& forecasts,
                        const Eigen::Ref<const Eigen::MatrixXd>& actuals) {
  if (forecasts.rows() != actuals.rows() || forecasts.cols() != actuals.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "forecasts and actuals differ in shape");
  }
  return (forecasts - actuals).squaredNorm();
}

double reconciliation_loss(const HierarchyDag& dag, const Eigen::Ref<const Eigen::MatrixXd>& forecasts,
                           Eigen::Index t0, Eigen::Index horizon) {
  if (horizon <= t0) return 0.0;
  if (forecasts.cols() < horizon) {
    throw Error(ErrorCode::DimensionMismatch, "forecasts do not cover the forecast window");
  }
  return reconciliation_residuals(dag, forecasts, t0, horizon).squaredNorm();
}

double total_objective(const ModelParams& params, const PanelData& data, const ObjectiveConfig& cfg) {
  return evaluate(params, data, cfg, false).value;
}

namespace {

bool penalty_active(const PanelData& data, const ObjectiveConfig& cfg) {
  return cfg.lambda > 0.0 && cfg.horizon > cfg.t0 && !data.dag.constraints.empty();
}

}  // namespace

Eigen::MatrixXd output_sensitivity(const HierarchyDag& dag,
                                   const Eigen::Ref<const Eigen::MatrixXd>& forecasts,
                                   const Eigen::Ref<const Eigen::MatrixXd>& targets,
                                   const ObjectiveConfig& cfg) {
  Eigen::MatrixXd sens = Eigen::MatrixXd::Zero(forecasts.rows(), forecasts.cols());
  sens.leftCols(cfg.t0) = 2.0 * (forecasts.leftCols(cfg.t0) - targets);
  if (forecasts.cols() > cfg.t0 && cfg.lambda > 0.0 && !dag.constraints.empty()) {
    const Eigen::Index width = forecasts.cols() - cfg.t0;
    const Eigen::MatrixXd residuals =
        reconciliation_residuals(dag, forecasts, cfg.t0, forecasts.cols());
    // d/dF of lambda * ||C F||^2 is 2 lambda C^T (C F); sign +1 for parents, -1 for children.
    for (std::size_t c = 0; c < dag.constraints.size(); ++c) {
      const auto& con = dag.constraints[c];
      const auto r = residuals.row(static_cast<Eigen::Index>(c));
      sens.row(con.parent).segment(cfg.t0, width) += 2.0 * cfg.lambda * r;
      for (NodeId child : con.children) {
        sens.row(child).segment(cfg.t0, width) -= 2.0 * cfg.lambda * r;
      }
    }
  }
  return sens;
}

ObjectiveEval evaluate(const ModelParams& params, const PanelData& data, const ObjectiveConfig& cfg,
                       bool with_gradient) {
  check_consistent(params, data, cfg);
  const bool penalty = penalty_active(data, cfg);
  const Eigen::Index cols = penalty ? cfg.horizon : cfg.t0;
  const std::size_t n = data.n_nodes();

  ObjectiveEval out;
  std::vector<BatchCache> caches(params.shared ? 1 : n);
  if (params.shared) {
    out.forecasts = shared_forward_batch(*params.shared, data.node_covariates(0).topRows(cols),
                                         with_gradient ? &caches[0] : nullptr);
  } else {
    out.forecasts.resize(static_cast<Eigen::Index>(n), cols);
    for (std::size_t i = 0; i < n; ++i) {
      out.forecasts.row(static_cast<Eigen::Index>(i)) =
          forward_batch(params.nodes[i], data.node_covariates(i).topRows(cols),
                        with_gradient ? &caches[i] : nullptr)
              .transpose();
    }
  }
  out.forecasting = forecasting_loss(out.forecasts.leftCols(cfg.t0), data.targets);
  out.reconciliation = penalty ? reconciliation_loss(data.dag, out.forecasts, cfg.t0, cfg.horizon) : 0.0;
  out.value = out.forecasting + cfg.lambda * out.reconciliation;
  if (!with_gradient) return out;

  const Eigen::MatrixXd sens = output_sensitivity(data.dag, out.forecasts, data.targets, cfg);
  if (params.shared) {
    out.gradient.push_back(
        shared_backward_batch(*params.shared, data.node_covariates(0).topRows(cols), sens, &caches[0]));
    return out;
  }
  out.gradient.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.gradient.push_back(backward_batch(params.nodes[i], data.node_covariates(i).topRows(cols),
                                          sens.row(static_cast<Eigen::Index>(i)).transpose(),
                                          &caches[i]));
  }
  return out;
}

std::vector<Eigen::VectorXd> objective_gradient(const ModelParams& params, const PanelData& data,
                                                const ObjectiveConfig& cfg) {
  return evaluate(params, data, cfg, true).gradient;
}

Eigen::VectorXd node_gradient(const ModelParams& params, const PanelData& data,
                              const ObjectiveConfig& cfg, const Eigen::MatrixXd& cached_forecasts,
                              NodeId node) {
  if (params.shared) {
    throw Error(ErrorCode::InvalidConfig, "node blocks are undefined for a shared model");
  }
  const bool penalty = penalty_active(data, cfg);
  const Eigen::Index cols = penalty ? cfg.horizon : cfg.t0;
  const auto row = static_cast<Eigen::Index>(node);
  Eigen::VectorXd upstream(cols);
  upstream.head(cfg.t0) =
      2.0 * (cached_forecasts.row(row).head(cfg.t0) - data.node_targets(node)).transpose();
  if (penalty) {
    const Eigen::Index width = cfg.horizon - cfg.t0;
    auto tail = upstream.tail(width);
    tail.setZero();
    for (const auto& con : data.dag.constraints) {
      double sign = 0.0;
      if (con.parent == node) {
        sign = 1.0;
      } else {
        for (NodeId child : con.children) {
          if (child == node) sign = -1.0;
        }
      }
      if (sign == 0.0) continue;
      Eigen::VectorXd r = cached_forecasts.row(con.parent).segment(cfg.t0, width).transpose();
      for (NodeId child : con.children) r -= cached_forecasts.row(child).segment(cfg.t0, width).transpose();
      tail += (2.0 * cfg.lambda * sign) * r;
    }
  }
  return backward_batch(params.nodes.at(node), data.node_covariates(node).topRows(cols), upstream);
}

double cauchy_schwarz_lower_bound(double residual, std::size_t n) {
  return residual * residual / static_cast<double>(n);
}

}  // namespace hfr
