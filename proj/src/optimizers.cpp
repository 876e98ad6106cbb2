#include "hfr/optimizers.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>

#include <nlohmann/json.hpp>

#include "hfr/error.hpp"

namespace hfr {

OptimizerMethod parse_optimizer_method(const std::string& name) {
  if (name == "gd") return OptimizerMethod::gd;
  if (name == "rcd") return OptimizerMethod::rcd;
  throw Error(ErrorCode::InvalidConfig, "unknown optimizer '" + name + "' (expected gd or rcd)");
}

const char* to_string(OptimizerMethod method) {
  return method == OptimizerMethod::gd ? "gd" : "rcd";
}

namespace {

std::vector<double> broadcast_steps(const OptimizerConfig& cfg, std::size_t blocks) {
  std::vector<double> steps = cfg.step_sizes;
  if (steps.size() == 1) steps.assign(blocks, steps.front());
  if (steps.size() != blocks) {
    throw Error(ErrorCode::InvalidConfig, "need 1 or " + std::to_string(blocks) +
                                              " step sizes, got " + std::to_string(steps.size()));
  }
  for (double s : steps) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw Error(ErrorCode::InvalidConfig, "step sizes must be positive and finite");
    }
  }
  return steps;
}

void check_log_every(const OptimizerConfig& cfg) {
  if (cfg.log_every == 0) throw Error(ErrorCode::InvalidConfig, "log_every must be >= 1");
}

}  // namespace

FitResult gd_fit(const ModelParams& params0, const PanelData& data, const ObjectiveConfig& obj_cfg,
                 const OptimizerConfig& opt_cfg) {
  check_log_every(opt_cfg);
  const auto steps = broadcast_steps(opt_cfg, params0.block_count());
  const std::size_t blocks = params0.block_count();

  FitResult result;
  ModelParams params = params0;
  ModelParams best = params0;
  double best_value = std::numeric_limits<double>::infinity();
  double best_grad_norm = 0.0;

  for (std::size_t k = 0;; ++k) {
    ObjectiveEval eval = evaluate(params, data, obj_cfg, true);
    result.block_gradients += data.n_nodes();
    if (!std::isfinite(eval.value)) {
      throw Error(ErrorCode::DivergenceDetected,
                  "objective is not finite after " + std::to_string(k) + " gradient steps");
    }
    double grad_sq = 0.0;
    for (const auto& g : eval.gradient) grad_sq += g.squaredNorm();
    const double grad_norm = std::sqrt(grad_sq);
    if (eval.value < best_value) {
      best_value = eval.value;
      best = params;
      best_grad_norm = grad_norm;
    }
    if (k % opt_cfg.log_every == 0) result.objective_trace.push_back(eval.value);
    result.iterations_run = k;
    if (opt_cfg.convergence_tol > 0.0 && grad_norm < opt_cfg.convergence_tol) {
      result.converged = true;
      break;
    }
    if (k == opt_cfg.iterations) break;
    for (std::size_t b = 0; b < blocks; ++b) {
      params.set_block(b, params.block(b) - steps[b] * eval.gradient[b]);
    }
  }

  result.objective = best_value;
  result.gradient_norm = best_grad_norm;
  result.forecasts = compute_forecasts(best, data);
  result.params = std::move(best);
  return result;
}

FitResult rcd_fit(const ModelParams& params0, const PanelData& data, const ObjectiveConfig& obj_cfg,
                  const OptimizerConfig& opt_cfg) {
  if (params0.shared) {
    throw Error(ErrorCode::InvalidConfig, "rcd needs per-node parameter blocks");
  }
  check_log_every(opt_cfg);
  check_consistent(params0, data, obj_cfg);
  const std::size_t n = data.n_nodes();
  const auto steps = broadcast_steps(opt_cfg, n);
  if (opt_cfg.record_access && data.probe == nullptr) {
    throw Error(ErrorCode::InvalidConfig, "record_access needs an access probe on the panel");
  }

  // Diagnostics read data.targets directly so they do not show up in the probe.
  auto objective_of = [&](const Eigen::MatrixXd& f) {
    double value = forecasting_loss(f.leftCols(obj_cfg.t0), data.targets);
    if (obj_cfg.lambda > 0.0) {
      value += obj_cfg.lambda * reconciliation_loss(data.dag, f, obj_cfg.t0, obj_cfg.horizon);
    }
    return value;
  };

  FitResult result;
  ModelParams params = params0;
  Eigen::MatrixXd cache = compute_forecasts(params, data);
  result.objective_trace.push_back(objective_of(cache));

  std::mt19937_64 rng(opt_cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<double> block_norm_sq(n, std::numeric_limits<double>::infinity());

  for (std::size_t k = 0; k < opt_cfg.iterations; ++k) {
    const std::size_t i = pick(rng);
    AccessProbe before;
    if (opt_cfg.record_access) before = *data.probe;

    const Eigen::VectorXd g = node_gradient(params, data, obj_cfg, cache, i);
    ++result.block_gradients;
    block_norm_sq[i] = g.squaredNorm();
    params.set_block(i, params.block(i) - steps[i] * g);
    cache.row(static_cast<Eigen::Index>(i)) =
        forward_batch(params.nodes[i], data.node_covariates(i)).transpose();
    if (!cache.row(static_cast<Eigen::Index>(i)).allFinite()) {
      throw Error(ErrorCode::DivergenceDetected,
                  "forecasts of node " + std::to_string(i) + " are not finite after iteration " +
                      std::to_string(k));
    }

    if (opt_cfg.record_access) {
      std::vector<NodeId> touched;
      for (NodeId j = 0; j < n; ++j) {
        if (data.probe->covariate_reads[j] != before.covariate_reads[j] ||
            data.probe->target_reads[j] != before.target_reads[j]) {
          touched.push_back(j);
        }
      }
      result.access_log.push_back(std::move(touched));
    }

    result.iterations_run = k + 1;
    if ((k + 1) % opt_cfg.log_every == 0) result.objective_trace.push_back(objective_of(cache));

    // Convergence uses the most recent partial gradient of every block.
    if (opt_cfg.convergence_tol > 0.0 && (k + 1) % n == 0) {
      double sq = 0.0;
      for (double v : block_norm_sq) sq += v;
      if (std::sqrt(sq) < opt_cfg.convergence_tol) {
        result.converged = true;
        break;
      }
    }
  }

  result.objective = objective_of(cache);
  if (!std::isfinite(result.objective)) {
    throw Error(ErrorCode::DivergenceDetected, "final objective is not finite");
  }
  double sq = 0.0;
  for (double v : block_norm_sq) sq += std::isfinite(v) ? v : 0.0;
  result.gradient_norm = std::sqrt(sq);
  result.forecasts = std::move(cache);
  result.params = std::move(params);
  return result;
}

FitResult fit(const ModelParams& params0, const PanelData& data, const ObjectiveConfig& obj_cfg,
              const OptimizerConfig& opt_cfg) {
  return opt_cfg.method == OptimizerMethod::gd ? gd_fit(params0, data, obj_cfg, opt_cfg)
                                               : rcd_fit(params0, data, obj_cfg, opt_cfg);
}

std::vector<double> curvature_step_sizes(const ModelParams& params, const PanelData& data,
                                         const ObjectiveConfig& cfg, double scale,
                                         std::size_t power_iterations) {
  check_consistent(params, data, cfg);
  const bool penalty = cfg.lambda > 0.0 && cfg.horizon > cfg.t0 && !data.dag.constraints.empty();
  const Eigen::Index cols = penalty ? cfg.horizon : cfg.t0;
  const auto touching = constraints_touching(data.dag);
  std::mt19937_64 rng(0x5eed);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto largest_eigenvalue = [&](std::size_t dim, auto&& apply) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(dim));
    for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = normal(rng);
    v.normalize();
    double eig = 0.0;
    for (std::size_t it = 0; it < power_iterations; ++it) {
      Eigen::VectorXd w = apply(v);
      eig = v.dot(w);
      const double norm = w.norm();
      if (norm == 0.0) break;
      v = w / norm;
    }
    return eig;
  };

  std::vector<double> steps;
  if (params.shared) {
    const auto& model = *params.shared;
    const auto x = data.node_covariates(0).topRows(cols);
    BatchCache cache;
    (void)shared_forward_batch(model, x, &cache);
    const Eigen::MatrixXd c = constraint_matrix(data.dag);
    auto apply = [&](const Eigen::VectorXd& v) {
      Eigen::MatrixXd jv = shared_jvp_batch(model, x, v, &cache);
      Eigen::MatrixXd hjv = 2.0 * jv;
      if (penalty) {
        const Eigen::Index width = cfg.horizon - cfg.t0;
        hjv.rightCols(width) = 2.0 * cfg.lambda * c.transpose() * (c * jv.rightCols(width));
      }
      return Eigen::VectorXd(shared_backward_batch(model, x, hjv, &cache));
    };
    const double eig = largest_eigenvalue(static_cast<std::size_t>(to_flat(model).size()), apply);
    steps.push_back(scale / eig);
    return steps;
  }

  for (std::size_t i = 0; i < data.n_nodes(); ++i) {
    const auto& model = params.nodes[i];
    const auto x = data.node_covariates(i).topRows(cols);
    BatchCache cache;
    (void)forward_batch(model, x, &cache);
    Eigen::VectorXd weights = Eigen::VectorXd::Constant(cols, 2.0);
    if (penalty) {
      weights.tail(cfg.horizon - cfg.t0)
          .setConstant(2.0 * cfg.lambda * static_cast<double>(touching[i].size()));
    }
    auto apply = [&](const Eigen::VectorXd& v) {
      const Eigen::VectorXd jv = jvp_batch(model, x, v, &cache);
      return backward_batch(model, x, weights.cwiseProduct(jv), &cache);
    };
    const double eig = largest_eigenvalue(param_count(model), apply);
    steps.push_back(scale / eig);
  }
  return steps;
}

void to_json(nlohmann::json& j, const FitResult& result) {
  j = nlohmann::json{{"converged", result.converged},
                     {"objective", result.objective},
                     {"gradient_norm", result.gradient_norm},
                     {"iterations", result.iterations_run},
                     {"block_gradients", result.block_gradients},
                     {"objective_trace", result.objective_trace},
                     {"params", result.params}};
}

}  // namespace hfr
