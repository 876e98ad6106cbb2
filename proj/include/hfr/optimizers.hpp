#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "hfr/forecast_models.hpp"
#include "hfr/objective.hpp"

namespace hfr {

enum class OptimizerMethod { gd, rcd };

OptimizerMethod parse_optimizer_method(const std::string& name);
const char* to_string(OptimizerMethod method);

struct OptimizerConfig {
  OptimizerMethod method = OptimizerMethod::gd;
  /// One step size per parameter block, or a single value for all blocks.
  std::vector<double> step_sizes{1e-3};
  /// gd: full gradient steps. rcd: single-block steps.
  std::size_t iterations = 0;
  std::uint64_t seed = 0;
  /// Stop once the gradient norm drops below this; 0 disables the check.
  double convergence_tol = 0.0;
  std::size_t log_every = 1;
  /// rcd only: record which nodes' data each iteration read (needs data.probe).
  bool record_access = false;
};

struct FitResult {
  ModelParams params;
  std::vector<double> objective_trace;
  Eigen::MatrixXd forecasts;  // n x T
  bool converged = false;
  double objective = 0.0;
  double gradient_norm = 0.0;
  std::size_t iterations_run = 0;
  /// Block gradients evaluated, counted in node units (a full gd gradient on
  /// n nodes counts n).
  std::size_t block_gradients = 0;
  std::vector<std::vector<NodeId>> access_log;
};

/// Full-batch gradient descent. Returns the iterate with the lowest objective
/// seen. Throws DivergenceDetected if the objective stops being finite.
FitResult gd_fit(const ModelParams& params0, const PanelData& data, const ObjectiveConfig& obj_cfg,
                 const OptimizerConfig& opt_cfg);

/// Randomized block coordinate descent: each iteration samples one node
/// uniformly, steps along that node's partial gradient and refreshes only that
/// node's cached forecasts.
FitResult rcd_fit(const ModelParams& params0, const PanelData& data, const ObjectiveConfig& obj_cfg,
                  const OptimizerConfig& opt_cfg);

FitResult fit(const ModelParams& params0, const PanelData& data, const ObjectiveConfig& obj_cfg,
              const OptimizerConfig& opt_cfg);

/// Per-block step sizes scale / L_b, with L_b the largest eigenvalue of the
/// Gauss-Newton block J_b^T H_F J_b at the given parameters (power iteration).
/// For linear models this is the exact block Lipschitz constant.
std::vector<double> curvature_step_sizes(const ModelParams& params, const PanelData& data,
                                         const ObjectiveConfig& cfg, double scale = 1.0,
                                         std::size_t power_iterations = 50);

void to_json(nlohmann::json& j, const FitResult& result);

}  // namespace hfr
