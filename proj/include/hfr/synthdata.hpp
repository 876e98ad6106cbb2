#pragma once

// Synthetic counterfactual benchmark: stationary Gaussian-process covariates,
// leaf targets linear in the covariates and in covariate x normalized time,
// parents summed up the hierarchy.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "hfr/hierarchy.hpp"
#include "hfr/objective.hpp"

namespace hfr {

/// Exponential (Matern-1/2) kernel sigma^2 exp(-|dt| / length_scale).
struct GpKernelConfig {
  double length_scale = 20.0;
  double marginal_std = 1.0;
};

struct SynthConfig {
  std::size_t m = 10;
  Eigen::Index t0 = 1000;
  Eigen::Index horizon = 2000;
  double noise_std = 0.05;
  double coef_std = -1.0;  // negative means 1/sqrt(m)
  GpKernelConfig kernel;
  HierarchyDag hierarchy = figure1_hierarchy();
  std::uint64_t seed = 0;

  double effective_coef_std() const;
};

void validate(const SynthConfig& cfg);

struct SynthInstance {
  SynthConfig config;
  Eigen::MatrixXd covariates;  // T x m, shared by every node
  Eigen::MatrixXd truth;       // n x T, coherent at every column
  Eigen::MatrixXd theta;       // n_leaves x m
  Eigen::MatrixXd phi;         // n_leaves x m

  /// Training view: covariates for every node, targets over [0, t0) only.
  PanelData panel() const;
};

/// Stationary AR(1) recursion that samples the exponential-kernel GP exactly:
/// x_{t+1} = rho x_t + sigma sqrt(1 - rho^2) z_t, rho = exp(-1 / length_scale).
Eigen::VectorXd sample_gp_series(const GpKernelConfig& cfg, Eigen::Index length, std::mt19937_64& rng);

/// y_t = sum_j x_tj theta_j + (t / T) sum_j x_tj phi_j + eps_t, with t 1-based.
Eigen::VectorXd build_leaf_target(const Eigen::Ref<const Eigen::MatrixXd>& covariates,
                                  const Eigen::Ref<const Eigen::VectorXd>& theta,
                                  const Eigen::Ref<const Eigen::VectorXd>& phi, double noise_std,
                                  std::mt19937_64& rng);

SynthInstance generate(const SynthConfig& cfg);

void to_json(nlohmann::json& j, const SynthConfig& cfg);
void from_json(const nlohmann::json& j, SynthConfig& cfg);

/// Writes X.csv (t, x1..xm), Y.csv (t, y1..yn), hierarchy.json and manifest.json.
void write_instance(const SynthInstance& instance, const std::filesystem::path& dir);
/// Reads back what write_instance produced (theta and phi are not stored).
SynthInstance read_instance(const std::filesystem::path& dir);

}  // namespace hfr
