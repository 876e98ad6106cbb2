#pragma once

// Plug-in uncertainty for reconciled forecasts: a sample covariance of
// training errors, the variance it implies for each constraint residual, the
// prior and likelihood densities of the Gaussian formulation, and prediction
// bands.

#include <cstddef>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "hfr/hierarchy.hpp"

namespace hfr {

struct ErrorCovariance {
  Eigen::MatrixXd sigma;  // n x n
};

struct PriorConfig {
  double eta = 2.0;          // LKJ shape
  double omega_scale = 1.0;  // half-Cauchy scale of the marginal standard deviations
  double lambda_rec = 1.0;   // reconciliation std ~ half-Cauchy(1 / lambda_rec)
};

inline constexpr double kCovarianceJitter = 1e-9;

/// Sample covariance (divisor t0 - 1) of n x t0 residuals plus 1e-9 I.
ErrorCovariance estimate_error_covariance(const Eigen::Ref<const Eigen::MatrixXd>& train_residuals);

/// Var(y_parent - sum_children y_child) under covariance sigma.
double reconciliation_variance(const ErrorCovariance& cov, const AggregationConstraint& constraint);

double half_cauchy_logpdf(double x, double scale);

/// (eta - 1) log det(corr).
double lkj_logpdf_unnormalized(const Eigen::Ref<const Eigen::MatrixXd>& corr, double eta);

/// sum_t log N(residual_t; 0, sigma) for an n x t0 residual panel.
double joint_gaussian_loglik(const Eigen::Ref<const Eigen::MatrixXd>& residual_panel,
                             const ErrorCovariance& cov);

Eigen::MatrixXd correlation_from_covariance(const Eigen::Ref<const Eigen::MatrixXd>& sigma);

/// Log prior of (sigma, sigma_rec): half-Cauchy on marginal standard
/// deviations, LKJ on the correlation, half-Cauchy on sigma_rec. Unnormalized
/// in the LKJ term. Together with joint_gaussian_loglik this gives a MAP
/// objective.
double log_prior(const ErrorCovariance& cov, double sigma_rec, const PriorConfig& prior);

/// Inverse standard normal CDF.
double normal_quantile(double p);

struct IntervalReport {
  double level = 0.95;
  double z = 0.0;
  Eigen::MatrixXd forecast;          // n x k
  Eigen::MatrixXd lower, upper;      // n x k, forecast -/+ z sqrt(sigma_ii)
  Eigen::VectorXd rec_variance;      // per constraint
  Eigen::MatrixXd rec_lower, rec_upper;  // n_constraints x k, 0 -/+ z sqrt(rec_variance)
  long first_t = 1;                  // 1-based time of column 0
};

IntervalReport prediction_intervals(const Eigen::Ref<const Eigen::MatrixXd>& forecasts,
                                    const ErrorCovariance& cov, const HierarchyDag& dag,
                                    double level, long first_t = 1);

/// intervals.csv: node,t,forecast,lower,upper
/// reconciliation_intervals.csv: constraint_id,t,rec_lower,rec_upper
void write_intervals(const IntervalReport& report, const std::filesystem::path& dir);

}  // namespace hfr
