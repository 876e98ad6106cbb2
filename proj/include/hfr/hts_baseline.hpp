#pragma once

// Post-hoc reconciliation: project independent forecasts onto the coherent
// subspace, y_tilde = S beta with beta the (weighted) least-squares fit of the
// forecasts on the summation matrix S. The normal equations are solved
// matrix-free with conjugate gradients, one column at a time.

#include <cstddef>
#include <functional>
#include <string>

#include <Eigen/Dense>

namespace hfr {

struct CgConfig {
  std::size_t max_iters = 1000;
  double residual_tol = 1e-14;
};

struct CgResult {
  Eigen::VectorXd x;
  std::size_t iterations = 0;
  double relative_residual = 0.0;
};

using LinearOperator = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Solves A x = b for symmetric positive-definite A, starting from x = 0.
/// Throws NotConverged if ||Ax - b|| / ||b|| > residual_tol after max_iters.
CgResult cg_solve(const LinearOperator& a, const Eigen::VectorXd& b, const CgConfig& cfg);

enum class ReconcileMode { ols, wls_var };

ReconcileMode parse_reconcile_mode(const std::string& name);
const char* to_string(ReconcileMode mode);

struct ReconcilerWeights {
  ReconcileMode mode = ReconcileMode::ols;
  Eigen::VectorXd diag_weights;  // wls_var: per-node error variances
};

/// Diagonal WLS weights from per-node variances of training residuals (n x t0).
ReconcilerWeights wls_from_residuals(const Eigen::Ref<const Eigen::MatrixXd>& train_residuals);

Eigen::VectorXd reconcile(const Eigen::Ref<const Eigen::MatrixXd>& summation,
                          const Eigen::Ref<const Eigen::VectorXd>& y_hat,
                          const ReconcilerWeights& weights, const CgConfig& cfg);

Eigen::MatrixXd reconcile_panel(const Eigen::Ref<const Eigen::MatrixXd>& summation,
                                const Eigen::Ref<const Eigen::MatrixXd>& forecasts,
                                const ReconcilerWeights& weights, const CgConfig& cfg);

}  // namespace hfr
