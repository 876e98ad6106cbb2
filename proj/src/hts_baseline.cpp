#include "hfr/hts_baseline.hpp"

#include <cmath>
#include <string>

#include "hfr/error.hpp"

namespace hfr {

CgResult cg_solve(const LinearOperator& a, const Eigen::VectorXd& b, const CgConfig& cfg) {
  if (!(cfg.residual_tol > 0.0)) throw Error(ErrorCode::InvalidConfig, "residual_tol must be > 0");
  CgResult out;
  out.x = Eigen::VectorXd::Zero(b.size());
  const double b_norm = b.norm();
  if (b_norm == 0.0) return out;

  Eigen::VectorXd r = b;
  Eigen::VectorXd p = r;
  double rr = r.squaredNorm();
  while (out.iterations < cfg.max_iters) {
    const Eigen::VectorXd ap = a(p);
    const double pap = p.dot(ap);
    if (!(pap > 0.0)) break;  // A not positive definite along p
    const double alpha = rr / pap;
    out.x += alpha * p;
    r -= alpha * ap;
    ++out.iterations;
    const double rr_next = r.squaredNorm();
    if (std::sqrt(rr_next) <= cfg.residual_tol * b_norm) {
      rr = rr_next;
      break;
    }
    p = r + (rr_next / rr) * p;
    rr = rr_next;
  }
  // The recursive residual drifts; report the true one.
  out.relative_residual = (a(out.x) - b).norm() / b_norm;
  if (out.relative_residual > cfg.residual_tol) {
    throw Error(ErrorCode::NotConverged,
                "relative residual " + std::to_string(out.relative_residual) + " after " +
                    std::to_string(out.iterations) + " iterations");
  }
  return out;
}

ReconcileMode parse_reconcile_mode(const std::string& name) {
  if (name == "ols") return ReconcileMode::ols;
  if (name == "wls_var") return ReconcileMode::wls_var;
  throw Error(ErrorCode::InvalidConfig, "unknown reconciliation mode '" + name + "'");
}

const char* to_string(ReconcileMode mode) { return mode == ReconcileMode::ols ? "ols" : "wls_var"; }

ReconcilerWeights wls_from_residuals(const Eigen::Ref<const Eigen::MatrixXd>& train_residuals) {
  if (train_residuals.cols() < 2) {
    throw Error(ErrorCode::InsufficientData, "need at least two training residuals per node");
  }
  ReconcilerWeights w;
  w.mode = ReconcileMode::wls_var;
  const Eigen::VectorXd mean = train_residuals.rowwise().mean();
  w.diag_weights = (train_residuals.colwise() - mean).rowwise().squaredNorm() /
                   static_cast<double>(train_residuals.cols() - 1);
  return w;
}

namespace {

Eigen::VectorXd inverse_weights(const Eigen::Ref<const Eigen::MatrixXd>& summation,
                                const ReconcilerWeights& weights) {
  const Eigen::Index n = summation.rows();
  if (weights.mode == ReconcileMode::ols) return Eigen::VectorXd::Ones(n);
  if (weights.diag_weights.size() != n) {
    throw Error(ErrorCode::DimensionMismatch, "need one WLS weight per node");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = weights.diag_weights(i);
    if (!(w > 0.0) || !std::isfinite(w)) {
      throw Error(ErrorCode::InvalidConfig, "WLS weights must be finite and > 0");
    }
  }
  return weights.diag_weights.cwiseInverse();
}

}  // namespace

Eigen::VectorXd reconcile(const Eigen::Ref<const Eigen::MatrixXd>& summation,
                          const Eigen::Ref<const Eigen::VectorXd>& y_hat,
                          const ReconcilerWeights& weights, const CgConfig& cfg) {
  if (y_hat.size() != summation.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "forecast length differs from summation rows");
  }
  const Eigen::VectorXd w_inv = inverse_weights(summation, weights);
  // (S^T W^-1 S) beta = S^T W^-1 y_hat
  const LinearOperator normal = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    return summation.transpose() * w_inv.cwiseProduct(summation * v);
  };
  const Eigen::VectorXd rhs = summation.transpose() * w_inv.cwiseProduct(y_hat);
  return summation * cg_solve(normal, rhs, cfg).x;
}

Eigen::MatrixXd reconcile_panel(const Eigen::Ref<const Eigen::MatrixXd>& summation,
                                const Eigen::Ref<const Eigen::MatrixXd>& forecasts,
                                const ReconcilerWeights& weights, const CgConfig& cfg) {
  Eigen::MatrixXd out(forecasts.rows(), forecasts.cols());
  for (Eigen::Index t = 0; t < forecasts.cols(); ++t) {
    out.col(t) = reconcile(summation, forecasts.col(t), weights, cfg);
  }
  return out;
}

}  // namespace hfr
