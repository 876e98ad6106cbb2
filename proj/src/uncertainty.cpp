#include "hfr/uncertainty.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <string>

#include "hfr/error.hpp"
#include "hfr/io.hpp"

namespace hfr {

ErrorCovariance estimate_error_covariance(const Eigen::Ref<const Eigen::MatrixXd>& train_residuals) {
  const Eigen::Index t0 = train_residuals.cols();
  if (t0 < 2) throw Error(ErrorCode::InsufficientData, "need at least two residual columns");
  const Eigen::VectorXd mean = train_residuals.rowwise().mean();
  const Eigen::MatrixXd centered = train_residuals.colwise() - mean;
  ErrorCovariance out;
  out.sigma = centered * centered.transpose() / static_cast<double>(t0 - 1);
  out.sigma.diagonal().array() += kCovarianceJitter;
  return out;
}

double reconciliation_variance(const ErrorCovariance& cov, const AggregationConstraint& constraint) {
  const auto n = static_cast<std::size_t>(cov.sigma.rows());
  auto check = [&](NodeId i) {
    if (i >= n) {
      throw Error(ErrorCode::IndexOutOfRange,
                  "node " + std::to_string(i) + " outside covariance of size " + std::to_string(n));
    }
  };
  check(constraint.parent);
  for (NodeId c : constraint.children) check(c);

  const auto& s = cov.sigma;
  const auto p = static_cast<Eigen::Index>(constraint.parent);
  double var = s(p, p);
  for (NodeId ci : constraint.children) {
    const auto i = static_cast<Eigen::Index>(ci);
    var += s(i, i) - 2.0 * s(p, i);
    for (NodeId cj : constraint.children) {
      if (cj != ci) var += s(i, static_cast<Eigen::Index>(cj));
    }
  }
  return var;
}

double half_cauchy_logpdf(double x, double scale) {
  if (x < 0.0) return -std::numeric_limits<double>::infinity();
  const double u = x / scale;
  return std::log(2.0 / (std::numbers::pi * scale)) - std::log1p(u * u);
}

namespace {

void require_correlation(const Eigen::Ref<const Eigen::MatrixXd>& corr) {
  if (corr.rows() != corr.cols()) throw Error(ErrorCode::NotCorrelation, "matrix is not square");
  for (Eigen::Index i = 0; i < corr.rows(); ++i) {
    if (std::abs(corr(i, i) - 1.0) > 1e-12) {
      throw Error(ErrorCode::NotCorrelation, "diagonal entries must be 1");
    }
    for (Eigen::Index j = 0; j < i; ++j) {
      if (std::abs(corr(i, j) - corr(j, i)) > 1e-12) {
        throw Error(ErrorCode::NotCorrelation, "matrix is not symmetric");
      }
    }
  }
}

Eigen::LLT<Eigen::MatrixXd> factor(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::NotPositiveDefinite, "Cholesky factorization failed");
  }
  return llt;
}

double log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace

double lkj_logpdf_unnormalized(const Eigen::Ref<const Eigen::MatrixXd>& corr, double eta) {
  require_correlation(corr);
  const auto llt = factor(corr);
  return (eta - 1.0) * log_det(llt);
}

double joint_gaussian_loglik(const Eigen::Ref<const Eigen::MatrixXd>& residual_panel,
                             const ErrorCovariance& cov) {
  if (residual_panel.rows() != cov.sigma.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "residual rows differ from covariance size");
  }
  const auto llt = factor(cov.sigma);
  const double n = static_cast<double>(residual_panel.rows());
  const double steps = static_cast<double>(residual_panel.cols());
  // sum_t r_t^T Sigma^-1 r_t = ||L^-1 R||_F^2
  const Eigen::MatrixXd whitened = llt.matrixL().solve(residual_panel);
  return -0.5 * whitened.squaredNorm() - 0.5 * steps * log_det(llt) -
         0.5 * steps * n * std::log(2.0 * std::numbers::pi);
}

Eigen::MatrixXd correlation_from_covariance(const Eigen::Ref<const Eigen::MatrixXd>& sigma) {
  const Eigen::VectorXd inv_sd = sigma.diagonal().cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd corr = inv_sd.asDiagonal() * sigma * inv_sd.asDiagonal();
  corr.diagonal().setOnes();
  return corr;
}

double log_prior(const ErrorCovariance& cov, double sigma_rec, const PriorConfig& prior) {
  if (!(prior.eta > 0.0) || !(prior.omega_scale > 0.0) || !(prior.lambda_rec > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "prior parameters must be positive");
  }
  double out = 0.0;
  for (Eigen::Index i = 0; i < cov.sigma.rows(); ++i) {
    out += half_cauchy_logpdf(std::sqrt(cov.sigma(i, i)), prior.omega_scale);
  }
  out += lkj_logpdf_unnormalized(correlation_from_covariance(cov.sigma), prior.eta);
  out += half_cauchy_logpdf(sigma_rec, 1.0 / prior.lambda_rec);
  return out;
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    throw Error(ErrorCode::InvalidConfig, "probability outside [0, 1]");
  }
  // Acklam's rational approximation, then one Halley step on erfc.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x = 0.0;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

IntervalReport prediction_intervals(const Eigen::Ref<const Eigen::MatrixXd>& forecasts,
                                    const ErrorCovariance& cov, const HierarchyDag& dag,
                                    double level, long first_t) {
  if (!(level > 0.0 && level < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "interval level must lie in (0, 1)");
  }
  if (forecasts.rows() != cov.sigma.rows() ||
      static_cast<std::size_t>(forecasts.rows()) != dag.n_nodes) {
    throw Error(ErrorCode::DimensionMismatch, "forecasts, covariance and hierarchy sizes differ");
  }
  IntervalReport out;
  out.level = level;
  out.first_t = first_t;
  out.z = normal_quantile(0.5 + 0.5 * level);
  out.forecast = forecasts;
  const Eigen::VectorXd half = out.z * cov.sigma.diagonal().cwiseMax(0.0).cwiseSqrt();
  out.lower = forecasts.colwise() - half;
  out.upper = forecasts.colwise() + half;

  const auto n_c = static_cast<Eigen::Index>(dag.constraints.size());
  out.rec_variance.resize(n_c);
  out.rec_lower.resize(n_c, forecasts.cols());
  out.rec_upper.resize(n_c, forecasts.cols());
  for (Eigen::Index c = 0; c < n_c; ++c) {
    out.rec_variance(c) = reconciliation_variance(cov, dag.constraints[static_cast<std::size_t>(c)]);
    const double w = out.z * std::sqrt(std::max(out.rec_variance(c), 0.0));
    out.rec_lower.row(c).setConstant(-w);
    out.rec_upper.row(c).setConstant(w);
  }
  return out;
}

void write_intervals(const IntervalReport& report, const std::filesystem::path& dir) {
  CsvTable nodes;
  nodes.header = {"node", "t", "forecast", "lower", "upper"};
  const Eigen::Index n = report.forecast.rows();
  const Eigen::Index k = report.forecast.cols();
  nodes.values.resize(n * k, 5);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index t = 0; t < k; ++t) {
      nodes.values.row(i * k + t) << static_cast<double>(i), static_cast<double>(report.first_t + t),
          report.forecast(i, t), report.lower(i, t), report.upper(i, t);
    }
  }
  write_csv(dir / "intervals.csv", nodes);

  CsvTable rec;
  rec.header = {"constraint_id", "t", "rec_lower", "rec_upper"};
  const Eigen::Index n_c = report.rec_lower.rows();
  rec.values.resize(n_c * k, 4);
  for (Eigen::Index c = 0; c < n_c; ++c) {
    for (Eigen::Index t = 0; t < k; ++t) {
      rec.values.row(c * k + t) << static_cast<double>(c), static_cast<double>(report.first_t + t),
          report.rec_lower(c, t), report.rec_upper(c, t);
    }
  }
  write_csv(dir / "reconciliation_intervals.csv", rec);
}

}  // namespace hfr
