#include "hfr/synthdata.hpp"

#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "hfr/error.hpp"
#include "hfr/io.hpp"

namespace hfr {

double SynthConfig::effective_coef_std() const {
  return coef_std > 0.0 ? coef_std : 1.0 / std::sqrt(static_cast<double>(m));
}

void validate(const SynthConfig& cfg) {
  if (cfg.m < 1) throw Error(ErrorCode::InvalidConfig, "m must be >= 1");
  if (cfg.t0 < 1 || cfg.t0 >= cfg.horizon) {
    throw Error(ErrorCode::InvalidConfig, "need 1 <= t0 < T");
  }
  if (!(cfg.kernel.length_scale > 0.0) || !(cfg.kernel.marginal_std > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "GP length scale and marginal std must be positive");
  }
  if (!(cfg.noise_std >= 0.0)) throw Error(ErrorCode::InvalidConfig, "noise_std must be >= 0");
  validate(cfg.hierarchy);
}

Eigen::VectorXd sample_gp_series(const GpKernelConfig& cfg, Eigen::Index length, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double rho = std::exp(-1.0 / cfg.length_scale);
  const double innovation = cfg.marginal_std * std::sqrt(1.0 - rho * rho);
  Eigen::VectorXd x(length);
  if (length == 0) return x;
  x(0) = cfg.marginal_std * normal(rng);
  for (Eigen::Index t = 1; t < length; ++t) x(t) = rho * x(t - 1) + innovation * normal(rng);
  return x;
}

Eigen::VectorXd build_leaf_target(const Eigen::Ref<const Eigen::MatrixXd>& covariates,
                                  const Eigen::Ref<const Eigen::VectorXd>& theta,
                                  const Eigen::Ref<const Eigen::VectorXd>& phi, double noise_std,
                                  std::mt19937_64& rng) {
  if (theta.size() != covariates.cols() || phi.size() != covariates.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "coefficient length differs from covariate count");
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Index horizon = covariates.rows();
  const Eigen::VectorXd level = covariates * theta;
  const Eigen::VectorXd interaction = covariates * phi;
  Eigen::VectorXd y(horizon);
  for (Eigen::Index t = 0; t < horizon; ++t) {
    const double tau = static_cast<double>(t + 1) / static_cast<double>(horizon);
    y(t) = level(t) + tau * interaction(t);
    if (noise_std > 0.0) y(t) += noise_std * normal(rng);
  }
  return y;
}

SynthInstance generate(const SynthConfig& cfg) {
  validate(cfg);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto m = static_cast<Eigen::Index>(cfg.m);

  SynthInstance inst;
  inst.config = cfg;
  inst.covariates.resize(cfg.horizon, m);
  for (Eigen::Index j = 0; j < m; ++j) inst.covariates.col(j) = sample_gp_series(cfg.kernel, cfg.horizon, rng);

  const auto leaf_ids = leaves(cfg.hierarchy);
  const auto n_leaves = static_cast<Eigen::Index>(leaf_ids.size());
  const double scale = cfg.effective_coef_std();
  inst.theta.resize(n_leaves, m);
  inst.phi.resize(n_leaves, m);
  Eigen::MatrixXd leaf_panel(n_leaves, cfg.horizon);
  for (Eigen::Index k = 0; k < n_leaves; ++k) {
    for (Eigen::Index j = 0; j < m; ++j) inst.theta(k, j) = scale * normal(rng);
    for (Eigen::Index j = 0; j < m; ++j) inst.phi(k, j) = scale * normal(rng);
    leaf_panel.row(k) = build_leaf_target(inst.covariates, inst.theta.row(k).transpose(),
                                          inst.phi.row(k).transpose(), cfg.noise_std, rng)
                            .transpose();
  }
  inst.truth = aggregate_panel(cfg.hierarchy, leaf_panel);
  return inst;
}

PanelData SynthInstance::panel() const {
  PanelData data;
  data.dag = config.hierarchy;
  data.covariates.assign(config.hierarchy.n_nodes, covariates);
  data.targets = truth.leftCols(config.t0);
  return data;
}

void to_json(nlohmann::json& j, const SynthConfig& cfg) {
  j = nlohmann::json{{"m", cfg.m},
                     {"t0", cfg.t0},
                     {"T", cfg.horizon},
                     {"noise_std", cfg.noise_std},
                     {"coef_std", cfg.effective_coef_std()},
                     {"kernel",
                      {{"type", "exponential"},
                       {"length_scale", cfg.kernel.length_scale},
                       {"marginal_std", cfg.kernel.marginal_std}}},
                     {"hierarchy", cfg.hierarchy},
                     {"seed", cfg.seed}};
}

void from_json(const nlohmann::json& j, SynthConfig& cfg) {
  cfg = SynthConfig{};
  cfg.m = j.value("m", cfg.m);
  cfg.t0 = j.value("t0", cfg.t0);
  cfg.horizon = j.value("T", cfg.horizon);
  cfg.noise_std = j.value("noise_std", cfg.noise_std);
  cfg.coef_std = j.value("coef_std", cfg.coef_std);
  if (j.contains("kernel")) {
    const auto& k = j.at("kernel");
    const auto type = k.value("type", std::string("exponential"));
    if (type != "exponential") {
      throw Error(ErrorCode::InvalidConfig, "unsupported kernel '" + type + "'");
    }
    cfg.kernel.length_scale = k.value("length_scale", cfg.kernel.length_scale);
    cfg.kernel.marginal_std = k.value("marginal_std", cfg.kernel.marginal_std);
  }
  if (j.contains("hierarchy")) cfg.hierarchy = j.at("hierarchy").get<HierarchyDag>();
  cfg.seed = j.value("seed", cfg.seed);
}

void write_instance(const SynthInstance& instance, const std::filesystem::path& dir) {
  write_csv(dir / "X.csv", series_table(instance.covariates.transpose(), "x"));
  write_csv(dir / "Y.csv", series_table(instance.truth, "y"));
  write_json(dir / "hierarchy.json", nlohmann::json(instance.config.hierarchy));
  write_json(dir / "manifest.json",
             nlohmann::json{{"config", instance.config}, {"seed", instance.config.seed},
                            {"files", {"X.csv", "Y.csv", "hierarchy.json"}}});
}

SynthInstance read_instance(const std::filesystem::path& dir) {
  const auto manifest = read_json(dir / "manifest.json");
  SynthInstance inst;
  inst.config = manifest.at("config").get<SynthConfig>();
  const auto x = read_csv(dir / "X.csv");
  const auto y = read_csv(dir / "Y.csv");
  inst.covariates = x.values.rightCols(x.values.cols() - 1);
  inst.truth = y.values.rightCols(y.values.cols() - 1).transpose();
  if (inst.covariates.rows() != inst.config.horizon || inst.truth.cols() != inst.config.horizon ||
      static_cast<std::size_t>(inst.truth.rows()) != inst.config.hierarchy.n_nodes) {
    throw Error(ErrorCode::DimensionMismatch, "instance files disagree with manifest in " + dir.string());
  }
  return inst;
}

}  // namespace hfr
