#pragma once

// Experiment matrix over seeds: generate an instance per seed, fit every
// configured method on it, score train/test MSE per node and the mean squared
// reconciliation residual, then aggregate mean and std across seeds.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "hfr/forecast_models.hpp"
#include "hfr/hts_baseline.hpp"
#include "hfr/optimizers.hpp"
#include "hfr/synthdata.hpp"

namespace hfr {

inline constexpr const char* kNoHierarchy = "no_hierarchy";
inline constexpr const char* kNoHierarchyHts = "no_hierarchy+hts";
inline constexpr const char* kLambda1 = "full_hierarchy_lam_1";
inline constexpr const char* kLambda10 = "full_hierarchy_lam_10";

const std::vector<std::string>& known_methods();
/// Penalty weight a method trains with; the hts method reuses no_hierarchy's fit.
double method_lambda(const std::string& method);

enum class StepRule { curvature, fixed };

struct BenchOptimizer {
  OptimizerMethod method = OptimizerMethod::gd;
  std::size_t iterations = 300;
  StepRule step_rule = StepRule::curvature;
  double step_scale = 1.0;             // curvature: gamma_b = scale / L_b
  std::vector<double> step_sizes{1e-4};  // fixed
  std::size_t power_iterations = 20;
  double convergence_tol = 1e-3;
};

struct RunConfig {
  SynthConfig synth;
  ModelKind model_kind = ModelKind::mlp;
  std::size_t hidden_dim = 100;
  BenchOptimizer optimizer;
  ReconcileMode hts_mode = ReconcileMode::ols;
  std::vector<std::string> methods{kNoHierarchy, kNoHierarchyHts, kLambda1, kLambda10};
  std::size_t n_seeds = 100;
  std::uint64_t seed = 0;
  std::size_t jobs = 0;  // 0: one worker per hardware thread
  std::string table_file = "table1.txt";
  std::string csv_file = "table1.csv";
  std::string json_file = "table1.json";
};

/// Throws InvalidConfig.
void validate(const RunConfig& cfg);

void to_json(nlohmann::json& j, const RunConfig& cfg);
void from_json(const nlohmann::json& j, RunConfig& cfg);

std::uint64_t instance_seed(const RunConfig& cfg, std::size_t seed_index);
SynthInstance instance_for_seed(const RunConfig& cfg, std::size_t seed_index);

struct MethodFit {
  std::string method;
  Eigen::MatrixXd forecasts;      // n x T
  std::optional<FitResult> fit;   // the underlying gradient fit
  std::vector<double> step_sizes;
};

/// Fits the requested methods on one instance. Initial parameters are shared
/// by every method of the seed; no_hierarchy is fitted once even when the hts
/// method also needs it.
std::vector<MethodFit> fit_methods(const RunConfig& cfg, const SynthInstance& instance,
                                   const std::vector<std::string>& methods);

struct NodeScores {
  Eigen::VectorXd train_mse;  // per node
  Eigen::VectorXd test_mse;
  double train_rec = 0.0;     // mean over constraints and steps of residual^2
  double test_rec = 0.0;
  std::size_t cs_checks = 0;
  std::size_t cs_violations = 0;
};

/// Scores forecasts against the full ground truth. Also checks, for every
/// constraint and test step, residual^2 / k <= sum of squared errors over the
/// k nodes of the constraint.
NodeScores score_forecasts(const HierarchyDag& dag, const Eigen::Ref<const Eigen::MatrixXd>& forecasts,
                           const Eigen::Ref<const Eigen::MatrixXd>& truth, Eigen::Index t0);

struct MetricCell {
  std::string method;
  std::string node;    // y1..yn, or "total" for rec
  std::string split;   // train | test
  std::string metric;  // mse | rec
  double mean = 0.0;
  double std = 0.0;
  bool operator==(const MetricCell&) const = default;
};

struct ExperimentReport {
  std::vector<std::string> methods;
  std::size_t n_nodes = 0;
  std::vector<MetricCell> cells;
  std::size_t n_seeds = 0;
  std::size_t n_seeds_used = 0;
  std::vector<std::size_t> excluded_seeds;  // seed indices that diverged
  std::size_t cs_checks = 0;
  std::size_t cs_violations = 0;
  double runtime_seconds = 0.0;  // not serialized

  const MetricCell& cell(const std::string& method, const std::string& node, const std::string& split,
                         const std::string& metric) const;
  bool operator==(const ExperimentReport& other) const;
};

/// Seeds run on a worker pool; results are reduced in seed order so the
/// report does not depend on the number of workers.
ExperimentReport run_benchmark(const RunConfig& cfg, bool quiet = true);

struct EmittedTable {
  std::string text;
  std::string csv;
  std::string json;
};

EmittedTable emit_table(const ExperimentReport& report);
void write_report(const ExperimentReport& report, const RunConfig& cfg, const std::filesystem::path& dir);

void to_json(nlohmann::json& j, const ExperimentReport& report);
void from_json(const nlohmann::json& j, ExperimentReport& report);

std::string node_label(std::size_t node);

/// Keeps large per-iteration temporaries on the heap instead of fresh mmap
/// pages (glibc only; a no-op elsewhere). Call once from main.
void tune_allocator();

}  // namespace hfr
