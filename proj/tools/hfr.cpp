// hfr: generate synthetic hierarchies, fit forecasters with or without the
// reconciliation penalty, reconcile forecasts, run the benchmark matrix and
// compute prediction intervals.
//
// Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hfr/bench.hpp"
#include "hfr/error.hpp"
#include "hfr/hts_baseline.hpp"
#include "hfr/io.hpp"
#include "hfr/uncertainty.hpp"

namespace fs = std::filesystem;
using namespace hfr;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  bool quiet = false;
};

RunConfig load_config(const std::string& path, const Globals& g) {
  if (!fs::exists(path)) throw Error(ErrorCode::InvalidConfig, "config file not found: " + path);
  RunConfig cfg = read_json(path).get<RunConfig>();
  if (g.seed) cfg.seed = *g.seed;
  if (g.jobs) cfg.jobs = *g.jobs;
  validate(cfg);
  return cfg;
}

Eigen::MatrixXd series_of(const CsvTable& table) {
  if (table.header.empty() || table.header.front() != "t") {
    throw Error(ErrorCode::InvalidConfig, "series CSV must start with a 't' column");
  }
  return table.values.rightCols(table.values.cols() - 1).transpose();
}

int cmd_generate(const std::string& config, std::size_t seed_index, const std::string& out,
                 const Globals& g) {
  const RunConfig cfg = load_config(config, g);
  const SynthInstance inst = instance_for_seed(cfg, seed_index);
  write_instance(inst, out);
  if (!g.quiet) std::cout << "wrote instance (seed " << inst.config.seed << ") to " << out << "\n";
  return 0;
}

int cmd_fit(const std::string& config, const std::string& method, std::size_t seed_index,
            const std::string& out, const Globals& g) {
  const RunConfig cfg = load_config(config, g);
  method_lambda(method);
  const SynthInstance inst = instance_for_seed(cfg, seed_index);
  const auto fits = fit_methods(cfg, inst, {method});
  const MethodFit& m = fits.front();

  write_instance(inst, out);
  write_csv(fs::path(out) / "forecasts.csv", series_table(m.forecasts, "y"));
  nlohmann::json j{{"method", method},
                   {"lambda", method_lambda(method)},
                   {"seed_index", seed_index},
                   {"instance_seed", inst.config.seed},
                   {"t0", inst.config.t0},
                   {"T", inst.config.horizon},
                   {"step_sizes", m.step_sizes}};
  if (m.fit) j["fit"] = *m.fit;
  write_json(fs::path(out) / "fit.json", j);

  if (!g.quiet) {
    const auto s = score_forecasts(inst.config.hierarchy, m.forecasts, inst.truth, inst.config.t0);
    std::cout << method << ": objective " << (m.fit ? m.fit->objective : 0.0) << ", test rec "
              << s.test_rec << "\n";
    for (Eigen::Index i = 0; i < s.test_mse.size(); ++i) {
      std::cout << "  " << node_label(static_cast<std::size_t>(i)) << " train " << s.train_mse(i)
                << " test " << s.test_mse(i) << "\n";
    }
  }
  return 0;
}

int cmd_reconcile(const std::string& hierarchy, const std::string& forecasts, const std::string& mode,
                  std::optional<long> t0, const std::string& actuals, const std::string& out,
                  const Globals& g) {
  const HierarchyDag dag = read_json(hierarchy).get<HierarchyDag>();
  validate(dag);
  const ReconcileMode rm = parse_reconcile_mode(mode);
  const CsvTable table = read_csv(forecasts);
  Eigen::MatrixXd f = series_of(table);
  if (static_cast<std::size_t>(f.rows()) != dag.n_nodes) {
    throw Error(ErrorCode::DimensionMismatch, "forecast columns differ from hierarchy size");
  }
  const Eigen::Index first = t0.value_or(0);
  if (first < 0 || first >= f.cols()) throw Error(ErrorCode::InvalidConfig, "--t0 outside the forecast rows");

  ReconcilerWeights weights;
  if (rm == ReconcileMode::wls_var) {
    if (actuals.empty() || !t0) {
      throw Error(ErrorCode::InvalidConfig, "wls_var needs --actuals and --t0 to estimate error variances");
    }
    const Eigen::MatrixXd y = series_of(read_csv(actuals));
    if (y.rows() != f.rows() || y.cols() < first) {
      throw Error(ErrorCode::DimensionMismatch, "actuals must cover the first t0 rows of every node");
    }
    weights = wls_from_residuals(f.leftCols(first) - y.leftCols(first));
  }
  const Eigen::Index width = f.cols() - first;
  f.rightCols(width) = reconcile_panel(summation_matrix(dag), f.rightCols(width), weights, CgConfig{});

  CsvTable result = series_table(f, "y", static_cast<long>(table.values(0, 0)));
  write_csv(fs::path(out) / "reconciled.csv", result);
  if (!g.quiet) {
    const double max_res = reconciliation_residuals(dag, f, first, f.cols()).cwiseAbs().maxCoeff();
    std::cout << "reconciled " << width << " steps (" << to_string(rm) << "), max residual " << max_res
              << "\n";
  }
  return 0;
}

int cmd_bench(const std::string& config, const std::string& out, const Globals& g) {
  const RunConfig cfg = load_config(config, g);
  const ExperimentReport report = run_benchmark(cfg, g.quiet);
  write_report(report, cfg, out);
  if (!g.quiet) std::cout << emit_table(report).text;
  return 0;
}

int cmd_intervals(const std::string& fit_dir, double level, const std::string& out, const Globals& g) {
  const fs::path dir(fit_dir);
  const auto meta = read_json(dir / "fit.json");
  const Eigen::Index t0 = meta.at("t0").get<Eigen::Index>();
  const HierarchyDag dag = read_json(dir / "hierarchy.json").get<HierarchyDag>();
  const Eigen::MatrixXd f = series_of(read_csv(dir / "forecasts.csv"));
  const Eigen::MatrixXd y = series_of(read_csv(dir / "Y.csv"));
  if (f.rows() != y.rows() || y.cols() < t0 || f.cols() <= t0) {
    throw Error(ErrorCode::DimensionMismatch, "forecasts and actuals in " + fit_dir + " disagree");
  }
  // Only the labelled window of the actuals is used.
  const ErrorCovariance cov = estimate_error_covariance(f.leftCols(t0) - y.leftCols(t0));
  const IntervalReport report =
      prediction_intervals(f.rightCols(f.cols() - t0), cov, dag, level, static_cast<long>(t0) + 1);
  write_intervals(report, out);
  if (!g.quiet) {
    std::cout << "z = " << report.z << "\n";
    for (Eigen::Index c = 0; c < report.rec_variance.size(); ++c) {
      std::cout << "  constraint " << c << ": reconciliation variance " << report.rec_variance(c) << "\n";
    }
  }
  return 0;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::CycleDetected:
    case ErrorCode::DuplicateParentConstraint:
    case ErrorCode::ChildOutOfRange:
    case ErrorCode::SelfLoop:
    case ErrorCode::InvalidConstraint:
      return 1;
    default:
      return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Hierarchical forecasting with a self-supervised reconciliation penalty"};
  app.fallthrough();
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  std::size_t jobs = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Base seed (overrides the config)");
  auto* jobs_opt = app.add_option("--jobs", jobs, "Parallel workers for bench seeds (0: all cores)");
  app.add_flag("--quiet", g.quiet, "Suppress progress and summaries");

  std::string config, out, method, hierarchy, forecasts, mode = "ols", actuals, fit_dir;
  std::size_t seed_index = 0;
  long t0 = 0;
  double level = 0.95;

  auto* gen = app.add_subcommand("generate", "Write a synthetic instance (X.csv, Y.csv, hierarchy.json)");
  gen->add_option("--config", config, "Run config JSON")->required();
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--seed-index", seed_index, "Benchmark seed index");

  auto* fit_cmd = app.add_subcommand("fit", "Fit one method on one instance");
  fit_cmd->add_option("--config", config, "Run config JSON")->required();
  fit_cmd->add_option("--method", method, "no_hierarchy | no_hierarchy+hts | full_hierarchy_lam_1 | full_hierarchy_lam_10")
      ->required();
  fit_cmd->add_option("--out", out, "Output directory")->required();
  fit_cmd->add_option("--seed-index", seed_index, "Benchmark seed index");

  auto* rec = app.add_subcommand("reconcile", "Project forecasts onto the coherent subspace");
  rec->add_option("--hierarchy", hierarchy, "Hierarchy JSON")->required();
  rec->add_option("--forecasts", forecasts, "Forecast CSV (t, y1..yn)")->required();
  rec->add_option("--mode", mode, "ols | wls_var");
  auto* t0_opt = rec->add_option("--t0", t0, "Reconcile only rows after the first t0");
  rec->add_option("--actuals", actuals, "Actuals CSV for wls_var weights");
  rec->add_option("--out", out, "Output directory")->required();

  auto* bench = app.add_subcommand("bench", "Run the full method x seed matrix");
  bench->add_option("--config", config, "Run config JSON")->required();
  bench->add_option("--out", out, "Output directory")->required();

  auto* iv = app.add_subcommand("intervals", "Prediction and reconciliation intervals for a fit");
  iv->add_option("--fit", fit_dir, "Directory written by 'fit'")->required();
  iv->add_option("--level", level, "Coverage level");
  iv->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }
  if (*seed_opt) g.seed = seed;
  if (*jobs_opt) g.jobs = jobs;

  try {
    if (*gen) return cmd_generate(config, seed_index, out, g);
    if (*fit_cmd) return cmd_fit(config, method, seed_index, out, g);
    if (*rec) {
      return cmd_reconcile(hierarchy, forecasts, mode, *t0_opt ? std::optional<long>(t0) : std::nullopt,
                           actuals, out, g);
    }
    if (*bench) return cmd_bench(config, out, g);
    if (*iv) return cmd_intervals(fit_dir, level, out, g);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed input: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
