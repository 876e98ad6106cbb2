#include "hfr/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <nlohmann/json.hpp>

#include "hfr/error.hpp"
#include "hfr/io.hpp"
#include "hfr/objective.hpp"
#include "hfr/rng.hpp"

namespace hfr {

const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> names{kNoHierarchy, kNoHierarchyHts, kLambda1, kLambda10};
  return names;
}

double method_lambda(const std::string& method) {
  if (method == kNoHierarchy || method == kNoHierarchyHts) return 0.0;
  if (method == kLambda1) return 1.0;
  if (method == kLambda10) return 10.0;
  throw Error(ErrorCode::InvalidConfig, "unknown method '" + method + "'");
}

std::string node_label(std::size_t node) { return "y" + std::to_string(node + 1); }

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

void validate(const RunConfig& cfg) {
  validate(cfg.synth);
  if (cfg.n_seeds < 1) throw Error(ErrorCode::InvalidConfig, "n_seeds must be >= 1");
  if (cfg.methods.empty()) throw Error(ErrorCode::InvalidConfig, "methods list is empty");
  for (std::size_t i = 0; i < cfg.methods.size(); ++i) {
    method_lambda(cfg.methods[i]);
    for (std::size_t j = 0; j < i; ++j) {
      if (cfg.methods[j] == cfg.methods[i]) {
        throw Error(ErrorCode::InvalidConfig, "method '" + cfg.methods[i] + "' listed twice");
      }
    }
  }
  if (cfg.model_kind == ModelKind::mlp && cfg.hidden_dim < 1) {
    throw Error(ErrorCode::InvalidConfig, "hidden_dim must be >= 1");
  }
  const auto& opt = cfg.optimizer;
  if (opt.step_rule == StepRule::curvature) {
    if (!(opt.step_scale > 0.0)) throw Error(ErrorCode::InvalidConfig, "step_scale must be > 0");
    if (opt.power_iterations < 1) throw Error(ErrorCode::InvalidConfig, "power_iterations must be >= 1");
  } else {
    if (opt.step_sizes.empty()) throw Error(ErrorCode::InvalidConfig, "step_sizes is empty");
    for (double s : opt.step_sizes) {
      if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorCode::InvalidConfig, "step sizes must be > 0");
    }
  }
  if (!(opt.convergence_tol >= 0.0)) throw Error(ErrorCode::InvalidConfig, "convergence_tol must be >= 0");
}

namespace {

ModelKind parse_model_kind(const std::string& name) {
  if (name == "linear") return ModelKind::linear;
  if (name == "mlp") return ModelKind::mlp;
  throw Error(ErrorCode::InvalidConfig, "unknown model kind '" + name + "'");
}

StepRule parse_step_rule(const std::string& name) {
  if (name == "curvature") return StepRule::curvature;
  if (name == "fixed") return StepRule::fixed;
  throw Error(ErrorCode::InvalidConfig, "unknown step rule '" + name + "'");
}

}  // namespace

void to_json(nlohmann::json& j, const RunConfig& cfg) {
  const auto& opt = cfg.optimizer;
  j = nlohmann::json{
      {"synth", cfg.synth},
      {"model", {{"kind", cfg.model_kind == ModelKind::mlp ? "mlp" : "linear"}, {"hidden_dim", cfg.hidden_dim}}},
      {"optimizer",
       {{"method", to_string(opt.method)},
        {"iterations", opt.iterations},
        {"step_rule", opt.step_rule == StepRule::curvature ? "curvature" : "fixed"},
        {"step_scale", opt.step_scale},
        {"step_sizes", opt.step_sizes},
        {"power_iterations", opt.power_iterations},
        {"convergence_tol", opt.convergence_tol}}},
      {"hts", {{"mode", to_string(cfg.hts_mode)}}},
      {"methods", cfg.methods},
      {"n_seeds", cfg.n_seeds},
      {"seed", cfg.seed},
      {"jobs", cfg.jobs},
      {"outputs", {{"table", cfg.table_file}, {"csv", cfg.csv_file}, {"json", cfg.json_file}}}};
}

void from_json(const nlohmann::json& j, RunConfig& cfg) {
  cfg = RunConfig{};
  try {
    if (j.contains("synth")) cfg.synth = j.at("synth").get<SynthConfig>();
    if (j.contains("model")) {
      const auto& m = j.at("model");
      cfg.model_kind = parse_model_kind(m.value("kind", std::string("mlp")));
      cfg.hidden_dim = m.value("hidden_dim", cfg.hidden_dim);
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      auto& opt = cfg.optimizer;
      opt.method = parse_optimizer_method(o.value("method", std::string("gd")));
      opt.iterations = o.value("iterations", opt.iterations);
      opt.step_rule = parse_step_rule(o.value("step_rule", std::string("curvature")));
      opt.step_scale = o.value("step_scale", opt.step_scale);
      if (o.contains("step_sizes")) {
        const auto& s = o.at("step_sizes");
        opt.step_sizes = s.is_array() ? s.get<std::vector<double>>() : std::vector<double>{s.get<double>()};
      }
      opt.power_iterations = o.value("power_iterations", opt.power_iterations);
      opt.convergence_tol = o.value("convergence_tol", opt.convergence_tol);
    }
    if (j.contains("hts")) cfg.hts_mode = parse_reconcile_mode(j.at("hts").value("mode", std::string("ols")));
    if (j.contains("methods")) cfg.methods = j.at("methods").get<std::vector<std::string>>();
    cfg.n_seeds = j.value("n_seeds", cfg.n_seeds);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.jobs = j.value("jobs", cfg.jobs);
    if (j.contains("outputs")) {
      const auto& o = j.at("outputs");
      cfg.table_file = o.value("table", cfg.table_file);
      cfg.csv_file = o.value("csv", cfg.csv_file);
      cfg.json_file = o.value("json", cfg.json_file);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("run config: ") + e.what());
  }
}

std::uint64_t instance_seed(const RunConfig& cfg, std::size_t seed_index) {
  return derive_seed(cfg.seed, seed_index);
}

SynthInstance instance_for_seed(const RunConfig& cfg, std::size_t seed_index) {
  SynthConfig sc = cfg.synth;
  sc.seed = instance_seed(cfg, seed_index);
  return generate(sc);
}

std::vector<MethodFit> fit_methods(const RunConfig& cfg, const SynthInstance& instance,
                                   const std::vector<std::string>& methods) {
  const PanelData data = instance.panel();
  const std::uint64_t base = instance.config.seed;
  const ModelParams params0 = init_params(cfg.model_kind, data.n_nodes(), instance.config.m,
                                          cfg.hidden_dim, derive_seed(base, hash_name("init")));

  auto train = [&](const std::string& method) {
    const ObjectiveConfig obj{method_lambda(method), instance.config.t0, instance.config.horizon};
    OptimizerConfig opt;
    opt.method = cfg.optimizer.method;
    opt.iterations = cfg.optimizer.iterations;
    opt.convergence_tol = cfg.optimizer.convergence_tol;
    opt.seed = derive_seed(base, hash_name(method));
    opt.log_every = std::max<std::size_t>(1, cfg.optimizer.iterations / 100);
    opt.step_sizes = cfg.optimizer.step_rule == StepRule::curvature
                         ? curvature_step_sizes(params0, data, obj, cfg.optimizer.step_scale,
                                                cfg.optimizer.power_iterations)
                         : cfg.optimizer.step_sizes;
    MethodFit out;
    out.method = method;
    out.step_sizes = opt.step_sizes;
    out.fit = fit(params0, data, obj, opt);
    out.forecasts = out.fit->forecasts;
    return out;
  };

  std::optional<MethodFit> independent;
  auto independent_fit = [&]() -> const MethodFit& {
    if (!independent) independent = train(kNoHierarchy);
    return *independent;
  };

  std::vector<MethodFit> out;
  for (const auto& method : methods) {
    method_lambda(method);
    if (method == kNoHierarchy) {
      out.push_back(independent_fit());
    } else if (method == kNoHierarchyHts) {
      MethodFit m = independent_fit();
      m.method = method;
      const Eigen::Index t0 = instance.config.t0;
      const Eigen::Index width = instance.config.horizon - t0;
      ReconcilerWeights weights;
      if (cfg.hts_mode == ReconcileMode::wls_var) {
        weights = wls_from_residuals(m.forecasts.leftCols(t0) - instance.truth.leftCols(t0));
      }
      m.forecasts.rightCols(width) = reconcile_panel(summation_matrix(instance.config.hierarchy),
                                                     m.forecasts.rightCols(width), weights, CgConfig{});
      out.push_back(std::move(m));
    } else {
      out.push_back(train(method));
    }
  }
  return out;
}

NodeScores score_forecasts(const HierarchyDag& dag, const Eigen::Ref<const Eigen::MatrixXd>& forecasts,
                           const Eigen::Ref<const Eigen::MatrixXd>& truth, Eigen::Index t0) {
  if (forecasts.rows() != truth.rows() || forecasts.cols() != truth.cols() ||
      static_cast<std::size_t>(forecasts.rows()) != dag.n_nodes) {
    throw Error(ErrorCode::DimensionMismatch, "forecasts and truth must both be n x T");
  }
  const Eigen::Index horizon = truth.cols();
  if (t0 < 1 || t0 >= horizon) throw Error(ErrorCode::IndexOutOfRange, "need 1 <= t0 < T");
  const Eigen::MatrixXd err = forecasts - truth;
  NodeScores s;
  s.train_mse = err.leftCols(t0).rowwise().squaredNorm() / static_cast<double>(t0);
  s.test_mse = err.rightCols(horizon - t0).rowwise().squaredNorm() / static_cast<double>(horizon - t0);

  const double n_c = static_cast<double>(dag.constraints.size());
  const Eigen::MatrixXd res_train = reconciliation_residuals(dag, forecasts, 0, t0);
  const Eigen::MatrixXd res_test = reconciliation_residuals(dag, forecasts, t0, horizon);
  s.train_rec = res_train.squaredNorm() / (n_c * static_cast<double>(t0));
  s.test_rec = res_test.squaredNorm() / (n_c * static_cast<double>(horizon - t0));

  for (std::size_t c = 0; c < dag.constraints.size(); ++c) {
    const auto& con = dag.constraints[c];
    const std::size_t k = con.children.size() + 1;
    for (Eigen::Index t = 0; t < horizon - t0; ++t) {
      double sq = err(static_cast<Eigen::Index>(con.parent), t0 + t) *
                  err(static_cast<Eigen::Index>(con.parent), t0 + t);
      for (NodeId ch : con.children) {
        const double e = err(static_cast<Eigen::Index>(ch), t0 + t);
        sq += e * e;
      }
      const double bound = cauchy_schwarz_lower_bound(res_test(static_cast<Eigen::Index>(c), t), k);
      ++s.cs_checks;
      // The truth is coherent only up to rounding in its own sums.
      if (bound > sq * (1.0 + 1e-9) + 1e-12) ++s.cs_violations;
    }
  }
  return s;
}

namespace {

struct SeedOutcome {
  bool diverged = false;
  std::string failure;
  std::vector<NodeScores> scores;  // one per method, in cfg.methods order
};

SeedOutcome run_seed(const RunConfig& cfg, std::size_t seed_index) {
  SeedOutcome out;
  try {
    const SynthInstance inst = instance_for_seed(cfg, seed_index);
    for (const auto& m : fit_methods(cfg, inst, cfg.methods)) {
      out.scores.push_back(score_forecasts(inst.config.hierarchy, m.forecasts, inst.truth, inst.config.t0));
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DivergenceDetected) throw;
    out.diverged = true;
    out.failure = e.what();
    out.scores.clear();
  }
  return out;
}

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
  mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  sd = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
}

}  // namespace

ExperimentReport run_benchmark(const RunConfig& cfg, bool quiet) {
  validate(cfg);
  const auto start = std::chrono::steady_clock::now();
  std::size_t jobs = cfg.jobs ? cfg.jobs : std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, cfg.n_seeds);

  std::vector<SeedOutcome> outcomes(cfg.n_seeds);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  std::mutex log_mutex;

  auto worker = [&]() {
    for (;;) {
      const std::size_t s = next.fetch_add(1);
      if (s >= cfg.n_seeds) return;
      {
        std::lock_guard lock(error_mutex);
        if (first_error) return;
      }
      try {
        outcomes[s] = run_seed(cfg, s);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
      const std::size_t finished = ++done;
      if (!quiet) {
        std::lock_guard lock(log_mutex);
        std::cerr << "seed " << s << (outcomes[s].diverged ? " diverged" : " done") << " (" << finished
                  << "/" << cfg.n_seeds << ")\n";
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < jobs; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);

  ExperimentReport report;
  report.methods = cfg.methods;
  report.n_nodes = cfg.synth.hierarchy.n_nodes;
  report.n_seeds = cfg.n_seeds;
  std::vector<const SeedOutcome*> used;
  for (std::size_t s = 0; s < cfg.n_seeds; ++s) {
    if (outcomes[s].diverged) {
      report.excluded_seeds.push_back(s);
    } else {
      used.push_back(&outcomes[s]);
    }
  }
  report.n_seeds_used = used.size();
  for (const auto* o : used) {
    for (const auto& sc : o->scores) {
      report.cs_checks += sc.cs_checks;
      report.cs_violations += sc.cs_violations;
    }
  }

  if (!used.empty()) {
    std::vector<double> xs(used.size());
    auto add = [&](std::size_t mi, const std::string& node, const std::string& split,
                   const std::string& metric, auto&& get) {
      for (std::size_t k = 0; k < used.size(); ++k) xs[k] = get(used[k]->scores[mi]);
      MetricCell cell{cfg.methods[mi], node, split, metric, 0.0, 0.0};
      mean_std(xs, cell.mean, cell.std);
      report.cells.push_back(std::move(cell));
    };
    for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
      for (std::size_t i = 0; i < report.n_nodes; ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        add(mi, node_label(i), "train", "mse", [&](const NodeScores& s) { return s.train_mse(row); });
        add(mi, node_label(i), "test", "mse", [&](const NodeScores& s) { return s.test_mse(row); });
      }
      add(mi, "total", "train", "rec", [](const NodeScores& s) { return s.train_rec; });
      add(mi, "total", "test", "rec", [](const NodeScores& s) { return s.test_rec; });
    }
  }
  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

const MetricCell& ExperimentReport::cell(const std::string& method, const std::string& node,
                                         const std::string& split, const std::string& metric) const {
  for (const auto& c : cells) {
    if (c.method == method && c.node == node && c.split == split && c.metric == metric) return c;
  }
  throw Error(ErrorCode::InvalidConfig,
              "no cell " + method + "/" + node + "/" + split + "/" + metric + " in report");
}

bool ExperimentReport::operator==(const ExperimentReport& other) const {
  return methods == other.methods && n_nodes == other.n_nodes && cells == other.cells &&
         n_seeds == other.n_seeds && n_seeds_used == other.n_seeds_used &&
         excluded_seeds == other.excluded_seeds && cs_checks == other.cs_checks &&
         cs_violations == other.cs_violations;
}

void to_json(nlohmann::json& j, const ExperimentReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& c : report.cells) {
    rows.push_back({{"method", c.method},
                    {"node", c.node},
                    {"split", c.split},
                    {"metric", c.metric},
                    {"mean", c.mean},
                    {"std", c.std}});
  }
  j = nlohmann::json{{"methods", report.methods},
                     {"n_nodes", report.n_nodes},
                     {"n_seeds", report.n_seeds},
                     {"n_seeds_used", report.n_seeds_used},
                     {"excluded_seeds", report.excluded_seeds},
                     {"cauchy_schwarz_checks", report.cs_checks},
                     {"cauchy_schwarz_violations", report.cs_violations},
                     {"std_over", "seeds"},
                     {"rows", rows}};
}

void from_json(const nlohmann::json& j, ExperimentReport& report) {
  report = ExperimentReport{};
  report.methods = j.at("methods").get<std::vector<std::string>>();
  report.n_nodes = j.at("n_nodes").get<std::size_t>();
  report.n_seeds = j.at("n_seeds").get<std::size_t>();
  report.n_seeds_used = j.at("n_seeds_used").get<std::size_t>();
  report.excluded_seeds = j.at("excluded_seeds").get<std::vector<std::size_t>>();
  report.cs_checks = j.value("cauchy_schwarz_checks", std::size_t{0});
  report.cs_violations = j.value("cauchy_schwarz_violations", std::size_t{0});
  for (const auto& r : j.at("rows")) {
    report.cells.push_back(MetricCell{r.at("method").get<std::string>(), r.at("node").get<std::string>(),
                                      r.at("split").get<std::string>(), r.at("metric").get<std::string>(),
                                      r.at("mean").get<double>(), r.at("std").get<double>()});
  }
}

namespace {

std::string short_number(double v) {
  char buf[32];
  const double a = std::abs(v);
  if (a != 0.0 && (a < 1e-3 || a >= 1e5)) {
    std::snprintf(buf, sizeof(buf), "%.3g", v);
  } else {
    std::snprintf(buf, sizeof(buf), "%.4g", v);
  }
  return buf;
}

}  // namespace

EmittedTable emit_table(const ExperimentReport& report) {
  EmittedTable out;

  std::ostringstream csv;
  csv << "method,node,split,metric,mean,std\n";
  for (const auto& c : report.cells) {
    csv << c.method << ',' << c.node << ',' << c.split << ',' << c.metric << ',' << format_double(c.mean)
        << ',' << format_double(c.std) << '\n';
  }
  out.csv = csv.str();
  out.json = nlohmann::json(report).dump(2) + "\n";

  // Methods as columns, node x split rows, "mean ± std" cells.
  std::vector<std::pair<std::string, std::vector<std::string>>> rows;
  auto row_for = [&](const std::string& node, const std::string& split, const std::string& metric,
                     const std::string& label) {
    std::vector<std::string> cells;
    for (const auto& m : report.methods) {
      const MetricCell* hit = nullptr;
      for (const auto& c : report.cells) {
        if (c.method == m && c.node == node && c.split == split && c.metric == metric) hit = &c;
      }
      cells.push_back(hit ? short_number(hit->mean) + " ± " + short_number(hit->std) : "-");
    }
    rows.emplace_back(label, std::move(cells));
  };
  for (std::size_t i = 0; i < report.n_nodes; ++i) {
    row_for(node_label(i), "train", "mse", node_label(i) + " / train");
    row_for(node_label(i), "test", "mse", node_label(i) + " / test");
  }
  row_for("total", "test", "rec", "rec / total");

  std::size_t label_w = 0;
  for (const auto& r : rows) label_w = std::max(label_w, r.first.size());
  std::vector<std::size_t> col_w(report.methods.size());
  // Width in code points; "±" is two bytes in UTF-8.
  auto width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char ch : s) w += (ch & 0xC0) != 0x80;
    return w;
  };
  for (std::size_t k = 0; k < report.methods.size(); ++k) {
    col_w[k] = report.methods[k].size();
    for (const auto& r : rows) col_w[k] = std::max(col_w[k], width(r.second[k]));
  }
  std::ostringstream text;
  auto pad = [&](const std::string& s, std::size_t w) { return s + std::string(w - width(s), ' '); };
  text << pad("", label_w);
  for (std::size_t k = 0; k < report.methods.size(); ++k) text << "  " << pad(report.methods[k], col_w[k]);
  text << '\n';
  for (const auto& r : rows) {
    text << pad(r.first, label_w);
    for (std::size_t k = 0; k < r.second.size(); ++k) text << "  " << pad(r.second[k], col_w[k]);
    text << '\n';
  }
  text << "\nMSE per node; rec is the mean squared constraint residual over constraints and test steps.\n"
       << "Cells are mean ± std across " << report.n_seeds_used << " seeds";
  if (!report.excluded_seeds.empty()) {
    text << " (" << report.excluded_seeds.size() << " of " << report.n_seeds
         << " excluded after divergence)";
  }
  text << ".\nCauchy-Schwarz bound violations: " << report.cs_violations << " of " << report.cs_checks
       << " checks.\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "Runtime: %.1f s\n", report.runtime_seconds);
  text << buf;
  out.text = text.str();
  return out;
}

void write_report(const ExperimentReport& report, const RunConfig& cfg, const std::filesystem::path& dir) {
  const auto emitted = emit_table(report);
  write_text(dir / cfg.table_file, emitted.text);
  write_text(dir / cfg.csv_file, emitted.csv);
  write_text(dir / cfg.json_file, emitted.json);
}

}  // namespace hfr
