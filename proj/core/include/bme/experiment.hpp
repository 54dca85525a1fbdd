#pragma once

#include <map>
#include <string>
#include <vector>

#include "bme/metrics.hpp"
#include "bme/simulate.hpp"

namespace bme {

struct ExperimentConfig {
  std::string name = "experiment";
  /// Scenario templates; each is run once per controller with the
  /// controller field overridden.
  std::vector<ScenarioSpec> scenarios;
  std::vector<ControllerKind> controllers;
};

struct RunMetrics {
  std::string scenario;
  std::string controller;
  std::uint64_t seed = 0;
  double cost = 0.0;
  double tracking = 0.0;
  double effort = 0.0;
  double volatility = 0.0;
  double initial_price = 0.0;
  double final_price = 0.0;
  int solver_fallbacks = 0;
  bool aborted = false;
};

struct ControllerAggregate {
  std::string controller;
  int runs = 0;
  int aborted_runs = 0;
  double median_cost = 0.0;
  double iqr_cost = 0.0;
  double median_tracking = 0.0;
  double median_effort = 0.0;
  double median_volatility = 0.0;
};

struct PairwiseComparison {
  std::string controller_a;
  std::string controller_b;
  /// Signed-rank test on costs paired by scenario (aborted pairs dropped).
  WilcoxonResult test;
  /// median cost of b / median cost of a.
  double median_cost_ratio = 0.0;
};

struct MetricsReport {
  std::vector<RunMetrics> runs;
  std::vector<ControllerAggregate> aggregates;
  std::vector<PairwiseComparison> comparisons;
  /// Realized price path of each controller's median-cost run.
  std::map<std::string, std::vector<double>> price_paths;
  std::vector<double> price_ref_path;
};

/// Runs every scenario under every controller and aggregates the metrics.
/// Aborted runs keep their partial metrics but are excluded from medians
/// and pairings.
MetricsReport compare_controllers(const ExperimentConfig& config);

/// Writes runs.csv, summary.csv (long format with a row_type column),
/// price_<controller>.svg per controller and cost_boxplot.svg. An empty
/// report produces header-only CSV files and no charts.
void emit_report(const MetricsReport& report, const std::string& out_dir);

/// Benchmark suite: 3 adoption shapes x 3 demand regimes x 5 seeds, run
/// under pass-through, PID and receding-horizon control.
ExperimentConfig standard_suite();

/// Linear-interpolation quantile of an unsorted sample, q in [0, 1].
double quantile(std::vector<double> values, double q);

}  // namespace bme
