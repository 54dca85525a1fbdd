#include "bme/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "bme/csv.hpp"
#include "bme/rng.hpp"
#include "bme/svg.hpp"

namespace bme {

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw TooShort("quantile: empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("quantile: q must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * (values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - lo;
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

namespace {

double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

struct RunRecord {
  double cost = 0.0;
  bool aborted = false;
  std::vector<double> prices;
};

}  // namespace

MetricsReport compare_controllers(const ExperimentConfig& config) {
  MetricsReport rep;
  std::map<std::string, std::vector<RunRecord>> records;

  for (const ControllerKind kind : config.controllers) {
    const std::string cname = controller_name(kind);
    for (const ScenarioSpec& base : config.scenarios) {
      ScenarioSpec spec = base;
      spec.controller = kind;
      const SimulationResult sim = run_closed_loop(spec);

      RunMetrics m;
      m.scenario = spec.name;
      m.controller = cname;
      m.seed = spec.seed;
      m.cost = sim.total_cost;
      m.solver_fallbacks = sim.solver_fallbacks;
      m.aborted = sim.aborted;

      std::vector<double> prices;
      prices.reserve(sim.states.size());
      for (const auto& s : sim.states) prices.push_back(s.price);
      const std::vector<double> refs(sim.price_refs.begin(),
                                     sim.price_refs.begin() + prices.size());
      m.tracking = tracking_mse(prices, refs);
      std::vector<double> buybacks;
      std::vector<double> payouts;
      for (const auto& u : sim.controls) {
        buybacks.push_back(u.buyback_usd);
        payouts.push_back(u.pay_tok);
      }
      m.effort = control_effort(buybacks, payouts, prices);
      try {
        m.volatility = price_volatility(prices);
      } catch (const Error&) {
        m.volatility = std::numeric_limits<double>::quiet_NaN();
      }
      m.initial_price = prices.front();
      m.final_price = prices.back();

      rep.runs.push_back(m);
      records[cname].push_back({m.cost, m.aborted, std::move(prices)});
      if (rep.price_ref_path.empty()) rep.price_ref_path = sim.price_refs;
    }
  }

  for (const ControllerKind kind : config.controllers) {
    const std::string cname = controller_name(kind);
    ControllerAggregate agg;
    agg.controller = cname;
    std::vector<double> costs;
    std::vector<double> tracking;
    std::vector<double> effort;
    std::vector<double> volatility;
    for (const RunMetrics& m : rep.runs) {
      if (m.controller != cname) continue;
      ++agg.runs;
      if (m.aborted) {
        ++agg.aborted_runs;
        continue;
      }
      costs.push_back(m.cost);
      tracking.push_back(m.tracking);
      effort.push_back(m.effort);
      if (std::isfinite(m.volatility)) volatility.push_back(m.volatility);
    }
    if (!costs.empty()) {
      agg.median_cost = median(costs);
      agg.iqr_cost = quantile(costs, 0.75) - quantile(costs, 0.25);
      agg.median_tracking = median(tracking);
      agg.median_effort = median(effort);
      if (!volatility.empty()) agg.median_volatility = median(volatility);

      const auto& recs = records[cname];
      std::size_t best = 0;
      double best_gap = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < recs.size(); ++i) {
        if (recs[i].aborted) continue;
        const double gap = std::abs(recs[i].cost - agg.median_cost);
        if (gap < best_gap) {
          best_gap = gap;
          best = i;
        }
      }
      rep.price_paths[cname] = recs[best].prices;
    }
    rep.aggregates.push_back(agg);
  }

  for (std::size_t i = 0; i < config.controllers.size(); ++i) {
    for (std::size_t j = i + 1; j < config.controllers.size(); ++j) {
      const std::string a = controller_name(config.controllers[i]);
      const std::string b = controller_name(config.controllers[j]);
      const auto& ra = records[a];
      const auto& rb = records[b];
      std::vector<double> ca;
      std::vector<double> cb;
      for (std::size_t k = 0; k < std::min(ra.size(), rb.size()); ++k) {
        if (ra[k].aborted || rb[k].aborted) continue;
        ca.push_back(ra[k].cost);
        cb.push_back(rb[k].cost);
      }
      PairwiseComparison cmp;
      cmp.controller_a = a;
      cmp.controller_b = b;
      try {
        cmp.test = wilcoxon_signed_rank(ca, cb);
      } catch (const TooFewPairs&) {
        continue;
      }
      if (!ca.empty() && !cb.empty()) {
        const double ma = median(ca);
        cmp.median_cost_ratio = ma != 0.0 ? median(cb) / ma
                                          : std::numeric_limits<double>::quiet_NaN();
      }
      rep.comparisons.push_back(cmp);
    }
  }
  return rep;
}

void emit_report(const MetricsReport& rep, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  {
    std::vector<std::vector<std::string>> rows;
    for (const RunMetrics& m : rep.runs) {
      rows.push_back({m.scenario, m.controller, std::to_string(m.seed),
                      csv::format(m.cost), csv::format(m.tracking),
                      csv::format(m.effort), csv::format(m.volatility),
                      csv::format(m.initial_price), csv::format(m.final_price),
                      std::to_string(m.solver_fallbacks),
                      m.aborted ? "1" : "0"});
    }
    csv::write_file((fs::path(out_dir) / "runs.csv").string(),
                    {"scenario", "controller", "seed", "cost", "tracking_mse",
                     "control_effort", "volatility", "initial_price",
                     "final_price", "solver_fallbacks", "aborted"},
                    rows);
  }

  {
    std::vector<std::vector<std::string>> rows;
    const auto agg_row = [&rows](const std::string& controller,
                                 const std::string& metric, double value) {
      rows.push_back({"aggregate", controller, "", metric, csv::format(value)});
    };
    for (const ControllerAggregate& a : rep.aggregates) {
      agg_row(a.controller, "runs", a.runs);
      agg_row(a.controller, "aborted_runs", a.aborted_runs);
      agg_row(a.controller, "median_cost", a.median_cost);
      agg_row(a.controller, "iqr_cost", a.iqr_cost);
      agg_row(a.controller, "median_tracking_mse", a.median_tracking);
      agg_row(a.controller, "median_control_effort", a.median_effort);
      agg_row(a.controller, "median_volatility", a.median_volatility);
    }
    for (const PairwiseComparison& c : rep.comparisons) {
      const auto test_row = [&rows, &c](const std::string& metric, double value) {
        rows.push_back(
            {"wilcoxon", c.controller_a, c.controller_b, metric, csv::format(value)});
      };
      test_row("statistic", c.test.statistic);
      test_row("w_plus", c.test.w_plus);
      test_row("n_used", c.test.n_used);
      test_row("p_value", c.test.p_value);
      test_row("exact", c.test.exact ? 1.0 : 0.0);
      test_row("median_cost_ratio", c.median_cost_ratio);
    }
    csv::write_file((fs::path(out_dir) / "summary.csv").string(),
                    {"row_type", "controller", "other", "metric", "value"}, rows);
  }

  if (rep.runs.empty()) return;

  for (const auto& [name, path] : rep.price_paths) {
    const std::string chart = svg::line_chart(
        "price, median-cost run: " + name, {{name, path}}, rep.price_ref_path);
    svg::write_file((fs::path(out_dir) / ("price_" + name + ".svg")).string(),
                    chart);
  }

  std::vector<svg::Box> boxes;
  for (const ControllerAggregate& a : rep.aggregates) {
    std::vector<double> costs;
    for (const RunMetrics& m : rep.runs) {
      if (m.controller == a.controller && !m.aborted) costs.push_back(m.cost);
    }
    if (costs.empty()) continue;
    svg::Box box;
    box.label = a.controller;
    box.whisker_lo = quantile(costs, 0.0);
    box.q1 = quantile(costs, 0.25);
    box.median = quantile(costs, 0.5);
    box.q3 = quantile(costs, 0.75);
    box.whisker_hi = quantile(costs, 1.0);
    boxes.push_back(box);
  }
  if (!boxes.empty()) {
    svg::write_file((fs::path(out_dir) / "cost_boxplot.svg").string(),
                    svg::box_plot("total cost by controller", boxes));
  }
}

ExperimentConfig standard_suite() {
  ExperimentConfig cfg;
  cfg.name = "standard_suite";
  cfg.controllers = {ControllerKind::MpcIlqr, ControllerKind::Pid,
                     ControllerKind::None};

  // Consumer adoption per regime. The demand-led and balanced regimes sweep
  // sigmoid, logarithmic and exponential shapes; logarithmic curves cannot
  // decline, so the supply-led regime sweeps three decay profiles instead.
  struct Cell {
    const char* label;
    GrowthSpec consumers;
  };
  const Cell demand_leads[3] = {
      {"sigmoid", {GrowthPattern::Sigmoid, 1600.0, 0.06, 40.0, 1800.0, 15.0}},
      {"log", {GrowthPattern::Logarithmic, 300.0, 0.4, 0.0, 1900.0, 15.0}},
      {"exp", {GrowthPattern::Exponential, 1900.0, 0.0055, 0.0, 0.0, 15.0}},
  };
  const Cell balanced[3] = {
      {"sigmoid", {GrowthPattern::Sigmoid, 500.0, 0.05, 50.0, 1800.0, 15.0}},
      {"log", {GrowthPattern::Logarithmic, 120.0, 0.3, 0.0, 1950.0, 15.0}},
      {"exp", {GrowthPattern::Exponential, 1950.0, 0.0015, 0.0, 0.0, 15.0}},
  };
  const Cell supply_leads[3] = {
      {"sigmoid_decay", {GrowthPattern::Sigmoid, 1400.0, -0.05, 40.0, 700.0, 15.0}},
      {"decay_slow", {GrowthPattern::Exponential, 1300.0, -0.014, 0.0, 700.0, 15.0}},
      {"decay_fast", {GrowthPattern::Exponential, 1600.0, -0.025, 0.0, 400.0, 15.0}},
  };
  const GrowthSpec node_curves[3] = {
      {GrowthPattern::Sigmoid, 120.0, 0.07, 40.0, 20.0, 2.0},
      {GrowthPattern::Logarithmic, 30.0, 0.3, 0.0, 25.0, 2.0},
      {GrowthPattern::Exponential, 25.0, 0.01, 0.0, 10.0, 2.0},
  };

  const struct {
    const char* name;
    const Cell* cells;
  } regimes[3] = {{"demand_leads", demand_leads},
                  {"balanced", balanced},
                  {"supply_leads", supply_leads}};

  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        ScenarioSpec s;
        s.name = std::string(regimes[r].name) + "_" + regimes[r].cells[c].label +
                 "_s" + std::to_string(seed);
        s.seed = seed * 1000 + static_cast<std::uint64_t>(r) * 10 + c;
        s.horizon_total = 100;
        s.mpc_horizon = 20;
        SeriesSpec series;
        series.consumers = regimes[r].cells[c].consumers;
        series.nodes = node_curves[c];
        series.unit_demand = 1.0;
        series.income_per_consumer = 0.05;
        s.growth = series;
        s.forecast_noise_std = 0.01;
        Rng init(derive_seed(s.seed, 99));
        s.supply0 = 1000.0 * (0.7 + 0.6 * init.uniform01());
        s.reserve_usd0 = 500.0;
        s.reserve_tok0 = 300.0;
        s.price_ref = 2.0;
        s.bounds.effective_price_min = 0.5 * s.price_ref;
        s.weights.beta_price = 1.0;
        s.weights.beta_buyback = 1e-6;
        s.weights.beta_pay = 1e-6;
        s.pid.gains = {0.8, 0.05, 0.2};
        s.solver.max_iterations = 60;
        cfg.scenarios.push_back(std::move(s));
      }
    }
  }
  return cfg;
}

}  // namespace bme
