// bmectl: command-line front end for the token-economy control lab.
//
// Exit codes: 0 success, 2 config/validation problems, 1 runtime failures.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "bme/csv.hpp"
#include "bme/scenario.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOptions {
  std::string config;
  std::string out_dir;
};

void apply_solver_choice(bme::ScenarioSpec& spec, const std::string& solver) {
  if (solver.empty()) return;
  const bool is_mpc = spec.controller == bme::ControllerKind::MpcIlqr ||
                      spec.controller == bme::ControllerKind::MpcScp;
  if (!is_mpc) return;
  spec.controller = solver == "scp" ? bme::ControllerKind::MpcScp
                                    : bme::ControllerKind::MpcIlqr;
}

int cmd_simulate(const CommonOptions& common, const std::string& controller,
                 std::int64_t seed, const std::string& solver) {
  bme::ScenarioSpec spec = bme::load_scenario(common.config);
  if (!controller.empty()) spec.controller = bme::controller_from_name(controller);
  if (seed >= 0) spec.seed = static_cast<std::uint64_t>(seed);
  apply_solver_choice(spec, solver);

  const bme::SimulationResult result = bme::run_closed_loop(spec);
  std::printf("scenario        %s\n", spec.name.c_str());
  std::printf("controller      %s\n", bme::controller_name(spec.controller).c_str());
  std::printf("steps           %zu\n", result.controls.size());
  std::printf("total cost      %.6g\n", result.total_cost);
  std::vector<double> prices;
  for (const auto& s : result.states) prices.push_back(s.price);
  const std::vector<double> refs(result.price_refs.begin(),
                                 result.price_refs.begin() + prices.size());
  std::printf("tracking mse    %.6g\n", bme::tracking_mse(prices, refs));
  std::printf("initial price   %.6g\n", prices.front());
  std::printf("final price     %.6g\n", prices.back());
  std::printf("solver fallbacks   %d\n", result.solver_fallbacks);
  std::printf("forecast fallbacks %d\n", result.forecast_fallbacks);
  if (result.aborted) {
    std::printf("aborted: %s\n", result.abort_reason.c_str());
  }
  if (!common.out_dir.empty()) {
    fs::create_directories(common.out_dir);
    const std::string path =
        (fs::path(common.out_dir) / ("trajectory_" + spec.name + ".csv")).string();
    bme::write_trajectory_csv(path, result);
    std::printf("trajectory      %s\n", path.c_str());
  }
  return result.aborted ? 1 : 0;
}

int cmd_compare(const CommonOptions& common, bool use_suite) {
  bme::ExperimentConfig cfg =
      use_suite ? bme::standard_suite() : bme::load_experiment(common.config);
  const bme::MetricsReport report = bme::compare_controllers(cfg);
  for (const auto& agg : report.aggregates) {
    std::printf("%-12s runs=%d aborted=%d median_cost=%.6g iqr=%.6g "
                "median_tracking_mse=%.6g\n",
                agg.controller.c_str(), agg.runs, agg.aborted_runs,
                agg.median_cost, agg.iqr_cost, agg.median_tracking);
  }
  for (const auto& cmp : report.comparisons) {
    std::printf("wilcoxon %s vs %s: statistic=%.6g p=%.6g n=%d cost_ratio=%.6g\n",
                cmp.controller_a.c_str(), cmp.controller_b.c_str(),
                cmp.test.statistic, cmp.test.p_value, cmp.test.n_used,
                cmp.median_cost_ratio);
  }
  const std::string out = common.out_dir.empty() ? "report" : common.out_dir;
  bme::emit_report(report, out);
  std::printf("report written to %s\n", out.c_str());
  return 0;
}

const char* branch_name(bme::FollowerBranch b) {
  switch (b) {
    case bme::FollowerBranch::Hold:
      return "hold";
    case bme::FollowerBranch::Indifferent:
      return "indifferent";
    case bme::FollowerBranch::SellAll:
      return "sell_all";
  }
  return "?";
}

int cmd_game(const CommonOptions& common, int horizon, int grid) {
  const bme::ScenarioSpec spec = bme::load_scenario(common.config);
  if (!spec.growth) {
    throw bme::BadSpec("game: scenario must use a growth model");
  }
  const int h = horizon > 0 ? horizon
                            : std::min(spec.mpc_horizon, spec.horizon_total);

  bme::OCProblem ocp;
  ocp.initial_state = {spec.supply0, spec.reserve_usd0, spec.reserve_tok0, 0.0};
  ocp.horizon = h;
  for (int t = 0; t <= h; ++t) {
    const double consumers = bme::growth_mean(spec.growth->consumers, t);
    ocp.forecasts.push_back({spec.growth->unit_demand * consumers,
                             spec.growth->income_per_consumer * consumers});
  }
  ocp.initial_state.price =
      bme::market_price(ocp.forecasts[0].demand_hat, spec.supply0);
  ocp.refs.price_ref.assign(h + 1, spec.price_ref);
  ocp.refs.buyback_ref.assign(h, spec.buyback_ref);
  ocp.refs.pay_ref.assign(h, spec.pay_ref);
  ocp.weights = spec.weights;
  ocp.bounds = spec.bounds;

  const bme::GameSolveResult eq = bme::bilevel_solve(ocp, spec.game, spec.solver);
  std::printf("bilevel cost    %.8g (converged=%d)\n", eq.solve.cost,
              eq.solve.converged ? 1 : 0);
  double worst_kkt = 0.0;
  for (const auto& st : eq.stages) {
    worst_kkt = std::max(worst_kkt, st.kkt.max_residual());
  }
  std::printf("max kkt residual %.3g\n", worst_kkt);
  for (std::size_t t = 0; t < eq.stages.size(); ++t) {
    const auto& st = eq.stages[t];
    std::printf("  t=%-3zu branch=%-11s alpha=%.4f incentive=%+.5g E[p']=%.5g\n",
                t, branch_name(st.branch), st.alpha,
                eq.trajectory.controls[t].incentive, st.expected_price_next);
  }
  for (double forced : {0.0, 1.0}) {
    // A forced branch can be unfinanceable (full sell-off needs the reserve
    // to clear the whole float); that still bounds the equilibrium from above.
    try {
      const bme::GameSolveResult base =
          bme::forced_alpha_solve(ocp, spec.game, forced, spec.solver);
      std::printf("forced alpha=%.0f cost %.8g\n", forced, base.solve.cost);
    } catch (const bme::Error& e) {
      std::printf("forced alpha=%.0f infeasible (%s)\n", forced, e.what());
    }
  }
  if (grid > 0) {
    const bme::IncentiveSearchResult search =
        bme::rollout_incentive_search(ocp, spec.game, grid, spec.solver);
    int feasible = 0;
    for (const auto& cand : search.grid) feasible += cand.feasible ? 1 : 0;
    std::printf("grid search cost %.8g (%d/%zu candidates feasible)\n",
                search.best.solve.cost, feasible, search.grid.size());
  }

  if (!common.out_dir.empty()) {
    fs::create_directories(common.out_dir);
    std::vector<std::vector<std::string>> rows;
    for (std::size_t t = 0; t < eq.stages.size(); ++t) {
      const auto& st = eq.stages[t];
      rows.push_back({std::to_string(t), branch_name(st.branch),
                      bme::csv::format(st.alpha),
                      bme::csv::format(eq.trajectory.controls[t].incentive),
                      bme::csv::format(st.expected_price_next),
                      bme::csv::format(st.lambda_lo), bme::csv::format(st.lambda_hi),
                      bme::csv::format(st.kkt.max_residual())});
    }
    const std::string path = (fs::path(common.out_dir) / "game_stages.csv").string();
    bme::csv::write_file(path,
                         {"t", "branch", "alpha", "incentive",
                          "expected_price_next", "lambda_lo", "lambda_hi",
                          "kkt_residual"},
                         rows);
    std::printf("stage table     %s\n", path.c_str());
  }
  return 0;
}

int cmd_forecast(const std::string& csv_path, const std::string& column, int d,
                 int p, int horizon) {
  const bme::TimeSeries series = bme::load_timeseries_csv(csv_path, 1.0, 1.0);
  const std::vector<double>* data = nullptr;
  if (column == "demand") {
    data = &series.demand;
  } else if (column == "income") {
    data = &series.income;
  } else if (column == "nodes") {
    data = &series.nodes;
  } else if (column == "consumers") {
    data = &series.consumers;
  } else {
    throw bme::BadSpec("forecast: unknown column \"" + column + "\"");
  }

  const bme::ArModel model = bme::fit_ar(*data, d, p);
  std::printf("AR(%d) on %d-times differenced %s, %d observations\n", model.order,
              model.differences, column.c_str(), model.observations);
  std::printf("intercept   %.6g (se %.3g)\n", model.intercept, model.intercept_se);
  for (std::size_t i = 0; i < model.coeffs.size(); ++i) {
    std::printf("phi_%zu       %.6g (se %.3g)\n", i + 1, model.coeffs[i],
                model.coeff_se[i]);
  }
  std::printf("residual sd %.6g\n", model.residual_std);
  const bme::ArForecast fc = bme::ar_predict(model, *data, horizon);
  for (int t = 0; t < horizon; ++t) {
    std::printf("h=%-3d mean=%.6g sd=%.6g\n", t + 1, fc.mean[t], fc.std_dev[t]);
  }
  return 0;
}

int cmd_validate(const std::string& config) {
  std::ifstream in(config);
  if (!in) throw bme::IOError("cannot open " + config);
  std::ostringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw bme::ParseError(e.what());
  }
  const std::string base = fs::path(config).parent_path().string();
  if (j.is_object() && j.contains("scenarios")) {
    const auto cfg = bme::experiment_from_json(ss.str(), base);
    std::printf("ok: experiment \"%s\" with %zu scenarios, %zu controllers\n",
                cfg.name.c_str(), cfg.scenarios.size(), cfg.controllers.size());
  } else {
    const auto spec = bme::scenario_from_json(ss.str(), base);
    std::printf("ok: scenario \"%s\" (%d steps, controller %s)\n",
                spec.name.c_str(), spec.horizon_total,
                bme::controller_name(spec.controller).c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"burn-and-mint token economy control lab"};
  app.require_subcommand(1);

  CommonOptions common;
  std::string controller;
  std::int64_t seed = -1;
  std::string solver;
  bool use_suite = false;
  int horizon = 0;
  int grid = 0;
  std::string csv_path;
  std::string column = "demand";
  int ar_d = 1;
  int ar_p = 2;
  int fc_horizon = 10;

  auto* sim = app.add_subcommand("simulate", "run one scenario in closed loop");
  sim->add_option("--config", common.config, "scenario JSON")->required();
  sim->add_option("--controller", controller, "override controller");
  sim->add_option("--seed", seed, "override scenario seed");
  sim->add_option("--solver", solver, "mpc solver: ilqr or scp")
      ->check(CLI::IsMember({"ilqr", "scp"}));
  sim->add_option("--out-dir", common.out_dir, "write trajectory CSV here");

  auto* cmp = app.add_subcommand("compare", "run an experiment and write a report");
  cmp->add_option("--config", common.config, "experiment JSON");
  cmp->add_flag("--suite", use_suite, "use the built-in benchmark suite");
  cmp->add_option("--out-dir", common.out_dir, "report directory");

  auto* game = app.add_subcommand("game", "solve the pricing game on one window");
  game->add_option("--config", common.config, "scenario JSON")->required();
  game->add_option("--horizon", horizon, "window length (default mpc_horizon)");
  game->add_option("--grid", grid, "also run the incentive grid search");
  game->add_option("--out-dir", common.out_dir, "write stage table here");

  auto* fc = app.add_subcommand("forecast", "fit an AR model to a series CSV");
  fc->add_option("--csv", csv_path, "timeseries CSV")->required();
  fc->add_option("--column", column, "demand, income, nodes or consumers");
  fc->add_option("--d", ar_d, "differencing order");
  fc->add_option("--p", ar_p, "autoregressive order");
  fc->add_option("--horizon", fc_horizon, "forecast steps");

  auto* val = app.add_subcommand("validate", "check a config file");
  val->add_option("--config", common.config, "scenario or experiment JSON")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(common, controller, seed, solver);
    if (cmp->parsed()) {
      if (!use_suite && common.config.empty()) {
        throw bme::BadSpec("compare: pass --config or --suite");
      }
      return cmd_compare(common, use_suite);
    }
    if (game->parsed()) return cmd_game(common, horizon, grid);
    if (fc->parsed()) return cmd_forecast(csv_path, column, ar_d, ar_p, fc_horizon);
    if (val->parsed()) return cmd_validate(common.config);
  } catch (const bme::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const bme::SchemaMismatch& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const bme::BadSpec& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
