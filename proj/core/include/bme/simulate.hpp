#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bme/economy.hpp"
#include "bme/forecast.hpp"
#include "bme/game.hpp"
#include "bme/pid.hpp"
#include "bme/trajopt.hpp"

namespace bme {

enum class ControllerKind { None, Pid, MpcIlqr, MpcScp, MpcBilevel };

std::string controller_name(ControllerKind kind);
ControllerKind controller_from_name(const std::string& name);

struct ScenarioSpec {
  std::string name = "scenario";
  std::uint64_t seed = 1;
  /// Closed-loop steps; the realized series needs horizon_total + 1 points.
  int horizon_total = 100;
  int mpc_horizon = 20;
  ControllerKind controller = ControllerKind::None;

  /// Exactly one source for the realized series: a growth model drawn with
  /// the scenario seed, or a preloaded series (e.g. from CSV).
  std::optional<SeriesSpec> growth;
  std::optional<TimeSeries> series;

  /// Relative noise applied to model-based forecasts: hat = mean * (1 + eps),
  /// eps ~ N(0, forecast_noise_std). Preloaded series use AR forecasts
  /// instead, falling back to holding the last value while the prefix is too
  /// short to fit.
  double forecast_noise_std = 0.0;
  int ar_differences = 1;
  int ar_order = 2;

  double supply0 = 1000.0;
  double reserve_usd0 = 500.0;
  double reserve_tok0 = 0.0;

  double price_ref = 2.0;
  double buyback_ref = 0.0;
  double pay_ref = 0.0;
  CostWeights weights;
  FeasibilityBounds bounds;
  PidConfig pid;
  GameParams game;
  SolveOptions solver;
};

struct SimulationResult {
  std::vector<EconomyState> states;
  std::vector<ControlInput> controls;
  /// Realized per-step cost against the scenario references.
  std::vector<double> stage_costs;
  double total_cost = 0.0;
  /// First-step cost of each accepted MPC plan; equals the realized stage
  /// cost when forecasts are exact. Empty for non-MPC controllers.
  std::vector<double> planned_stage_costs;
  std::vector<double> price_refs;
  TimeSeries realized;
  /// Steps where the solver failed and the pass-through policy was applied.
  int solver_fallbacks = 0;
  /// Steps where the forecaster fell back to holding the last observation.
  int forecast_fallbacks = 0;
  bool aborted = false;
  std::string abort_reason;
};

/// Runs the scenario's controller in closed loop against the realized
/// series: plan on forecasts, apply the first control, step the true
/// dynamics, repeat. Uncontrolled and PID runs consume realized income
/// directly and never touch a solver.
SimulationResult run_closed_loop(const ScenarioSpec& spec);

/// Columns t,supply,reserve_usd,reserve_tok,price,buyback,payout,incentive,
/// alpha,stage_cost; the terminal row carries zero controls.
void write_trajectory_csv(const std::string& path, const SimulationResult& result);

}  // namespace bme
