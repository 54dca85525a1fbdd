#include "bme/simulate.hpp"

#include <algorithm>
#include <cmath>

#include "bme/csv.hpp"
#include "bme/rng.hpp"

namespace bme {

std::string controller_name(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::None:
      return "none";
    case ControllerKind::Pid:
      return "pid";
    case ControllerKind::MpcIlqr:
      return "mpc";
    case ControllerKind::MpcScp:
      return "mpc_scp";
    case ControllerKind::MpcBilevel:
      return "mpc_bilevel";
  }
  throw DomainError("controller_name: unknown controller");
}

ControllerKind controller_from_name(const std::string& name) {
  if (name == "none") return ControllerKind::None;
  if (name == "pid") return ControllerKind::Pid;
  if (name == "mpc" || name == "mpc_ilqr") return ControllerKind::MpcIlqr;
  if (name == "mpc_scp") return ControllerKind::MpcScp;
  if (name == "mpc_bilevel") return ControllerKind::MpcBilevel;
  throw BadSpec("unknown controller \"" + name +
                "\"; expected none, pid, mpc, mpc_scp or mpc_bilevel");
}

namespace {

constexpr double kDemandFloor = 1e-9;

/// Forecasts for a planning window starting at step t. Index 0 is the
/// current observation; later points come from the growth model (synthetic
/// scenarios) or AR fits on the realized prefix (preloaded series).
class ForecastSource {
 public:
  ForecastSource(const ScenarioSpec& spec, const TimeSeries& realized,
                 int* forecast_fallbacks)
      : spec_(spec),
        realized_(realized),
        noise_(derive_seed(spec.seed, 20)),
        fallbacks_(forecast_fallbacks) {}

  std::vector<ForecastPoint> window(int t, int h) {
    std::vector<ForecastPoint> f(h + 1);
    f[0].demand_hat = std::max(realized_.demand[t], kDemandFloor);
    f[0].income_hat = std::max(realized_.income[t], 0.0);
    if (spec_.growth) {
      for (int k = 1; k <= h; ++k) {
        const double consumers = growth_mean(spec_.growth->consumers, t + k);
        const double demand = spec_.growth->unit_demand * consumers;
        const double income = spec_.growth->income_per_consumer * consumers;
        f[k].demand_hat = std::max(
            demand * (1.0 + noise_.normal(0.0, spec_.forecast_noise_std)),
            kDemandFloor);
        f[k].income_hat = std::max(
            income * (1.0 + noise_.normal(0.0, spec_.forecast_noise_std)), 0.0);
      }
      return f;
    }
    const auto demand_path = predict_prefix(realized_.demand, t, h);
    const auto income_path = predict_prefix(realized_.income, t, h);
    for (int k = 1; k <= h; ++k) {
      f[k].demand_hat = std::max(demand_path[k - 1], kDemandFloor);
      f[k].income_hat = std::max(income_path[k - 1], 0.0);
    }
    return f;
  }

 private:
  std::vector<double> predict_prefix(const std::vector<double>& series, int t,
                                     int h) {
    const std::vector<double> prefix(series.begin(), series.begin() + t + 1);
    try {
      const ArModel model =
          fit_ar(prefix, spec_.ar_differences, spec_.ar_order);
      return ar_predict(model, prefix, h).mean;
    } catch (const TooShort&) {
    } catch (const RankDeficient&) {
    }
    ++*fallbacks_;
    return std::vector<double>(h, prefix.back());
  }

  const ScenarioSpec& spec_;
  const TimeSeries& realized_;
  Rng noise_;
  int* fallbacks_;
};

ReferencePath window_refs(const ScenarioSpec& spec, int h) {
  ReferencePath refs;
  refs.price_ref.assign(h + 1, spec.price_ref);
  refs.buyback_ref.assign(h, spec.buyback_ref);
  refs.pay_ref.assign(h, spec.pay_ref);
  return refs;
}

std::vector<Vec> shifted_warm_start(const std::vector<Vec>& previous,
                                    const ControlProblem& cp,
                                    const OCProblem& ocp) {
  if (!previous.empty()) {
    std::vector<Vec> out;
    out.reserve(ocp.horizon);
    for (int k = 0; k < ocp.horizon; ++k) {
      const std::size_t idx =
          std::min(static_cast<std::size_t>(k) + 1, previous.size() - 1);
      out.push_back(previous[idx]);
    }
    // The shifted plan was feasible against the previous window; replanning
    // from the realized state can push it outside the dynamics' domain, and
    // solvers need a rollable starting trajectory.
    try {
      rollout(cp, out);
      return out;
    } catch (const Error&) {
    }
  }
  return vanilla_initial_controls(ocp);
}

}  // namespace

SimulationResult run_closed_loop(const ScenarioSpec& spec) {
  if (spec.horizon_total < 1) throw BadSpec("scenario: horizon_total must be >= 1");
  if (spec.mpc_horizon < 1) throw BadSpec("scenario: mpc_horizon must be >= 1");
  if (spec.growth.has_value() == spec.series.has_value()) {
    throw BadSpec("scenario: provide exactly one of growth model or series");
  }
  if (!(spec.supply0 > 0.0)) throw BadSpec("scenario: supply0 must be positive");

  const int T = spec.horizon_total;
  SimulationResult out;
  out.realized = spec.series ? *spec.series
                             : synthesize_series(*spec.growth, T + 1,
                                                 derive_seed(spec.seed, 10));
  if (static_cast<int>(out.realized.demand.size()) < T + 1 ||
      static_cast<int>(out.realized.income.size()) < T + 1) {
    throw BadSpec("scenario: realized series shorter than horizon_total + 1");
  }
  out.price_refs.assign(T + 1, spec.price_ref);

  EconomyState x{spec.supply0, spec.reserve_usd0, spec.reserve_tok0,
                 market_price(out.realized.demand[0], spec.supply0)};
  out.states.push_back(x);

  ForecastSource forecasts(spec, out.realized, &out.forecast_fallbacks);
  const StageRef step_ref{spec.price_ref, spec.buyback_ref, spec.pay_ref, {}};
  PidState pid_state;
  PidConfig pid_cfg = spec.pid;
  pid_cfg.price_ref = spec.price_ref;
  // Hold the baseline to the same token-reserve floor the planner enforces.
  pid_cfg.reserve_tok_min = spec.bounds.reserve_tok_min;
  std::vector<Vec> previous_plan;
  const bool is_mpc = spec.controller == ControllerKind::MpcIlqr ||
                      spec.controller == ControllerKind::MpcScp ||
                      spec.controller == ControllerKind::MpcBilevel;

  for (int t = 0; t < T; ++t) {
    const double income_now = out.realized.income[t];
    ControlInput u{};
    bool from_solver = false;

    if (spec.controller == ControllerKind::None) {
      u = vanilla_control(x, income_now);
    } else if (spec.controller == ControllerKind::Pid) {
      const auto f = forecasts.window(t, 1);
      u = pid_control(x, income_now, f[1].demand_hat, spec.price_ref, pid_state,
                      pid_cfg);
    } else {
      const int h = std::min(spec.mpc_horizon, T - t);
      OCProblem ocp{x, h, forecasts.window(t, h), window_refs(spec, h),
                    spec.weights, spec.bounds};
      try {
        if (spec.controller == ControllerKind::MpcBilevel) {
          const GameSolveResult g = bilevel_solve(ocp, spec.game, spec.solver);
          u = g.trajectory.controls.front();
          out.planned_stage_costs.push_back(
              stage_cost(g.trajectory.states.front(), u, step_ref,
                         spec.weights, false));
          previous_plan.clear();
          previous_plan.reserve(g.trajectory.controls.size());
          for (const auto& c : g.trajectory.controls) {
            previous_plan.push_back(pack_control(c));
          }
        } else {
          const ControlProblem cp = make_control_problem(ocp);
          const auto warm = shifted_warm_start(previous_plan, cp, ocp);
          const SolveResult res = spec.controller == ControllerKind::MpcIlqr
                                      ? al_ilqr_solve(cp, warm, spec.solver)
                                      : scp_solve(cp, warm, spec.solver);
          u = unpack_control(res.controls.front());
          out.planned_stage_costs.push_back(
              stage_cost(x, u, step_ref, spec.weights, false));
          previous_plan = res.controls;
        }
        from_solver = true;
      } catch (const Error& e) {
        if (std::getenv("BME_SIM_TRACE")) {
          std::fprintf(stderr, "fallback t=%d: %s\n", t, e.what());
        }
        u = vanilla_control(x, income_now);
        ++out.solver_fallbacks;
        previous_plan.clear();
        if (is_mpc) {
          out.planned_stage_costs.push_back(
              stage_cost(x, u, step_ref, spec.weights, false));
        }
      }
    }

    EconomyState next;
    try {
      next = step(x, u, income_now, out.realized.demand[t + 1],
                  spec.bounds.price_guard);
    } catch (const Error& first_failure) {
      if (!from_solver) {
        out.aborted = true;
        out.abort_reason = first_failure.what();
        break;
      }
      // A solver control can be infeasible against the realized series;
      // retry the step with the pass-through policy before giving up.
      ++out.solver_fallbacks;
      previous_plan.clear();
      u = vanilla_control(x, income_now);
      if (!out.planned_stage_costs.empty()) {
        out.planned_stage_costs.back() =
            stage_cost(x, u, step_ref, spec.weights, false);
      }
      try {
        next = step(x, u, income_now, out.realized.demand[t + 1],
                    spec.bounds.price_guard);
      } catch (const Error& second_failure) {
        out.aborted = true;
        out.abort_reason = second_failure.what();
        break;
      }
    }

    out.controls.push_back(u);
    out.stage_costs.push_back(stage_cost(x, u, step_ref, spec.weights, false));
    x = next;
    out.states.push_back(x);
  }

  // terminal price term
  StageRef terminal_ref{spec.price_ref, 0.0, 0.0, {}};
  out.total_cost = 0.0;
  for (double c : out.stage_costs) out.total_cost += c;
  out.total_cost +=
      stage_cost(out.states.back(), ControlInput{}, terminal_ref, spec.weights, true);
  return out;
}

void write_trajectory_csv(const std::string& path, const SimulationResult& result) {
  std::vector<std::string> header{"t",       "supply",  "reserve_usd",
                                  "reserve_tok", "price", "buyback",
                                  "payout",  "incentive", "alpha",
                                  "stage_cost"};
  std::vector<std::vector<std::string>> rows;
  rows.reserve(result.states.size());
  for (std::size_t t = 0; t < result.states.size(); ++t) {
    const EconomyState& s = result.states[t];
    ControlInput u{};
    double cost = 0.0;
    double alpha = 0.0;
    if (t < result.controls.size()) {
      u = result.controls[t];
      cost = result.stage_costs[t];
      const double effective = s.price + u.incentive;
      if (effective > 0.0 && s.supply > 0.0) {
        alpha = u.buyback_usd / effective / s.supply;
      }
    }
    rows.push_back({std::to_string(t), csv::format(s.supply),
                    csv::format(s.reserve_usd), csv::format(s.reserve_tok),
                    csv::format(s.price), csv::format(u.buyback_usd),
                    csv::format(u.pay_tok), csv::format(u.incentive),
                    csv::format(alpha), csv::format(cost)});
  }
  csv::write_file(path, header, rows);
}

}  // namespace bme
