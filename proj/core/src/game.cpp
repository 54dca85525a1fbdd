#include "bme/game.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include "bme/rng.hpp"

namespace bme {

namespace {

/// Row modelling f(x, u) ~ value_at + wx'(x - x0) + wu'(u - u0) near the
/// anchor, expressed in the absolute form wx'x + wu'u + offset used by
/// StageConstraint.
StageConstraint affine_row(Vec wx, Vec wu, double value_at, const Vec& x0,
                           const Vec& u0, std::string name) {
  StageConstraint c;
  double lin = 0.0;
  if (wx.size()) lin += wx.dot(x0);
  if (wu.size()) lin += wu.dot(u0);
  c.wx = std::move(wx);
  c.wu = std::move(wu);
  c.offset = value_at - lin;
  c.name = std::move(name);
  return c;
}

/// Follower's expected next-step price per stage, evaluated on the anchor
/// supply path. Plug-in mean by default; Monte Carlo draws are reseeded per
/// call so successive linearizations see the same estimate.
std::vector<double> expected_prices(const OCProblem& ocp, const std::vector<Vec>& xs,
                                    const GameParams& g) {
  std::vector<double> out(ocp.horizon);
  Rng rng(g.mc_seed);
  for (int t = 0; t < ocp.horizon; ++t) {
    const double supply_next = xs[t + 1][kSupply];
    const double mean = ocp.forecasts[t + 1].demand_hat;
    if (g.mc_samples > 0) {
      double acc = 0.0;
      for (int i = 0; i < g.mc_samples; ++i) {
        acc += std::max(0.0, rng.normal(mean, g.demand_std));
      }
      out[t] = acc / g.mc_samples / supply_next;
    } else {
      out[t] = mean / supply_next;
    }
  }
  return out;
}

Vec unit_state(int idx) {
  Vec v = Vec::Zero(kStateDim);
  v[idx] = 1.0;
  return v;
}

Vec unit_control(int idx) {
  Vec v = Vec::Zero(kControlDim);
  v[idx] = 1.0;
  return v;
}

/// Effective price pinned at the indifference level gamma * eprime; the
/// buyback then selects the sell fraction through 0 <= u_b <= gamma*eprime*S.
ScpStagePlan indifferent_plan(double eprime, const GameParams& g) {
  ScpStagePlan plan;
  StageConstraint pin;
  pin.wx = unit_state(kPrice);
  pin.wu = unit_control(kIncentive);
  pin.offset = -g.gamma * eprime;
  pin.name = "indifference_price";
  plan.extra_equalities.push_back(std::move(pin));

  StageConstraint ceiling;
  ceiling.wu = unit_control(kBuyback);
  ceiling.wx = -g.gamma * eprime * unit_state(kSupply);
  ceiling.name = "sell_fraction_ceiling";
  plan.extra_inequalities.push_back(std::move(ceiling));
  return plan;
}

/// Full sell-off: the buyback clears the whole float at the effective price
/// (linearized around the anchor) and the effective price stays at or above
/// the level that makes selling optimal.
ScpStagePlan sell_all_plan(double eprime, const GameParams& g, double guard,
                           const Vec& x0, const Vec& u0) {
  ScpStagePlan plan;
  const double supply = x0[kSupply];
  const double effective = x0[kPrice] + u0[kIncentive];
  Vec wx = Vec::Zero(kStateDim);
  wx[kSupply] = -effective;
  wx[kPrice] = -supply;
  Vec wu = Vec::Zero(kControlDim);
  wu[kBuyback] = 1.0;
  wu[kIncentive] = -supply;
  const double value_at = u0[kBuyback] - supply * effective;
  plan.extra_equalities.push_back(
      affine_row(std::move(wx), std::move(wu), value_at, x0, u0, "market_clearing"));

  StageConstraint floor;
  floor.wx = -unit_state(kPrice);
  floor.wu = -unit_control(kIncentive);
  floor.offset = std::max(g.gamma * eprime, guard);
  floor.name = "sell_optimality_floor";
  plan.extra_inequalities.push_back(std::move(floor));
  return plan;
}

/// Forced hold: zero buyback, incentive pinned at the highest level that
/// keeps holding weakly optimal (or at the guard if that is impossible).
ScpStagePlan hold_plan(double eprime, const GameParams& g, double guard,
                       double price_anchor) {
  ScpStagePlan plan;
  StageConstraint no_buyback;
  no_buyback.wu = unit_control(kBuyback);
  no_buyback.name = "buyback_zero";
  plan.extra_equalities.push_back(std::move(no_buyback));

  const double target =
      std::max(std::min(0.0, g.gamma * eprime - price_anchor), guard - price_anchor);
  StageConstraint pin;
  pin.wu = unit_control(kIncentive);
  pin.offset = -target;
  pin.name = "hold_incentive_pin";
  plan.extra_equalities.push_back(std::move(pin));
  return plan;
}

/// Pin the incentive channel to a fixed value (grid-search candidates).
StageConstraint incentive_pin(double value) {
  StageConstraint pin;
  pin.wu = unit_control(kIncentive);
  pin.offset = -value;
  pin.name = "incentive_pin";
  return pin;
}

Vec game_trust_region(const OCProblem& ocp, double incentive_span) {
  const auto u0 = vanilla_initial_controls(ocp);
  Vec radius = Vec::Constant(kControlDim, 1.0);
  for (const auto& u : u0) {
    for (int ch = 0; ch < kControlDim; ++ch) {
      radius[ch] = std::max(radius[ch], 0.1 * std::abs(u[ch]));
    }
  }
  // Buybacks may need to swing from pass-through income up to the value of
  // the whole float, and the incentive from zero to the indifference gap.
  radius[kBuyback] = std::max(
      radius[kBuyback], 0.05 * ocp.initial_state.supply * ocp.initial_state.price);
  radius[kIncentive] =
      std::max({radius[kIncentive], 0.25 * ocp.initial_state.price, incentive_span});
  return radius;
}

/// Rewrites buyback and (unless fixed) incentive from the converged
/// trajectory so follower consistency holds exactly, then re-rolls the
/// dynamics. The sell fraction per stage is preserved, so the token burn and
/// with it the supply and price paths are unchanged up to roundoff.
void polish(const ControlProblem& cp, const OCProblem& ocp, const GameParams& g,
            const std::vector<FollowerBranch>& branch, bool incentive_fixed,
            SolveResult& res, std::vector<StageGame>& stages) {
  const int H = ocp.horizon;
  const double guard = std::max(g.price_guard, ocp.bounds.price_guard);
  auto& xs = res.states;
  auto& us = res.controls;
  const auto ep = expected_prices(ocp, xs, g);
  std::vector<double> alphas(H, 0.0);

  for (int t = 0; t < H; ++t) {
    const double supply = xs[t][kSupply];
    const double price = xs[t][kPrice];
    double dp = us[t][kIncentive];
    double ub = us[t][kBuyback];
    switch (branch[t]) {
      case FollowerBranch::Hold: {
        ub = 0.0;
        if (!incentive_fixed) {
          dp = std::max(std::min(0.0, g.gamma * ep[t] - price), guard - price);
        }
        alphas[t] = 0.0;
        break;
      }
      case FollowerBranch::SellAll: {
        if (!incentive_fixed) {
          const double effective =
              std::max({price + dp, g.gamma * ep[t], guard});
          dp = effective - price;
        }
        ub = supply * (price + dp);
        alphas[t] = 1.0;
        break;
      }
      case FollowerBranch::Indifferent: {
        const double denom = supply * (price + dp);
        double a = denom > 0.0 ? std::clamp(ub / denom, 0.0, 1.0) : 0.0;
        if (!incentive_fixed) dp = g.gamma * ep[t] - price;
        ub = a * supply * (price + dp);
        alphas[t] = a;
        break;
      }
    }
    us[t][kIncentive] = dp;
    us[t][kBuyback] = ub;
    xs[t + 1] = cp.dynamics(t, xs[t], us[t]);
  }

  const auto ep_final = expected_prices(ocp, xs, g);
  stages.assign(H, StageGame{});
  for (int t = 0; t < H; ++t) {
    StageGame& s = stages[t];
    s.alpha = alphas[t];
    s.expected_price_next = ep_final[t];
    s.branch = branch[t];
    const double grad = node_utility_gradient(
        xs[t][kSupply], xs[t][kPrice], us[t][kIncentive], g.gamma, ep_final[t]);
    switch (branch[t]) {
      case FollowerBranch::Hold:
        s.lambda_lo = grad;
        break;
      case FollowerBranch::SellAll:
        s.lambda_hi = -grad;
        break;
      case FollowerBranch::Indifferent:
        break;
    }
    s.kkt = kkt_residual(s.alpha, s.lambda_lo, s.lambda_hi, xs[t][kSupply],
                         xs[t][kPrice], us[t][kIncentive], g.gamma, ep_final[t]);
  }

  res.cost = trajectory_cost(cp, xs, us);
  res.max_violation = max_constraint_violation(cp, xs, us);
}

GameSolveResult assemble(const ControlProblem& cp, const OCProblem& ocp,
                         const GameParams& g,
                         const std::vector<FollowerBranch>& branch,
                         bool incentive_fixed, SolveResult res) {
  GameSolveResult out;
  polish(cp, ocp, g, branch, incentive_fixed, res, out.stages);
  out.trajectory = to_trajectory(res, ocp);
  out.solve = std::move(res);
  return out;
}

}  // namespace

double node_utility(double alpha, double supply, double price, double incentive,
                    double gamma, double expected_price_next) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw DomainError("node_utility: sell fraction must lie in [0, 1], got " +
                      std::to_string(alpha));
  }
  return alpha * supply * (price + incentive) +
         gamma * (1.0 - alpha) * supply * expected_price_next;
}

double node_utility_gradient(double supply, double price, double incentive,
                             double gamma, double expected_price_next) {
  return supply * (price + incentive) - gamma * supply * expected_price_next;
}

BestResponse best_response(double supply, double price, double incentive,
                           double gamma, double expected_price_next) {
  const double margin = (price + incentive) - gamma * expected_price_next;
  const double tol = 1e-9 * std::max(1.0, std::abs(price));
  const double grad =
      node_utility_gradient(supply, price, incentive, gamma, expected_price_next);
  BestResponse r;
  if (margin > tol) {
    r.alpha = 1.0;
    r.lambda_hi = -grad;
  } else if (margin < -tol) {
    r.alpha = 0.0;
    r.lambda_lo = grad;
  } else {
    r.alpha = 0.5;
  }
  r.utility =
      node_utility(r.alpha, supply, price, incentive, gamma, expected_price_next);
  return r;
}

double KktResidual::max_residual() const {
  return std::max({stationarity, primal, dual_sign, complementarity});
}

KktResidual kkt_residual(double alpha, double lambda_lo, double lambda_hi,
                         double supply, double price, double incentive,
                         double gamma, double expected_price_next) {
  const double grad =
      node_utility_gradient(supply, price, incentive, gamma, expected_price_next);
  KktResidual r;
  r.stationarity = std::abs(grad - lambda_lo + lambda_hi);
  r.primal = std::max(0.0, -alpha) + std::max(0.0, alpha - 1.0);
  r.dual_sign = std::max(0.0, lambda_lo) + std::max(0.0, lambda_hi);
  r.complementarity =
      std::max(std::abs(lambda_lo * alpha), std::abs(lambda_hi * (1.0 - alpha)));
  return r;
}

GameSolveResult bilevel_solve(const OCProblem& ocp, const GameParams& params,
                              const SolveOptions& opts) {
  const auto cp = make_control_problem(ocp);
  const int H = ocp.horizon;
  const double guard = std::max(params.price_guard, ocp.bounds.price_guard);

  std::vector<FollowerBranch> branch_now(H, FollowerBranch::Indifferent);
  std::vector<int> flips(H, 0);
  const auto prepare = [&](const std::vector<Vec>& xs,
                           const std::vector<Vec>& us) {
    const auto ep = expected_prices(ocp, xs, params);
    std::vector<ScpStagePlan> plans(H);
    for (int t = 0; t < H; ++t) {
      const FollowerBranch b = params.gamma * ep[t] >= guard
                                   ? FollowerBranch::Indifferent
                                   : FollowerBranch::SellAll;
      if (b != branch_now[t] && ++flips[t] > 16) {
        throw BranchSearchExhausted(
            "bilevel: follower branch keeps cycling at stage " + std::to_string(t));
      }
      branch_now[t] = b;
      plans[t] = b == FollowerBranch::Indifferent
                     ? indifferent_plan(ep[t], params)
                     : sell_all_plan(ep[t], params, guard, xs[t], us[t]);
    }
    return plans;
  };

  SolveOptions scp_opts = opts;
  if (scp_opts.trust_region_init.size() == 0) {
    scp_opts.trust_region_init = game_trust_region(ocp, ocp.initial_state.price);
  }
  SolveResult res =
      scp_solve(cp, vanilla_initial_controls(ocp), scp_opts, prepare);
  return assemble(cp, ocp, params, branch_now, false, std::move(res));
}

GameSolveResult forced_alpha_solve(const OCProblem& ocp, const GameParams& params,
                                   double alpha, const SolveOptions& opts) {
  if (alpha != 0.0 && alpha != 1.0) {
    throw DomainError("forced_alpha_solve: alpha must be exactly 0 or 1");
  }
  const auto cp = make_control_problem(ocp);
  const int H = ocp.horizon;
  const double guard = std::max(params.price_guard, ocp.bounds.price_guard);
  const FollowerBranch b =
      alpha == 0.0 ? FollowerBranch::Hold : FollowerBranch::SellAll;

  const auto prepare = [&](const std::vector<Vec>& xs,
                           const std::vector<Vec>& us) {
    const auto ep = expected_prices(ocp, xs, params);
    std::vector<ScpStagePlan> plans(H);
    for (int t = 0; t < H; ++t) {
      plans[t] = b == FollowerBranch::Hold
                     ? hold_plan(ep[t], params, guard, xs[t][kPrice])
                     : sell_all_plan(ep[t], params, guard, xs[t], us[t]);
    }
    return plans;
  };

  SolveOptions scp_opts = opts;
  if (scp_opts.trust_region_init.size() == 0) {
    scp_opts.trust_region_init = game_trust_region(ocp, ocp.initial_state.price);
  }
  SolveResult res =
      scp_solve(cp, vanilla_initial_controls(ocp), scp_opts, prepare);
  return assemble(cp, ocp, params, std::vector<FollowerBranch>(H, b), false,
                  std::move(res));
}

IncentiveSearchResult rollout_incentive_search(const OCProblem& ocp,
                                               const GameParams& params,
                                               int grid_points,
                                               const SolveOptions& opts) {
  if (grid_points < 2) throw BadSpec("incentive search needs at least 2 grid points");
  const auto cp = make_control_problem(ocp);
  const int H = ocp.horizon;
  const double guard = std::max(params.price_guard, ocp.bounds.price_guard);

  // Bracket the indifference gap seen along the uncontrolled path.
  const auto us0 = vanilla_initial_controls(ocp);
  const auto xs0 = rollout(cp, us0);
  const auto ep0 = expected_prices(ocp, xs0, params);
  double lo = 0.0;
  double hi = 0.0;
  for (int t = 0; t < H; ++t) {
    const double gap = params.gamma * ep0[t] - xs0[t][kPrice];
    lo = std::min(lo, gap);
    hi = std::max(hi, gap);
  }
  const double pad = 0.25 * std::max(1.0, ocp.initial_state.price);
  lo -= pad;
  hi += pad;
  std::vector<double> levels(grid_points);
  for (int i = 0; i < grid_points; ++i) {
    levels[i] = lo + (hi - lo) * i / (grid_points - 1);
  }

  std::vector<std::vector<double>> paths;
  if (H <= 3) {
    paths.emplace_back();
    for (int t = 0; t < H; ++t) {
      std::vector<std::vector<double>> grown;
      grown.reserve(paths.size() * levels.size());
      for (const auto& base : paths) {
        for (double level : levels) {
          auto next = base;
          next.push_back(level);
          grown.push_back(std::move(next));
        }
      }
      paths = std::move(grown);
    }
  } else {
    for (double level : levels) paths.emplace_back(H, level);
  }

  SolveOptions scp_opts = opts;
  if (scp_opts.trust_region_init.size() == 0) {
    scp_opts.trust_region_init =
        game_trust_region(ocp, std::max(std::abs(lo), std::abs(hi)) + 1.0);
  }

  IncentiveSearchResult out;
  double best_cost = std::numeric_limits<double>::infinity();
  std::optional<SolveResult> best_res;
  std::vector<FollowerBranch> best_branch;

  for (const auto& path : paths) {
    IncentiveCandidate cand;
    cand.incentive = path;
    std::vector<FollowerBranch> branch(H, FollowerBranch::Indifferent);
    const auto prepare = [&](const std::vector<Vec>& xs,
                             const std::vector<Vec>& us) {
      const auto ep = expected_prices(ocp, xs, params);
      std::vector<ScpStagePlan> plans(H);
      for (int t = 0; t < H; ++t) {
        plans[t].extra_equalities.push_back(incentive_pin(path[t]));
        const auto br = best_response(xs[t][kSupply], xs[t][kPrice], path[t],
                                      params.gamma, ep[t]);
        if (br.alpha >= 1.0) {
          branch[t] = FollowerBranch::SellAll;
          auto sell = sell_all_plan(ep[t], params, guard, xs[t], us[t]);
          // Keep only the clearing equality: the price floor is implied by
          // the pinned incentive that selected this branch.
          plans[t].extra_equalities.push_back(sell.extra_equalities.front());
        } else if (br.alpha <= 0.0) {
          branch[t] = FollowerBranch::Hold;
          StageConstraint no_buyback;
          no_buyback.wu = unit_control(kBuyback);
          no_buyback.name = "buyback_zero";
          plans[t].extra_equalities.push_back(std::move(no_buyback));
        } else {
          branch[t] = FollowerBranch::Indifferent;
          StageConstraint ceiling;
          ceiling.wu = unit_control(kBuyback);
          ceiling.wx = -params.gamma * ep[t] * unit_state(kSupply);
          ceiling.name = "sell_fraction_ceiling";
          plans[t].extra_inequalities.push_back(std::move(ceiling));
        }
      }
      return plans;
    };
    try {
      SolveResult res = scp_solve(cp, us0, scp_opts, prepare);
      cand.cost = res.cost;
      cand.feasible = true;
      if (res.cost < best_cost) {
        best_cost = res.cost;
        best_res = std::move(res);
        best_branch = branch;
      }
    } catch (const Error&) {
      cand.cost = std::numeric_limits<double>::infinity();
      cand.feasible = false;
    }
    out.grid.push_back(std::move(cand));
  }

  if (!best_res) {
    throw BranchSearchExhausted("incentive search: no feasible grid candidate");
  }
  out.best = assemble(cp, ocp, params, best_branch, true, std::move(*best_res));
  return out;
}

}  // namespace bme
