#pragma once

#include <cstdint>
#include <vector>

#include "bme/trajopt.hpp"

namespace bme {

struct GameParams {
  /// Follower's discount on next-step proceeds.
  double gamma = 0.9;
  /// Floor on the effective sale price p + incentive.
  double price_guard = kPriceGuard;
  /// > 0 switches the expected-price estimate from the plug-in mean to a
  /// Monte Carlo average over normal demand draws.
  int mc_samples = 0;
  double demand_std = 0.0;
  std::uint64_t mc_seed = 0;
};

/// Aggregate payoff of nodes selling a fraction alpha of their holdings now
/// at the effective price and carrying the rest at the discounted expected
/// next price. Throws DomainError outside alpha in [0, 1].
double node_utility(double alpha, double supply, double price, double incentive,
                    double gamma, double expected_price_next);

/// d(node_utility)/d(alpha); constant in alpha because the payoff is linear.
double node_utility_gradient(double supply, double price, double incentive,
                             double gamma, double expected_price_next);

struct BestResponse {
  double alpha = 0.0;
  /// Multiplier on alpha >= 0; nonpositive by convention.
  double lambda_lo = 0.0;
  /// Multiplier on 1 - alpha >= 0; nonpositive by convention.
  double lambda_hi = 0.0;
  double utility = 0.0;
};

/// Maximizes node_utility over alpha in [0, 1]. Linear payoff makes this a
/// threshold rule on the per-token margin (price + incentive) as compared to
/// gamma * expected_price_next; ties within 1e-9 * max(1, price) return the
/// indifferent response alpha = 1/2 with both multipliers zero.
BestResponse best_response(double supply, double price, double incentive,
                           double gamma, double expected_price_next);

struct KktResidual {
  double stationarity = 0.0;
  double primal = 0.0;
  double dual_sign = 0.0;
  double complementarity = 0.0;
  double max_residual() const;
};

/// Residuals of the follower's first-order conditions at (alpha, multipliers)
/// for the maximization of node_utility subject to 0 <= alpha <= 1 with
/// Lagrangian U - lambda_lo * alpha - lambda_hi * (1 - alpha).
KktResidual kkt_residual(double alpha, double lambda_lo, double lambda_hi,
                         double supply, double price, double incentive,
                         double gamma, double expected_price_next);

enum class FollowerBranch { Hold, Indifferent, SellAll };

struct StageGame {
  double alpha = 0.0;
  double expected_price_next = 0.0;
  double lambda_lo = 0.0;
  double lambda_hi = 0.0;
  FollowerBranch branch = FollowerBranch::Indifferent;
  KktResidual kkt;
};

struct GameSolveResult {
  SolveResult solve;
  Trajectory trajectory;
  std::vector<StageGame> stages;
};

/// Leader-follower pricing: optimizes buyback, payout and incentive subject
/// to the nodes' sell fraction being a best response to the posted effective
/// price. Branches per stage between pinning the effective price at the
/// indifference level (any alpha is then optimal and the buyback selects it)
/// and forcing a full sell-off when indifference would require an effective
/// price below the guard. A final polish pass recomputes the incentive from
/// the converged trajectory so the reported KKT residuals are exact up to
/// roundoff. Throws BranchSearchExhausted if branch assignments keep cycling.
GameSolveResult bilevel_solve(const OCProblem& ocp, const GameParams& params,
                              const SolveOptions& opts);

/// Baseline with the sell fraction clamped to a constant (0 or 1): alpha = 0
/// pins the buyback at zero and posts the largest incentive that keeps
/// holding optimal; alpha = 1 forces a full sell-off at an effective price no
/// lower than the discounted expected next price.
GameSolveResult forced_alpha_solve(const OCProblem& ocp, const GameParams& params,
                                   double alpha, const SolveOptions& opts);

struct IncentiveCandidate {
  std::vector<double> incentive;
  double cost = 0.0;
  bool feasible = false;
};

struct IncentiveSearchResult {
  GameSolveResult best;
  std::vector<IncentiveCandidate> grid;
};

/// Derivative-free baseline: enumerates constant incentive paths on a grid
/// (per-step grids when horizon <= 3), solves each with the incentive pinned
/// and the follower response fixed by best_response at the solution of the
/// previous iterate, and keeps the cheapest feasible candidate. Throws
/// BranchSearchExhausted when no candidate is feasible.
IncentiveSearchResult rollout_incentive_search(const OCProblem& ocp,
                                               const GameParams& params,
                                               int grid_points,
                                               const SolveOptions& opts);

}  // namespace bme
