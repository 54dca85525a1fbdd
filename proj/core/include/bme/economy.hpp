#pragma once

#include <string>
#include <vector>

#include "bme/errors.hpp"

namespace bme {

/// Default lower bound on the effective price p + dp that backs the
/// buy-back division u_b / (p + dp).
inline constexpr double kPriceGuard = 1e-6;

/// Protocol state: circulating token supply, dollar reserve, token reserve,
/// and the market-clearing token price (demand / supply).
struct EconomyState {
  double supply = 0.0;
  double reserve_usd = 0.0;
  double reserve_tok = 0.0;
  double price = 0.0;
};

/// One step of protocol actuation: dollars spent buying tokens back from
/// node operators, tokens paid out to them, and the posted price incentive
/// (premium over the market price offered for buy-backs).
struct ControlInput {
  double buyback_usd = 0.0;
  double pay_tok = 0.0;
  double incentive = 0.0;
};

/// Forecast sample for one step: dollar token demand and protocol income.
struct ForecastPoint {
  double demand_hat = 0.0;
  double income_hat = 0.0;
};

/// Feasible-set description. States live above per-field floors, controls
/// are non-negative, and the effective price stays above the guard.
struct FeasibilityBounds {
  double reserve_usd_min = 0.0;
  double supply_min = 0.0;
  double reserve_tok_min = 0.0;
  double price_min = 0.0;
  double price_guard = kPriceGuard;
  /// Planner-side floor on the effective sale price p + dp, bounding how
  /// deep a below-market buyback may discount. The dynamics only enforce
  /// price_guard; keep this at 0 to allow discounts all the way down to it.
  /// Sale prices near the guard make d(bought)/d(dp) ~ 1/guard^2 and wreck
  /// the conditioning of every derivative-based solver, so closed-loop
  /// scenarios should set a meaningful floor (e.g. half the reference).
  double effective_price_min = 0.0;
};

/// One violated constraint: which bound, and by how much (always > 0).
struct ConstraintViolation {
  std::string constraint;
  double amount = 0.0;
};

/// Market-clearing price demand / supply. Throws NonPositiveSupply when
/// supply <= 0 and DomainError for negative or non-finite demand.
double market_price(double demand, double supply);

/// Tokens acquired by spending buyback_usd at the effective price
/// price + incentive. Throws GuardViolation when the effective price is
/// below the guard.
double tokens_bought(const ControlInput& u, double price,
                     double price_guard = kPriceGuard);

/// Advance the economy one step:
///   supply'      = supply + pay_tok - bought
///   reserve_usd' = reserve_usd + income_now - buyback_usd
///   reserve_tok' = reserve_tok + bought - pay_tok
///   price'       = demand_next / supply'
/// where bought = buyback_usd / (price + incentive). Token flows between
/// supply and the token reserve cancel exactly, so supply + reserve_tok is
/// conserved. Throws NonPositiveSupply when the new supply is <= 0.
EconomyState step(const EconomyState& x, const ControlInput& u,
                  double income_now, double demand_next,
                  double price_guard = kPriceGuard);

/// Income-clearing control: spend the whole income buying tokens back and
/// pay out exactly the tokens bought (buyback_usd = income,
/// pay_tok = income / price, incentive = 0). Its closed-loop fixed point
/// leaves supply and both reserves unchanged, bit for bit.
ControlInput vanilla_control(const EconomyState& x, double income);

/// Check (x, u) against the feasible set; returns one entry per violated
/// constraint with the positive amount by which it is broken. Empty result
/// means (x, u) is feasible.
std::vector<ConstraintViolation> check_feasible(const EconomyState& x,
                                               const ControlInput& u,
                                               const FeasibilityBounds& b);

}  // namespace bme
