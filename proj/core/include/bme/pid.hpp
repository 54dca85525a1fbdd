#pragma once

#include "bme/economy.hpp"

namespace bme {

struct PidGains {
  double kp = 0.0;
  double ki = 0.0;
  double kd = 0.0;
};

struct PidState {
  double integral = 0.0;
  double previous_error = 0.0;
  bool has_previous = false;
};

/// One evaluation of the positional PID law on a tracking error.
/// Uses the error forecast for the derivative term and accumulates the
/// integral after producing the output, clamped to +-integral_bound.
double pid_raw(double error_now, double error_next_hat, PidState& state,
               const PidGains& gains, double integral_bound);

struct PidConfig {
  PidGains gains;
  double price_ref = 1.0;
  /// Dollars of actuation per unit of PID output; <= 0 means "this step's
  /// income", which keeps the controller scale-free across scenarios.
  double actuation_scale = 0.0;
  /// Cap on |integral|; <= 0 means 100 * price_ref.
  double integral_bound = 0.0;
  /// Floor on the post-step token reserve; the payout is clamped so the
  /// controller never mints tokens the reserve does not hold.
  double reserve_tok_min = 0.0;
};

/// Price-tracking PID on top of the vanilla pass-through policy.
/// Positive output buys tokens back (price up), negative output mints
/// extra payout (price down). Zero gains reproduce vanilla_control exactly.
/// The buyback is clamped so it never exceeds reserve_usd + income_now, and
/// the payout so the token reserve stays at or above reserve_tok_min and
/// supply stays positive.
ControlInput pid_control(const EconomyState& x, double income_now,
                         double demand_next_hat, double price_ref_next,
                         PidState& state, const PidConfig& cfg);

}  // namespace bme
