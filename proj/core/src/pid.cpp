#include "bme/pid.hpp"

#include <algorithm>
#include <cmath>

namespace bme {

double pid_raw(double error_now, double error_next_hat, PidState& state,
               const PidGains& gains, double integral_bound) {
  const double out = gains.kp * error_now + gains.ki * state.integral +
                     gains.kd * (error_next_hat - error_now);
  state.integral = std::clamp(state.integral + error_now, -integral_bound,
                              integral_bound);
  state.previous_error = error_now;
  state.has_previous = true;
  return out;
}

ControlInput pid_control(const EconomyState& x, double income_now,
                         double demand_next_hat, double price_ref_next,
                         PidState& state, const PidConfig& cfg) {
  const double error_now = cfg.price_ref - x.price;
  // Predicted next-step error under the vanilla policy (supply unchanged).
  double error_next_hat;
  if (demand_next_hat > 0.0 && x.supply > 0.0) {
    error_next_hat = price_ref_next - demand_next_hat / x.supply;
  } else if (state.has_previous) {
    error_next_hat = error_now + (error_now - state.previous_error);
  } else {
    error_next_hat = error_now;
  }

  const double bound =
      cfg.integral_bound > 0.0 ? cfg.integral_bound : 100.0 * cfg.price_ref;
  const double out = pid_raw(error_now, error_next_hat, state, cfg.gains, bound);

  const double scale = cfg.actuation_scale > 0.0 ? cfg.actuation_scale : income_now;
  ControlInput u = vanilla_control(x, income_now);
  if (out > 0.0) {
    u.buyback_usd += out * scale;
  } else if (out < 0.0) {
    u.pay_tok += -out * scale / std::max(x.price, kPriceGuard);
  }
  // Never spend beyond what the treasury holds after this step's income.
  u.buyback_usd = std::min(u.buyback_usd, x.reserve_usd + income_now);
  u.buyback_usd = std::max(u.buyback_usd, 0.0);
  // The payout mints pay_tok - burned net tokens from the reserve and the
  // buyback burns burned from circulation. Clamp pay_tok so the reserve
  // stays at or above its floor and the post-step supply stays positive;
  // the window is nonempty whenever supply + reserve headroom is.
  const double burned = tokens_bought(u, x.price);
  const double lo = std::max(0.0, burned - x.supply + kPriceGuard);
  const double hi =
      burned + std::max(0.0, x.reserve_tok - cfg.reserve_tok_min);
  u.pay_tok = std::min(std::max(u.pay_tok, lo), std::max(lo, hi));
  return u;
}

}  // namespace bme
