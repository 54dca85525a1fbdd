#include "bme/economy.hpp"

#include <cmath>

namespace bme {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

double market_price(double demand, double supply) {
  if (!(supply > 0.0)) {
    throw NonPositiveSupply("market_price: supply must be positive, got " +
                            fmt(supply));
  }
  if (!std::isfinite(demand) || demand < 0.0) {
    throw DomainError("market_price: demand must be finite and non-negative, got " +
                      fmt(demand));
  }
  return demand / supply;
}

double tokens_bought(const ControlInput& u, double price, double price_guard) {
  const double effective = price + u.incentive;
  if (!(effective >= price_guard)) {
    throw GuardViolation("tokens_bought: effective price " + fmt(effective) +
                         " below guard " + fmt(price_guard));
  }
  return u.buyback_usd / effective;
}

EconomyState step(const EconomyState& x, const ControlInput& u,
                  double income_now, double demand_next, double price_guard) {
  const double bought = tokens_bought(u, x.price, price_guard);
  // Token flows are grouped before touching supply so that the
  // income-clearing policy (pay_tok == bought bitwise) is an exact fixed
  // point: minted is then 0.0 and no drift accumulates over long runs.
  const double minted = u.pay_tok - bought;
  EconomyState next;
  next.supply = x.supply + minted;
  if (!(next.supply > 0.0)) {
    throw NonPositiveSupply("step: supply would become " + fmt(next.supply));
  }
  next.reserve_usd = x.reserve_usd + (income_now - u.buyback_usd);
  next.reserve_tok = x.reserve_tok - minted;
  next.price = market_price(demand_next, next.supply);
  return next;
}

ControlInput vanilla_control(const EconomyState& x, double income) {
  if (!(x.price > 0.0)) {
    throw DomainError("vanilla_control: price must be positive, got " +
                      fmt(x.price));
  }
  if (!std::isfinite(income) || income < 0.0) {
    throw DomainError("vanilla_control: income must be finite and non-negative");
  }
  // pay_tok uses the same division tokens_bought performs with zero
  // incentive, so the two cancel exactly inside step().
  return ControlInput{income, income / x.price, 0.0};
}

std::vector<ConstraintViolation> check_feasible(const EconomyState& x,
                                                const ControlInput& u,
                                                const FeasibilityBounds& b) {
  std::vector<ConstraintViolation> out;
  const auto lower = [&out](const char* name, double value, double bound) {
    if (value < bound) out.push_back({name, bound - value});
  };
  lower("supply_min", x.supply, b.supply_min);
  lower("reserve_usd_min", x.reserve_usd, b.reserve_usd_min);
  lower("reserve_tok_min", x.reserve_tok, b.reserve_tok_min);
  lower("price_min", x.price, b.price_min);
  lower("buyback_nonneg", u.buyback_usd, 0.0);
  lower("pay_nonneg", u.pay_tok, 0.0);
  lower("price_guard", x.price + u.incentive, b.price_guard);
  return out;
}

}  // namespace bme
