#include "bme/objective.hpp"

#include <cmath>

#include "bme/csv.hpp"

namespace bme {

Vec pack_state(const EconomyState& x) {
  Vec v(kStateDim);
  v << x.supply, x.reserve_usd, x.reserve_tok, x.price;
  return v;
}

EconomyState unpack_state(const Vec& v) {
  return {v[kSupply], v[kReserveUsd], v[kReserveTok], v[kPrice]};
}

Vec pack_control(const ControlInput& u) {
  Vec v(kControlDim);
  v << u.buyback_usd, u.pay_tok, u.incentive;
  return v;
}

ControlInput unpack_control(const Vec& v) {
  return {v[kBuyback], v[kPay], v[kIncentive]};
}

StageRef ref_at(const ReferencePath& refs, int t) {
  StageRef r;
  r.price_ref = refs.price_ref.at(t);
  const bool terminal = t >= static_cast<int>(refs.buyback_ref.size());
  r.buyback_ref = terminal ? 0.0 : refs.buyback_ref[t];
  r.pay_ref = terminal ? 0.0 : refs.pay_ref[t];
  if (!refs.supply_ref.empty()) r.supply_ref = refs.supply_ref.at(t);
  return r;
}

double stage_cost(const EconomyState& x, const ControlInput& u,
                  const StageRef& ref, const CostWeights& w, bool terminal) {
  const double ep = x.price - ref.price_ref;
  double c = w.beta_price * ep * ep;
  if (w.beta_supply != 0.0 && ref.supply_ref) {
    const double es = x.supply - *ref.supply_ref;
    c += w.beta_supply * es * es;
  }
  if (!terminal) {
    const double eb = u.buyback_usd - ref.buyback_ref;
    const double epay = u.pay_tok - ref.pay_ref;
    c += w.beta_buyback * eb * eb + w.beta_pay * epay * epay;
  }
  return c;
}

double total_cost(const std::vector<EconomyState>& states,
                  const std::vector<ControlInput>& controls,
                  const ReferencePath& refs, const CostWeights& w) {
  const std::size_t H = controls.size();
  if (states.size() != H + 1) {
    throw LengthMismatch("total_cost: need " + std::to_string(H + 1) +
                         " states for " + std::to_string(H) + " controls, got " +
                         std::to_string(states.size()));
  }
  if (refs.price_ref.size() != H + 1 || refs.buyback_ref.size() != H ||
      refs.pay_ref.size() != H ||
      (!refs.supply_ref.empty() && refs.supply_ref.size() != H + 1)) {
    throw LengthMismatch("total_cost: reference lengths do not match horizon " +
                         std::to_string(H));
  }
  double total = 0.0;
  for (std::size_t t = 0; t < H; ++t) {
    total += stage_cost(states[t], controls[t], ref_at(refs, static_cast<int>(t)), w);
  }
  total += stage_cost(states[H], ControlInput{}, ref_at(refs, static_cast<int>(H)),
                      w, /*terminal=*/true);
  return total;
}

LinearizedStep linearize_step(const EconomyState& x, const ControlInput& u,
                              double income_now, double demand_next,
                              double price_guard) {
  const double e = x.price + u.incentive;
  if (!(e >= price_guard)) {
    throw GuardViolation("linearize_step: effective price below guard");
  }
  const double bought = u.buyback_usd / e;
  const double db_dprice = -u.buyback_usd / (e * e);  // also d bought / d incentive
  const double next_supply = x.supply + u.pay_tok - bought;
  if (!(next_supply > 0.0)) {
    throw NonPositiveSupply("linearize_step: next supply not positive");
  }

  LinearizedStep lin;
  lin.state_jacobian = Mat::Identity(kStateDim, kStateDim);
  lin.control_jacobian = Mat::Zero(kStateDim, kControlDim);

  // supply' = supply + pay - buyback/e
  lin.state_jacobian(kSupply, kPrice) = -db_dprice;
  lin.control_jacobian(kSupply, kBuyback) = -1.0 / e;
  lin.control_jacobian(kSupply, kPay) = 1.0;
  lin.control_jacobian(kSupply, kIncentive) = -db_dprice;

  // reserve_usd' = reserve_usd + income - buyback
  lin.control_jacobian(kReserveUsd, kBuyback) = -1.0;

  // reserve_tok' = reserve_tok + buyback/e - pay
  lin.state_jacobian(kReserveTok, kPrice) = db_dprice;
  lin.control_jacobian(kReserveTok, kBuyback) = 1.0 / e;
  lin.control_jacobian(kReserveTok, kPay) = -1.0;
  lin.control_jacobian(kReserveTok, kIncentive) = db_dprice;

  // price' = demand_next / supply', chained through the supply row.
  const double dp_dsupply_next = -demand_next / (next_supply * next_supply);
  lin.state_jacobian(kPrice, kSupply) = dp_dsupply_next;
  lin.state_jacobian(kPrice, kPrice) =
      dp_dsupply_next * lin.state_jacobian(kSupply, kPrice);
  lin.control_jacobian.row(kPrice) =
      dp_dsupply_next * lin.control_jacobian.row(kSupply);

  const EconomyState next = step(x, u, income_now, demand_next, price_guard);
  lin.affine_offset = pack_state(next) -
                      lin.state_jacobian * pack_state(x) -
                      lin.control_jacobian * pack_control(u);
  return lin;
}

QuadraticStage quadratize_stage(const EconomyState& x, const ControlInput& u,
                                const StageRef& ref, const CostWeights& w,
                                bool terminal) {
  QuadraticStage q;
  q.state_hessian = Mat::Zero(kStateDim, kStateDim);
  q.state_gradient = Vec::Zero(kStateDim);
  q.control_hessian = Mat::Zero(kControlDim, kControlDim);
  q.control_gradient = Vec::Zero(kControlDim);

  q.state_hessian(kPrice, kPrice) = 2.0 * w.beta_price;
  q.state_gradient[kPrice] = 2.0 * w.beta_price * (x.price - ref.price_ref);
  if (w.beta_supply != 0.0 && ref.supply_ref) {
    q.state_hessian(kSupply, kSupply) = 2.0 * w.beta_supply;
    q.state_gradient[kSupply] = 2.0 * w.beta_supply * (x.supply - *ref.supply_ref);
  }
  if (!terminal) {
    q.control_hessian(kBuyback, kBuyback) = 2.0 * w.beta_buyback;
    q.control_hessian(kPay, kPay) = 2.0 * w.beta_pay;
    q.control_gradient[kBuyback] =
        2.0 * w.beta_buyback * (u.buyback_usd - ref.buyback_ref);
    q.control_gradient[kPay] = 2.0 * w.beta_pay * (u.pay_tok - ref.pay_ref);
  }
  q.constant = stage_cost(x, u, ref, w, terminal);
  return q;
}

Mat fd_jacobian(const DynamicsFn& f, const EconomyState& x,
                const ControlInput& u, double income_now, double demand_next,
                double step_size) {
  if (!(step_size > 0.0)) {
    throw DomainError("fd_jacobian: step_size must be positive");
  }
  Vec z(kStateDim + kControlDim);
  z << pack_state(x), pack_control(u);
  Mat jac(kStateDim, kStateDim + kControlDim);
  for (int i = 0; i < z.size(); ++i) {
    const double h = step_size * std::max(1.0, std::abs(z[i]));
    Vec zp = z, zm = z;
    zp[i] += h;
    zm[i] -= h;
    const auto eval = [&](const Vec& zz) {
      return pack_state(f(unpack_state(zz.head(kStateDim)),
                          unpack_control(zz.tail(kControlDim)), income_now,
                          demand_next));
    };
    jac.col(i) = (eval(zp) - eval(zm)) / (2.0 * h);
  }
  return jac;
}

ReferencePath load_reference_csv(const std::string& path) {
  const auto table = csv::read_file(path);
  const std::vector<std::string> expected = {"t", "price_ref", "buyback_ref",
                                             "pay_ref"};
  if (table.header != expected) {
    std::string got;
    for (const auto& h : table.header) got += (got.empty() ? "" : ",") + h;
    throw SchemaMismatch(path + ": expected header t,price_ref,buyback_ref,pay_ref"
                         ", got " + got);
  }
  if (table.rows.size() < 2) {
    throw SchemaMismatch(path + ": need at least 2 rows (H >= 1)");
  }
  ReferencePath refs;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    if (static_cast<std::size_t>(row[0]) != i) {
      throw ParseError(path + ": t column must run 0..H, row " +
                       std::to_string(i) + " has t=" + csv::format(row[0]));
    }
    refs.price_ref.push_back(row[1]);
    if (i + 1 < table.rows.size()) {
      refs.buyback_ref.push_back(row[2]);
      refs.pay_ref.push_back(row[3]);
    }
  }
  return refs;
}

}  // namespace bme
