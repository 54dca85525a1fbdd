#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bme/economy.hpp"

namespace bme {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Layout of the packed state vector [supply, reserve_usd, reserve_tok, price].
enum StateIndex { kSupply = 0, kReserveUsd = 1, kReserveTok = 2, kPrice = 3 };
/// Layout of the packed control vector [buyback_usd, pay_tok, incentive].
enum ControlIndex { kBuyback = 0, kPay = 1, kIncentive = 2 };

inline constexpr int kStateDim = 4;
inline constexpr int kControlDim = 3;

Vec pack_state(const EconomyState& x);
EconomyState unpack_state(const Vec& v);
Vec pack_control(const ControlInput& u);
ControlInput unpack_control(const Vec& v);

/// Quadratic tracking weights: price error is weighted at every stage
/// including the terminal one; control deviations only at t < H.
/// beta_supply is an optional extra supply-tracking term, off by default.
struct CostWeights {
  double beta_price = 1.0;
  double beta_buyback = 0.0;
  double beta_pay = 0.0;
  double beta_supply = 0.0;
};

/// Tracking references over a horizon H: price_ref (and the optional
/// supply_ref) carry H+1 entries, the control references H entries.
struct ReferencePath {
  std::vector<double> price_ref;
  std::vector<double> buyback_ref;
  std::vector<double> pay_ref;
  std::vector<double> supply_ref;  // empty, or H+1 entries
};

/// References for a single stage, sliced out of a ReferencePath.
struct StageRef {
  double price_ref = 0.0;
  double buyback_ref = 0.0;
  double pay_ref = 0.0;
  std::optional<double> supply_ref;
};

/// Pull stage t out of a ReferencePath; control refs are zeroed at t == H.
StageRef ref_at(const ReferencePath& refs, int t);

/// First-order model of one dynamics step around an anchor (x, u):
/// f(x', u') ~= state_jacobian x' + control_jacobian u' + affine_offset,
/// exact at the anchor.
struct LinearizedStep {
  Mat state_jacobian;    // 4x4
  Mat control_jacobian;  // 4x3
  Vec affine_offset;     // length 4
};

/// Second-order (here: exact) model of one stage cost around an anchor.
/// Deviations d from the anchor cost
///   constant + state_gradient' dx + control_gradient' du
///            + 0.5 dx' state_hessian dx + 0.5 du' control_hessian du.
struct QuadraticStage {
  Mat state_hessian;    // 4x4, PSD
  Vec state_gradient;   // length 4
  Mat control_hessian;  // 3x3, PSD
  Vec control_gradient; // length 3
  double constant = 0.0;
};

/// One stage of the tracking cost. With terminal = true the control terms
/// are dropped and only the price (and optional supply) error counts.
double stage_cost(const EconomyState& x, const ControlInput& u,
                  const StageRef& ref, const CostWeights& w,
                  bool terminal = false);

/// Sum of stage costs for t = 0..H-1 plus the terminal cost at t = H.
/// Requires states.size() == controls.size() + 1 and reference lengths to
/// match; throws LengthMismatch otherwise.
double total_cost(const std::vector<EconomyState>& states,
                  const std::vector<ControlInput>& controls,
                  const ReferencePath& refs, const CostWeights& w);

/// Analytic Jacobians of step() with respect to state and control, chained
/// through supply into the next price row. income_now only shifts the
/// dollar-reserve row, demand_next only scales the price row.
LinearizedStep linearize_step(const EconomyState& x, const ControlInput& u,
                              double income_now, double demand_next,
                              double price_guard = kPriceGuard);

/// Exact quadratic expansion of stage_cost around (x, u).
QuadraticStage quadratize_stage(const EconomyState& x, const ControlInput& u,
                                const StageRef& ref, const CostWeights& w,
                                bool terminal = false);

/// Dynamics callable shape shared by step() and test doubles.
using DynamicsFn = std::function<EconomyState(
    const EconomyState&, const ControlInput&, double, double)>;

/// Central-difference Jacobian of a dynamics callable, returned as the
/// 4x7 block [d next/d state | d next/d control]. The step for coordinate i
/// is step_size * max(1, |z_i|). Throws DomainError when step_size <= 0.
Mat fd_jacobian(const DynamicsFn& f, const EconomyState& x,
                const ControlInput& u, double income_now, double demand_next,
                double step_size);

/// Load a reference path from CSV with header t,price_ref,buyback_ref,pay_ref.
/// Control references for the final row are ignored so a file with H+1 rows
/// yields price_ref of length H+1 and control refs of length H.
ReferencePath load_reference_csv(const std::string& path);

}  // namespace bme
