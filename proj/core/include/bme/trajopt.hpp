#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bme/objective.hpp"
#include "bme/qp.hpp"

namespace bme {

/// Affine scalar constraint wx' x + wu' u + offset <= 0 evaluated at one
/// stage. Either weight vector may be empty (treated as zero).
struct StageConstraint {
  Vec wx;
  Vec wu;
  double offset = 0.0;
  std::string name;

  double value(const Vec& x, const Vec& u) const {
    double v = offset;
    if (wx.size()) v += wx.dot(x);
    if (wu.size()) v += wu.dot(u);
    return v;
  }
};

/// Generic discrete-time optimal-control problem. The token-economy
/// instance is produced by make_control_problem; tests drive the solvers
/// with synthetic (for example purely linear-quadratic) instances.
struct ControlProblem {
  int nx = 0;
  int nu = 0;
  int horizon = 0;
  Vec initial_state;
  /// x_{t+1} = dynamics(t, x_t, u_t); may throw domain errors for
  /// infeasible inputs, which solvers treat as rejected candidates.
  std::function<Vec(int, const Vec&, const Vec&)> dynamics;
  std::function<LinearizedStep(int, const Vec&, const Vec&)> linearize;
  /// Exact or second-order stage model; `terminal` selects the t == H form.
  std::function<QuadraticStage(int, const Vec&, const Vec&, bool)> quadratize;
  std::function<double(int, const Vec&, const Vec&, bool)> cost;
  /// Inequality constraints per stage; null means unconstrained. At
  /// t == horizon only the state parts apply.
  std::function<std::vector<StageConstraint>(int)> constraints;
};

struct SolveOptions {
  int max_iterations = 100;
  double cost_tolerance = 1e-6;
  double constraint_tolerance = 1e-4;
  double penalty_init = 1.0;
  double penalty_growth = 10.0;
  double regularization_init = 1e-6;
  int max_outer_iterations = 40;
  /// Per-channel trust-region radius for SCP; empty selects 10% of the
  /// largest initial-control magnitude per channel (floor 1).
  Vec trust_region_init;
  /// Non-empty: write per-iteration rows (iteration, cost, violation,
  /// regularization) to this CSV path.
  std::string trace_path;
};

enum class SolveStatus { Converged, MaxIterations, LineSearchFailed };

struct SolveResult {
  std::vector<Vec> states;    ///< H+1 entries
  std::vector<Vec> controls;  ///< H entries
  double cost = 0.0;
  int iterations = 0;  ///< accepted iterations
  bool converged = false;
  SolveStatus status = SolveStatus::MaxIterations;
  double max_violation = 0.0;
  std::vector<Mat> gain_K;  ///< affine feedback u = u_t + k_t + K_t (x - x_t);
  std::vector<Vec> gain_k;  ///< empty for SCP (open-loop method)
};

struct LQRGains {
  std::vector<Mat> K;
  std::vector<Vec> k;
};

/// Time-varying Riccati recursion on a chain of linearized steps and
/// quadratic stages (stages.size() == steps.size() + 1; the terminal
/// stage's control block is ignored). Anchors must form a dynamically
/// consistent trajectory. Gains act on deviations from the anchors.
/// Throws SingularControlHessian when a control Hessian is not positive
/// definite.
LQRGains lqr_gains(const std::vector<LinearizedStep>& steps,
                   const std::vector<QuadraticStage>& stages);

std::vector<Vec> rollout(const ControlProblem& p, const std::vector<Vec>& controls);

double trajectory_cost(const ControlProblem& p, const std::vector<Vec>& states,
                       const std::vector<Vec>& controls);

/// Largest positive constraint value along a trajectory (0 when
/// unconstrained or feasible).
double max_constraint_violation(const ControlProblem& p,
                                const std::vector<Vec>& states,
                                const std::vector<Vec>& controls);

/// Unconstrained iLQR: backward Riccati passes with Levenberg
/// regularization of the control Hessian and a backtracking line search
/// over scales 1, 1/2, ..., 2^-10. Accepted iterations never increase the
/// cost; a line-search failure returns the best iterate with
/// converged = false.
SolveResult ilqr_solve(const ControlProblem& p, std::vector<Vec> initial_controls,
                       const SolveOptions& opts = {});

/// Constrained solve: augmented-Lagrangian outer loop (multiplier updates
/// and penalty growth) around the iLQR core. Throws PenaltyDiverged when
/// the penalty passes 1e12 with the violation still above tolerance.
SolveResult al_ilqr_solve(const ControlProblem& p,
                          std::vector<Vec> initial_controls,
                          const SolveOptions& opts = {});

/// Extra per-stage rows injected into each SCP subproblem by a caller
/// (used by the pricing-game layer to pin incentives and encode follower
/// branches against the current iterate).
struct ScpStagePlan {
  std::vector<StageConstraint> extra_inequalities;
  std::vector<StageConstraint> extra_equalities;  ///< rows forced to == 0
};

/// Called at the top of every SCP iteration with the current iterate; must
/// return one plan per stage t = 0..H-1 (or an empty vector for none).
using ScpPrepare = std::function<std::vector<ScpStagePlan>(
    const std::vector<Vec>& states, const std::vector<Vec>& controls)>;

/// Sequential convex programming: linearize the dynamics along the current
/// rollout, solve the stacked deviation QP (hard state/control bounds plus
/// an infinity-norm trust region on control deviations), and accept steps
/// by actual-versus-predicted cost ratio (> 0.1), growing or shrinking the
/// region. Throws QPInfeasible (with the iteration) or
/// TrustRegionCollapsed.
SolveResult scp_solve(const ControlProblem& p, std::vector<Vec> initial_controls,
                      const SolveOptions& opts = {},
                      const ScpPrepare& prepare = nullptr);

// ---------------------------------------------------------------------------
// Token-economy problem instance.

/// Optimal-control problem over the token economy: initial protocol state,
/// demand/income forecasts for t = 0..H (H+1 points), tracking references,
/// weights, and the feasible set.
struct OCProblem {
  EconomyState initial_state;
  int horizon = 0;
  std::vector<ForecastPoint> forecasts;  ///< H+1 points
  ReferencePath refs;
  CostWeights weights;
  FeasibilityBounds bounds;
};

struct Trajectory {
  std::vector<EconomyState> states;      ///< H+1
  std::vector<ControlInput> controls;    ///< H
  std::vector<ForecastPoint> forecasts;  ///< H+1, the inputs used to step
};

/// Wrap an OCProblem into the generic solver form (validates lengths;
/// throws BadSpec / LengthMismatch).
ControlProblem make_control_problem(const OCProblem& ocp);

/// Income-clearing controls along the forecast path, the default initial
/// guess for every nonconvex solve.
std::vector<Vec> vanilla_initial_controls(const OCProblem& ocp);

Trajectory rollout(const OCProblem& ocp, const std::vector<ControlInput>& controls);

Trajectory to_trajectory(const SolveResult& r, const OCProblem& ocp);

SolveResult ilqr_solve(const OCProblem& ocp, const SolveOptions& opts = {});
SolveResult al_ilqr_solve(const OCProblem& ocp, const SolveOptions& opts = {});
SolveResult scp_solve(const OCProblem& ocp, const SolveOptions& opts = {});

}  // namespace bme
