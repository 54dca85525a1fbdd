#include "bme/trajopt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace bme {

namespace {

constexpr double kRegMax = 1e10;
constexpr double kRegMin = 1e-12;
constexpr double kPenaltyCap = 1e12;

class TraceWriter {
 public:
  explicit TraceWriter(const std::string& path) {
    if (path.empty()) return;
    out_.open(path);
    if (!out_) throw IOError("cannot open trace file " + path);
    out_ << "iteration,cost,violation,regularization\n";
  }
  void row(int iteration, double cost, double violation, double reg) {
    if (!out_.is_open()) return;
    out_ << iteration << ',' << cost << ',' << violation << ',' << reg << '\n';
  }

 private:
  std::ofstream out_;
};

/// Stage model used by the backward pass; cross is d^2/du dx (nu x nx) and
/// appears only with augmented-Lagrangian terms that couple x and u.
struct InternalStage {
  QuadraticStage q;
  Mat cross;  // 0x0 when absent
};

using StageAugmenter =
    std::function<void(int, const Vec&, const Vec&, bool, InternalStage&)>;
using CostAugmenter = std::function<double(int, const Vec&, const Vec&, bool)>;

struct BackwardPass {
  std::vector<Mat> K;
  std::vector<Vec> k;
  double dV1 = 0.0;  // sum k' Qu (<= 0)
  double dV2 = 0.0;  // sum 0.5 k' Quu k (>= 0)
  bool ok = false;
};

BackwardPass backward_pass(const std::vector<LinearizedStep>& steps,
                           const std::vector<InternalStage>& stages,
                           double reg) {
  const int H = static_cast<int>(steps.size());
  const int nu = static_cast<int>(steps[0].control_jacobian.cols());
  BackwardPass bp;
  bp.K.resize(H);
  bp.k.resize(H);
  Vec Vx = stages[H].q.state_gradient;
  Mat Vxx = stages[H].q.state_hessian;
  for (int t = H - 1; t >= 0; --t) {
    const Mat& A = steps[t].state_jacobian;
    const Mat& B = steps[t].control_jacobian;
    const Vec Qx = stages[t].q.state_gradient + A.transpose() * Vx;
    const Vec Qu = stages[t].q.control_gradient + B.transpose() * Vx;
    const Mat Qxx = stages[t].q.state_hessian + A.transpose() * Vxx * A;
    Mat Qux = B.transpose() * Vxx * A;
    if (stages[t].cross.size()) Qux += stages[t].cross;
    const Mat Quu = stages[t].q.control_hessian + B.transpose() * Vxx * B +
                    reg * Mat::Identity(nu, nu);
    Eigen::LLT<Mat> llt(Quu);
    if (llt.info() != Eigen::Success) return bp;  // needs more regularization
    bp.k[t] = -llt.solve(Qu);
    bp.K[t] = -llt.solve(Qux);
    bp.dV1 += bp.k[t].dot(Qu);
    bp.dV2 += 0.5 * bp.k[t].dot(Quu * bp.k[t]);
    Vx = Qx + bp.K[t].transpose() * (Quu * bp.k[t]) +
         bp.K[t].transpose() * Qu + Qux.transpose() * bp.k[t];
    Vxx = Qxx + bp.K[t].transpose() * Quu * bp.K[t] +
          bp.K[t].transpose() * Qux + Qux.transpose() * bp.K[t];
    Vxx = 0.5 * (Vxx + Vxx.transpose()).eval();
  }
  bp.ok = true;
  return bp;
}

double total_problem_cost(const ControlProblem& p, const std::vector<Vec>& xs,
                          const std::vector<Vec>& us, const CostAugmenter& extra) {
  double J = 0.0;
  for (int t = 0; t < p.horizon; ++t) {
    J += p.cost(t, xs[t], us[t], false);
    if (extra) J += extra(t, xs[t], us[t], false);
  }
  J += p.cost(p.horizon, xs[p.horizon], Vec::Zero(p.nu), true);
  if (extra) J += extra(p.horizon, xs[p.horizon], Vec::Zero(p.nu), true);
  return J;
}

std::vector<InternalStage> build_stages(const ControlProblem& p,
                                        const std::vector<Vec>& xs,
                                        const std::vector<Vec>& us,
                                        const StageAugmenter& augment) {
  std::vector<InternalStage> stages(p.horizon + 1);
  for (int t = 0; t <= p.horizon; ++t) {
    const bool terminal = t == p.horizon;
    const Vec& u = terminal ? Vec::Zero(p.nu).eval() : us[t];
    stages[t].q = p.quadratize(t, xs[t], u, terminal);
    if (augment) augment(t, xs[t], u, terminal, stages[t]);
  }
  return stages;
}

SolveResult ilqr_core(const ControlProblem& p, std::vector<Vec> us,
                      const SolveOptions& opts, const StageAugmenter& augment,
                      const CostAugmenter& extra_cost, TraceWriter* trace) {
  SolveResult res;
  std::vector<Vec> xs = rollout(p, us);
  double J = total_problem_cost(p, xs, us, extra_cost);
  double reg = std::max(opts.regularization_init, kRegMin);
  int accepted = 0;

  std::vector<LinearizedStep> steps(p.horizon);
  while (true) {
    for (int t = 0; t < p.horizon; ++t) steps[t] = p.linearize(t, xs[t], us[t]);
    const auto stages = build_stages(p, xs, us, augment);

    BackwardPass bp;
    while (true) {
      bp = backward_pass(steps, stages, reg);
      if (bp.ok) break;
      reg *= 10.0;
      if (reg > kRegMax) {
        throw SingularControlHessian(
            "ilqr: control Hessian stayed indefinite at regularization cap");
      }
    }
    res.gain_K = bp.K;
    res.gain_k = bp.k;

    // First-order stationarity from the adjoint recursion. The backward-pass
    // "expected" reduction shrinks with the regularization and would declare
    // a heavily damped iterate converged; the gradient does not.
    double grad_norm = 0.0;
    {
      Vec adj = stages[p.horizon].q.state_gradient;
      for (int t = p.horizon - 1; t >= 0; --t) {
        const Vec gu = stages[t].q.control_gradient +
                       steps[t].control_jacobian.transpose() * adj;
        grad_norm = std::max(grad_norm, gu.lpNorm<Eigen::Infinity>());
        adj = stages[t].q.state_gradient +
              steps[t].state_jacobian.transpose() * adj;
      }
    }
    if (grad_norm <= opts.cost_tolerance * (1.0 + std::abs(J))) {
      res.converged = true;
      res.status = SolveStatus::Converged;
      break;
    }
    if (accepted >= opts.max_iterations) {
      res.status = SolveStatus::MaxIterations;
      break;
    }

    bool stepped = false;
    for (int ls = 0; ls <= 10; ++ls) {
      const double alpha = std::ldexp(1.0, -ls);  // 1, 1/2, ..., 2^-10
      std::vector<Vec> xs_new(p.horizon + 1);
      std::vector<Vec> us_new(p.horizon);
      xs_new[0] = p.initial_state;
      bool valid = true;
      for (int t = 0; t < p.horizon; ++t) {
        us_new[t] = us[t] + alpha * bp.k[t] + bp.K[t] * (xs_new[t] - xs[t]);
        try {
          xs_new[t + 1] = p.dynamics(t, xs_new[t], us_new[t]);
        } catch (const Error&) {
          valid = false;
          break;
        }
        if (!xs_new[t + 1].allFinite()) {
          valid = false;
          break;
        }
      }
      if (!valid) continue;
      const double J_new = total_problem_cost(p, xs_new, us_new, extra_cost);
      if (std::isfinite(J_new) && J_new < J) {
        // Levenberg-style damping update from step quality: trust the model
        // (shrink reg) only when a full step delivered most of its predicted
        // reduction; a backtracked or short-falling step raises damping so
        // the next direction stays inside the model's validity region.
        const double drop = J - J_new;
        const double model =
            -(alpha * bp.dV1 + alpha * alpha * bp.dV2);
        const double ratio = model > 0.0 ? drop / model : 0.0;
        if (alpha >= 0.99 && ratio > 0.75) {
          reg = std::max(reg * 0.5, kRegMin);
        } else if (alpha < 0.25 || ratio < 0.25) {
          reg = std::min(reg * 4.0, kRegMax);
        }
        xs = std::move(xs_new);
        us = std::move(us_new);
        J = J_new;
        ++accepted;
        stepped = true;
        if (trace) trace->row(accepted, J, max_constraint_violation(p, xs, us), reg);
        break;
      }
    }
    if (!stepped) {
      reg *= 10.0;
      if (reg > kRegMax) {
        res.status = SolveStatus::LineSearchFailed;
        break;
      }
    }
  }

  res.states = std::move(xs);
  res.controls = std::move(us);
  res.cost = J;
  res.iterations = accepted;
  return res;
}

/// Constraint rows cached per stage (t = 0..H).
std::vector<std::vector<StageConstraint>> gather_constraints(const ControlProblem& p) {
  std::vector<std::vector<StageConstraint>> rows(p.horizon + 1);
  if (!p.constraints) return rows;
  for (int t = 0; t <= p.horizon; ++t) rows[t] = p.constraints(t);
  return rows;
}

}  // namespace

LQRGains lqr_gains(const std::vector<LinearizedStep>& steps,
                   const std::vector<QuadraticStage>& stages) {
  if (steps.empty() || stages.size() != steps.size() + 1) {
    throw LengthMismatch("lqr_gains: need H steps and H+1 stages");
  }
  std::vector<InternalStage> internal(stages.size());
  for (std::size_t i = 0; i < stages.size(); ++i) internal[i].q = stages[i];
  const auto bp = backward_pass(steps, internal, 0.0);
  if (!bp.ok) {
    throw SingularControlHessian("lqr_gains: control Hessian not positive definite");
  }
  return {bp.K, bp.k};
}

std::vector<Vec> rollout(const ControlProblem& p, const std::vector<Vec>& controls) {
  if (static_cast<int>(controls.size()) != p.horizon) {
    throw LengthMismatch("rollout: expected " + std::to_string(p.horizon) +
                         " controls, got " + std::to_string(controls.size()));
  }
  std::vector<Vec> xs(p.horizon + 1);
  xs[0] = p.initial_state;
  for (int t = 0; t < p.horizon; ++t) xs[t + 1] = p.dynamics(t, xs[t], controls[t]);
  return xs;
}

double trajectory_cost(const ControlProblem& p, const std::vector<Vec>& states,
                       const std::vector<Vec>& controls) {
  return total_problem_cost(p, states, controls, nullptr);
}

double max_constraint_violation(const ControlProblem& p,
                                const std::vector<Vec>& states,
                                const std::vector<Vec>& controls) {
  if (!p.constraints) return 0.0;
  double worst = 0.0;
  const Vec zero_u = Vec::Zero(p.nu);
  for (int t = 0; t <= p.horizon; ++t) {
    const Vec& u = t == p.horizon ? zero_u : controls[t];
    for (const auto& c : p.constraints(t)) {
      worst = std::max(worst, c.value(states[t], u));
    }
  }
  return worst;
}

SolveResult ilqr_solve(const ControlProblem& p, std::vector<Vec> initial_controls,
                       const SolveOptions& opts) {
  TraceWriter trace(opts.trace_path);
  auto res = ilqr_core(p, std::move(initial_controls), opts, nullptr, nullptr, &trace);
  res.max_violation = max_constraint_violation(p, res.states, res.controls);
  return res;
}

SolveResult al_ilqr_solve(const ControlProblem& p,
                          std::vector<Vec> initial_controls,
                          const SolveOptions& opts) {
  const auto rows = gather_constraints(p);
  std::size_t total_rows = 0;
  for (const auto& r : rows) total_rows += r.size();
  if (total_rows == 0) return ilqr_solve(p, std::move(initial_controls), opts);

  TraceWriter trace(opts.trace_path);
  std::vector<Vec> lambda(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    lambda[t] = Vec::Zero(static_cast<int>(rows[t].size()));
  }
  double mu = opts.penalty_init;

  // Penalty terms use the standard shifted quadratic form whose multiplier
  // update is lambda <- max(0, lambda + mu c); inactive constraints
  // (c < 0, lambda = 0) contribute nothing.
  const auto penalty_cost = [&](int t, const Vec& x, const Vec& u, bool) {
    double phi = 0.0;
    for (std::size_t i = 0; i < rows[t].size(); ++i) {
      const double c = rows[t][i].value(x, u);
      const double m = std::max(0.0, lambda[t][i] + mu * c);
      phi += (m * m - lambda[t][i] * lambda[t][i]) / (2.0 * mu);
    }
    return phi;
  };
  const auto augment = [&](int t, const Vec& x, const Vec& u, bool,
                           InternalStage& stage) {
    for (std::size_t i = 0; i < rows[t].size(); ++i) {
      const auto& con = rows[t][i];
      const double c = con.value(x, u);
      const double m = lambda[t][i] + mu * c;
      if (m <= 0.0) continue;
      if (con.wx.size()) {
        stage.q.state_gradient += m * con.wx;
        stage.q.state_hessian += mu * con.wx * con.wx.transpose();
      }
      if (con.wu.size()) {
        stage.q.control_gradient += m * con.wu;
        stage.q.control_hessian += mu * con.wu * con.wu.transpose();
      }
      if (con.wx.size() && con.wu.size()) {
        if (!stage.cross.size()) stage.cross = Mat::Zero(p.nu, p.nx);
        stage.cross += mu * con.wu * con.wx.transpose();
      }
    }
  };

  const auto violation_of = [&](const std::vector<Vec>& xs,
                                const std::vector<Vec>& us) {
    double worst = 0.0;
    const Vec zero_u = Vec::Zero(p.nu);
    for (std::size_t t = 0; t < rows.size(); ++t) {
      const Vec& u = static_cast<int>(t) == p.horizon ? zero_u : us[t];
      for (const auto& con : rows[t]) {
        worst = std::max(worst, con.value(xs[t], u));
      }
    }
    return worst;
  };

  SolveOptions inner_opts = opts;
  inner_opts.trace_path.clear();
  std::vector<Vec> us = std::move(initial_controls);
  SolveResult last;
  double v_prev = std::numeric_limits<double>::infinity();
  int total_iterations = 0;

  for (int outer = 0; outer < opts.max_outer_iterations; ++outer) {
    last = ilqr_core(p, us, inner_opts, augment, penalty_cost, nullptr);
    us = last.controls;
    total_iterations += last.iterations;
    const double v = violation_of(last.states, last.controls);
    trace.row(outer + 1, trajectory_cost(p, last.states, last.controls), v, mu);
    if (v <= opts.constraint_tolerance && last.converged) {
      last.cost = trajectory_cost(p, last.states, last.controls);
      last.max_violation = v;
      last.iterations = total_iterations;
      last.converged = true;
      last.status = SolveStatus::Converged;
      return last;
    }
    const Vec zero_u = Vec::Zero(p.nu);
    for (std::size_t t = 0; t < rows.size(); ++t) {
      const Vec& u = static_cast<int>(t) == p.horizon ? zero_u : last.controls[t];
      for (std::size_t i = 0; i < rows[t].size(); ++i) {
        lambda[t][i] =
            std::max(0.0, lambda[t][i] + mu * rows[t][i].value(last.states[t], u));
      }
    }
    if (v > 0.25 * v_prev) mu *= opts.penalty_growth;
    v_prev = v;
    if (mu > kPenaltyCap) {
      throw PenaltyDiverged("al_ilqr: penalty exceeded cap with violation " +
                            std::to_string(v));
    }
  }
  last.cost = trajectory_cost(p, last.states, last.controls);
  last.max_violation = violation_of(last.states, last.controls);
  last.iterations = total_iterations;
  last.converged = false;
  last.status = SolveStatus::MaxIterations;
  return last;
}

SolveResult scp_solve(const ControlProblem& p, std::vector<Vec> initial_controls,
                      const SolveOptions& opts, const ScpPrepare& prepare) {
  TraceWriter trace(opts.trace_path);
  const int H = p.horizon;
  const int nx = p.nx;
  const int nu = p.nu;
  const int nz = nx * H + nu * H;
  const auto xi = [nx](int t) { return (t - 1) * nx; };          // state block, t >= 1
  const auto ui = [nx, nu, H](int t) { return nx * H + t * nu; };

  std::vector<Vec> us = std::move(initial_controls);
  std::vector<Vec> xs = rollout(p, us);
  double J = trajectory_cost(p, xs, us);

  Vec radius = opts.trust_region_init;
  if (radius.size() == 0) {
    radius = Vec::Constant(nu, 1.0);
    for (const auto& u : us) {
      for (int ch = 0; ch < nu; ++ch) {
        radius[ch] = std::max(radius[ch], std::abs(u[ch]));
      }
    }
    radius *= 0.1;
  } else if (static_cast<int>(radius.size()) != nu || (radius.array() <= 0.0).any()) {
    throw DomainError("scp: trust_region_init must be positive per control channel");
  }
  const double radius_floor = 1e-10 * radius.maxCoeff();
  // Flat cost directions ride the box and would otherwise double it forever.
  const Vec radius_cap = radius * 1e4;

  const auto base_rows = gather_constraints(p);
  std::vector<ScpStagePlan> plans;

  const auto violation_of = [&](const std::vector<Vec>& sx,
                                const std::vector<Vec>& su) {
    double worst = max_constraint_violation(p, sx, su);
    for (std::size_t t = 0; t < plans.size(); ++t) {
      for (const auto& con : plans[t].extra_inequalities) {
        worst = std::max(worst, con.value(sx[t], su[t]));
      }
      for (const auto& con : plans[t].extra_equalities) {
        worst = std::max(worst, std::abs(con.value(sx[t], su[t])));
      }
    }
    return worst;
  };

  SolveResult res;
  int accepted = 0;
  for (int iter = 1; iter <= opts.max_iterations; ++iter) {
    if (prepare) {
      plans = prepare(xs, us);
      if (!plans.empty() && static_cast<int>(plans.size()) != H) {
        throw LengthMismatch("scp: prepare hook must return one plan per stage");
      }
    }

    // Quadratic model of the cost in stacked deviations.
    Mat Hq = Mat::Zero(nz, nz);
    Vec gq = Vec::Zero(nz);
    std::vector<LinearizedStep> steps(H);
    for (int t = 0; t < H; ++t) {
      steps[t] = p.linearize(t, xs[t], us[t]);
      const auto q = p.quadratize(t, xs[t], us[t], false);
      if (t >= 1) {
        Hq.block(xi(t), xi(t), nx, nx) += q.state_hessian;
        gq.segment(xi(t), nx) += q.state_gradient;
      }
      Hq.block(ui(t), ui(t), nu, nu) += q.control_hessian;
      gq.segment(ui(t), nu) += q.control_gradient;
    }
    {
      const auto qH = p.quadratize(H, xs[H], Vec::Zero(nu), true);
      Hq.block(xi(H), xi(H), nx, nx) += qH.state_hessian;
      gq.segment(xi(H), nx) += qH.state_gradient;
    }
    // Proximal tie-break: directions the cost does not see stay at the
    // anchor instead of wandering to a box face.
    Hq.diagonal().array() += 1e-9 * std::max(1.0, Hq.cwiseAbs().maxCoeff());

    // Dynamics equalities (defects vanish: anchors come from a rollout).
    int extra_eq = 0;
    for (const auto& plan : plans) extra_eq += static_cast<int>(plan.extra_equalities.size());
    Mat Ae = Mat::Zero(nx * H + extra_eq, nz);
    Vec be = Vec::Zero(nx * H + extra_eq);
    for (int t = 0; t < H; ++t) {
      Ae.block(t * nx, xi(t + 1), nx, nx) = Mat::Identity(nx, nx);
      if (t >= 1) Ae.block(t * nx, xi(t), nx, nx) = -steps[t].state_jacobian;
      Ae.block(t * nx, ui(t), nx, nu) = -steps[t].control_jacobian;
    }
    int eq_row = nx * H;
    for (std::size_t t = 0; t < plans.size(); ++t) {
      for (const auto& con : plans[t].extra_equalities) {
        if (con.wx.size() && t >= 1) Ae.block(eq_row, xi(static_cast<int>(t)), 1, nx) = con.wx.transpose();
        if (con.wu.size()) Ae.block(eq_row, ui(static_cast<int>(t)), 1, nu) = con.wu.transpose();
        be[eq_row] = -con.value(xs[t], us[t]);
        ++eq_row;
      }
    }

    // Inequalities: problem rows, plan rows, trust region.
    std::vector<Eigen::RowVectorXd> ineq_rows;
    std::vector<double> ineq_rhs;
    const auto add_ineq = [&](int t, const StageConstraint& con) {
      Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nz);
      if (con.wx.size() && t >= 1) row.segment(xi(t), nx) = con.wx.transpose();
      if (con.wu.size() && t < H) row.segment(ui(t), nu) = con.wu.transpose();
      const Vec& u_t = t == H ? Vec::Zero(nu).eval() : us[t];
      ineq_rows.push_back(row);
      ineq_rhs.push_back(-con.value(xs[t], u_t));
    };
    for (int t = 0; t <= H; ++t) {
      for (const auto& con : base_rows[t]) add_ineq(t, con);
    }
    for (std::size_t t = 0; t < plans.size(); ++t) {
      for (const auto& con : plans[t].extra_inequalities) add_ineq(static_cast<int>(t), con);
    }
    for (int t = 0; t < H; ++t) {
      for (int ch = 0; ch < nu; ++ch) {
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nz);
        row[ui(t) + ch] = 1.0;
        ineq_rows.push_back(row);
        ineq_rhs.push_back(radius[ch]);
        row[ui(t) + ch] = -1.0;
        ineq_rows.push_back(row);
        ineq_rhs.push_back(radius[ch]);
      }
    }
    Mat Ai(ineq_rows.size(), nz);
    Vec bi(ineq_rows.size());
    for (std::size_t i = 0; i < ineq_rows.size(); ++i) {
      Ai.row(i) = ineq_rows[i];
      bi[i] = ineq_rhs[i];
    }

    QPResult qp;
    bool qp_ok = false;
    for (int attempt = 0; attempt < 5 && !qp_ok; ++attempt) {
      try {
        qp = qp_solve(Hq, gq, Ae, be, Ai, bi);
        qp_ok = true;
      } catch (const Infeasible&) {
        if (attempt == 4) {
          throw QPInfeasible("scp: subproblem infeasible at iteration " +
                             std::to_string(iter));
        }
        // Wider control box gives the linearized problem room to restore
        // feasibility of the state bounds; the last retry opens it fully.
        radius = attempt == 3 ? radius_cap
                              : (radius * 10.0).cwiseMin(radius_cap);
        std::size_t row = ineq_rows.size() - 2 * static_cast<std::size_t>(nu) * H;
        for (int t = 0; t < H; ++t) {
          for (int ch = 0; ch < nu; ++ch) {
            bi[row++] = radius[ch];
            bi[row++] = radius[ch];
          }
        }
      }
    }

    const double predicted = -(0.5 * qp.z.dot(Hq * qp.z) + gq.dot(qp.z));
    const double viol_now = violation_of(xs, us);
    const bool anchor_feasible = viol_now <= opts.constraint_tolerance;
    trace.row(iter, J, viol_now, radius.maxCoeff());

    const auto shrink_or_collapse = [&](int at_iter) {
      radius *= 0.5;
      if (radius.maxCoeff() < radius_floor) {
        throw TrustRegionCollapsed("scp: trust region collapsed at iteration " +
                                   std::to_string(at_iter));
      }
    };

    // From a feasible anchor a step is worthwhile only if the model promises
    // a real cost drop. An infeasible anchor instead takes whatever step the
    // QP produced: the linearized rows force it toward feasibility, usually
    // at a model-predicted cost increase.
    if (anchor_feasible &&
        predicted <= opts.cost_tolerance * std::max(1.0, std::abs(J))) {
      res.converged = true;
      res.status = SolveStatus::Converged;
      break;
    }

    std::vector<Vec> us_new(H);
    for (int t = 0; t < H; ++t) us_new[t] = us[t] + qp.z.segment(ui(t), nu);
    bool valid = true;
    std::vector<Vec> xs_new;
    try {
      xs_new = rollout(p, us_new);
      for (const auto& x : xs_new) {
        if (!x.allFinite()) {
          valid = false;
          break;
        }
      }
    } catch (const Error&) {
      valid = false;
    }

    double rho = -1.0;
    double J_new = std::numeric_limits<double>::infinity();
    double viol_new = std::numeric_limits<double>::infinity();
    if (valid) {
      J_new = trajectory_cost(p, xs_new, us_new);
      viol_new = violation_of(xs_new, us_new);
      rho = (J - J_new) / predicted;
    }

    bool accept;
    if (anchor_feasible) {
      accept = rho > 0.1;
    } else {
      // Restoration: require solid progress on the violation and a bounded
      // cost excursion; the ratio test is meaningless while infeasible.
      accept = valid &&
               viol_new <= std::max(0.9 * viol_now, opts.constraint_tolerance) &&
               J_new <= J + 0.1 * std::max(1.0, std::abs(J));
    }

    if (accept) {
      const double drop = J - J_new;
      xs = std::move(xs_new);
      us = std::move(us_new);
      J = J_new;
      ++accepted;
      if (anchor_feasible && rho > 0.75) {
        for (int ch = 0; ch < nu; ++ch) {
          bool at_boundary = false;
          for (int t = 0; t < H && !at_boundary; ++t) {
            at_boundary = std::abs(qp.z[ui(t) + ch]) >= 0.99 * radius[ch];
          }
          if (at_boundary) radius[ch] = std::min(2.0 * radius[ch], radius_cap[ch]);
        }
      }
      if (drop <= opts.cost_tolerance * std::max(1.0, std::abs(J)) &&
          viol_new <= opts.constraint_tolerance) {
        res.converged = true;
        res.status = SolveStatus::Converged;
        break;
      }
    } else {
      shrink_or_collapse(iter);
    }
  }

  res.states = std::move(xs);
  res.controls = std::move(us);
  res.cost = J;
  res.iterations = accepted;
  res.max_violation = violation_of(res.states, res.controls);
  if (!res.converged) res.status = SolveStatus::MaxIterations;
  return res;
}

// ---------------------------------------------------------------------------

ControlProblem make_control_problem(const OCProblem& ocp) {
  if (ocp.horizon < 1) throw BadSpec("OCProblem: horizon must be >= 1");
  if (static_cast<int>(ocp.forecasts.size()) != ocp.horizon + 1) {
    throw LengthMismatch("OCProblem: need horizon+1 forecast points, got " +
                         std::to_string(ocp.forecasts.size()));
  }
  const std::size_t H = ocp.horizon;
  if (ocp.refs.price_ref.size() != H + 1 || ocp.refs.buyback_ref.size() != H ||
      ocp.refs.pay_ref.size() != H ||
      (!ocp.refs.supply_ref.empty() && ocp.refs.supply_ref.size() != H + 1)) {
    throw LengthMismatch("OCProblem: reference lengths do not match horizon");
  }

  ControlProblem p;
  p.nx = kStateDim;
  p.nu = kControlDim;
  p.horizon = ocp.horizon;
  p.initial_state = pack_state(ocp.initial_state);
  p.dynamics = [ocp](int t, const Vec& x, const Vec& u) {
    return pack_state(step(unpack_state(x), unpack_control(u),
                           ocp.forecasts[t].income_hat,
                           ocp.forecasts[t + 1].demand_hat,
                           ocp.bounds.price_guard));
  };
  p.linearize = [ocp](int t, const Vec& x, const Vec& u) {
    return linearize_step(unpack_state(x), unpack_control(u),
                          ocp.forecasts[t].income_hat,
                          ocp.forecasts[t + 1].demand_hat,
                          ocp.bounds.price_guard);
  };
  p.quadratize = [ocp](int t, const Vec& x, const Vec& u, bool terminal) {
    return quadratize_stage(unpack_state(x), unpack_control(u),
                            ref_at(ocp.refs, t), ocp.weights, terminal);
  };
  p.cost = [ocp](int t, const Vec& x, const Vec& u, bool terminal) {
    return stage_cost(unpack_state(x), unpack_control(u), ref_at(ocp.refs, t),
                      ocp.weights, terminal);
  };
  p.constraints = [ocp](int t) {
    std::vector<StageConstraint> rows;
    const auto state_row = [&](int idx, double bound, const char* name) {
      StageConstraint c;
      c.wx = Vec::Zero(kStateDim);
      c.wx[idx] = -1.0;
      c.offset = bound;
      c.name = name;
      rows.push_back(std::move(c));
    };
    if (t >= 1) {
      state_row(kSupply, ocp.bounds.supply_min, "supply_min");
      state_row(kReserveUsd, ocp.bounds.reserve_usd_min, "reserve_usd_min");
      state_row(kReserveTok, ocp.bounds.reserve_tok_min, "reserve_tok_min");
      state_row(kPrice, ocp.bounds.price_min, "price_min");
    }
    if (t < ocp.horizon) {
      StageConstraint cb;
      cb.wu = Vec::Zero(kControlDim);
      cb.wu[kBuyback] = -1.0;
      cb.name = "buyback_nonneg";
      rows.push_back(std::move(cb));
      StageConstraint cp;
      cp.wu = Vec::Zero(kControlDim);
      cp.wu[kPay] = -1.0;
      cp.name = "pay_nonneg";
      rows.push_back(std::move(cp));
      StageConstraint guard;
      guard.wx = Vec::Zero(kStateDim);
      guard.wx[kPrice] = -1.0;
      guard.wu = Vec::Zero(kControlDim);
      guard.wu[kIncentive] = -1.0;
      guard.offset =
          std::max(ocp.bounds.price_guard, ocp.bounds.effective_price_min);
      guard.name = "price_guard";
      rows.push_back(std::move(guard));
    }
    return rows;
  };
  return p;
}

std::vector<Vec> vanilla_initial_controls(const OCProblem& ocp) {
  std::vector<Vec> us;
  us.reserve(ocp.horizon);
  EconomyState x = ocp.initial_state;
  for (int t = 0; t < ocp.horizon; ++t) {
    const ControlInput u = vanilla_control(x, std::max(0.0, ocp.forecasts[t].income_hat));
    us.push_back(pack_control(u));
    x = step(x, u, ocp.forecasts[t].income_hat, ocp.forecasts[t + 1].demand_hat,
             ocp.bounds.price_guard);
  }
  return us;
}

Trajectory rollout(const OCProblem& ocp, const std::vector<ControlInput>& controls) {
  if (static_cast<int>(controls.size()) != ocp.horizon) {
    throw LengthMismatch("rollout: control count does not match horizon");
  }
  Trajectory traj;
  traj.states.push_back(ocp.initial_state);
  traj.controls = controls;
  traj.forecasts = ocp.forecasts;
  for (int t = 0; t < ocp.horizon; ++t) {
    traj.states.push_back(step(traj.states.back(), controls[t],
                               ocp.forecasts[t].income_hat,
                               ocp.forecasts[t + 1].demand_hat,
                               ocp.bounds.price_guard));
  }
  return traj;
}

Trajectory to_trajectory(const SolveResult& r, const OCProblem& ocp) {
  Trajectory traj;
  traj.forecasts = ocp.forecasts;
  traj.states.reserve(r.states.size());
  traj.controls.reserve(r.controls.size());
  for (const auto& x : r.states) traj.states.push_back(unpack_state(x));
  for (const auto& u : r.controls) traj.controls.push_back(unpack_control(u));
  return traj;
}

SolveResult ilqr_solve(const OCProblem& ocp, const SolveOptions& opts) {
  const auto p = make_control_problem(ocp);
  return ilqr_solve(p, vanilla_initial_controls(ocp), opts);
}

SolveResult al_ilqr_solve(const OCProblem& ocp, const SolveOptions& opts) {
  const auto p = make_control_problem(ocp);
  return al_ilqr_solve(p, vanilla_initial_controls(ocp), opts);
}

SolveResult scp_solve(const OCProblem& ocp, const SolveOptions& opts) {
  const auto p = make_control_problem(ocp);
  return scp_solve(p, vanilla_initial_controls(ocp), opts, nullptr);
}

}  // namespace bme
