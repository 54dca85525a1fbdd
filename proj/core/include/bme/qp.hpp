#pragma once

#include <Eigen/Dense>

#include "bme/errors.hpp"
#include "bme/objective.hpp"

namespace bme {

struct QPOptions {
  int max_iterations = 0;        // 0: 50 * (rows + cols + 10)
  double feasibility_tol = 1e-9;
  double optimality_tol = 1e-9;
};

struct QPResult {
  Vec z;           ///< minimizer
  Vec eq_duals;    ///< one per equality row (sign-free)
  Vec ineq_duals;  ///< one per inequality row, >= 0
  int iterations = 0;
  double kkt_stationarity = 0.0;    ///< inf-norm of H z + g + Ae' nu + Ai' mu
  double kkt_feasibility = 0.0;     ///< largest constraint violation
  double kkt_complementarity = 0.0; ///< max |mu_i (Ai z - bi)_i|
};

/// Minimize 0.5 z' H z + g' z subject to Ae z = be and Ai z <= bi.
///
/// H must be symmetric positive semidefinite. Equalities are eliminated
/// first through a QR nullspace basis, then a dense primal active-set
/// method runs on the reduced inequality-constrained problem (with a
/// slack-variable phase-1 solve when the origin of the reduced space is
/// infeasible). Throws Infeasible when the constraints admit no point and
/// Unbounded when the objective decreases without limit along a feasible
/// ray. Either matrix may be empty (0 rows).
QPResult qp_solve(const Mat& H, const Vec& g, const Mat& Ae, const Vec& be,
                  const Mat& Ai, const Vec& bi, const QPOptions& opts = {});

}  // namespace bme
