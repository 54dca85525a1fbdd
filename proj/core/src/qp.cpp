#include "bme/qp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <vector>

namespace bme {

namespace {

/// Debug aid: when BME_QP_DUMP names a file, every qp_solve call overwrites
/// it with the instance data, so after a crash the file holds the offender.
void dump_to(const char* path, const Mat& H, const Vec& g, const Mat& Ae,
             const Vec& be, const Mat& Ai, const Vec& bi) {
  std::ofstream out(path);
  out.precision(17);
  const auto mat = [&out](const char* name, const Mat& M) {
    out << name << " " << M.rows() << " " << M.cols() << "\n";
    for (int i = 0; i < M.rows(); ++i) {
      for (int j = 0; j < M.cols(); ++j) out << M(i, j) << (j + 1 < M.cols() ? " " : "\n");
      if (M.cols() == 0) out << "\n";
    }
  };
  mat("H", H);
  mat("g", g);
  mat("Ae", Ae);
  mat("be", be);
  mat("Ai", Ai);
  mat("bi", bi);
}

void maybe_dump(const Mat& H, const Vec& g, const Mat& Ae, const Vec& be,
                const Mat& Ai, const Vec& bi) {
  const char* path = std::getenv("BME_QP_DUMP");
  if (path) dump_to(path, H, g, Ae, be, Ai, bi);
}

constexpr double kStepTol = 1e-11;

struct ActiveSetOutcome {
  Vec y;
  Vec duals;  // one per inequality row, >= 0
  int iterations = 0;
};

/// Orthonormal nullspace basis of the rows listed in `working`. The rows
/// are kept linearly independent by construction, so a plain Householder QR
/// of the transposed stack suffices: its trailing Q columns annihilate the
/// rows exactly (R has no entries beyond column k).
Mat working_nullspace(const Mat& A, const std::vector<int>& working, int n) {
  const int k = static_cast<int>(working.size());
  if (k == 0) return Mat::Identity(n, n);
  if (k >= n) return Mat(n, 0);
  Mat Awt(n, k);
  for (int i = 0; i < k; ++i) Awt.col(i) = A.row(working[i]).transpose();
  Eigen::HouseholderQR<Mat> qr(Awt);
  Mat tail = Mat::Zero(n, n - k);
  tail.bottomRows(n - k).setIdentity();
  return qr.householderQ() * tail;
}

/// A candidate row joins the working set only when its component orthogonal
/// to the span of the current rows clears a fixed angle threshold (rows are
/// unit-norm). A QR rank() test is deliberately avoided: R-diagonals can
/// overestimate rank on nearly dependent sets, and one overestimated add
/// leaves the working rows singular, after which every later candidate is
/// rejected and the iteration wedges. The threshold sits below the
/// directional cutoff of the ratio test, so any row that genuinely blocks a
/// step is guaranteed to be addable.
bool is_independent(const Mat& A, const std::vector<int>& working, int cand) {
  const Vec a = A.row(cand).transpose();
  if (working.empty()) return a.norm() > 1e-12;
  Mat Awt(A.cols(), working.size());
  for (std::size_t i = 0; i < working.size(); ++i)
    Awt.col(i) = A.row(working[i]).transpose();
  const Vec lambda = Awt.completeOrthogonalDecomposition().solve(a);
  return (a - Awt * lambda).norm() > 5e-10;
}

/// Indices into `working`, ordered by how much weight each row carries in the
/// dependency that keeps `cand` out of the working set (Bland: by constraint
/// index instead). Swapping cand against the first of these that keeps the
/// working rows full-rank preserves the active-set invariant.
std::vector<int> dependency_victims(const Mat& A, const std::vector<int>& working,
                                    int cand, bool bland) {
  if (working.empty()) return {};
  Mat Awt(A.cols(), working.size());
  for (std::size_t i = 0; i < working.size(); ++i)
    Awt.col(i) = A.row(working[i]).transpose();
  const Vec lambda = Awt.colPivHouseholderQr().solve(A.row(cand).transpose());
  const double lmax = lambda.cwiseAbs().maxCoeff();
  if (lmax <= 1e-10) return {};
  std::vector<int> order;
  for (int i = 0; i < static_cast<int>(working.size()); ++i) {
    if (std::abs(lambda[i]) > 1e-8 * lmax) order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return bland ? working[a] < working[b]
                 : std::abs(lambda[a]) > std::abs(lambda[b]);
  });
  return order;
}

/// Primal active-set loop for min 0.5 y'Gy + c'y s.t. A y <= b from a
/// feasible start.
///
/// The working set is kept linearly independent. Vertices here are heavily
/// degenerate (many simultaneously tight box-like rows), so after a run of
/// zero-length steps the pivot rules switch to smallest-index selection for
/// both the dropped multiplier and the blocking row, which breaks the
/// add/drop cycles that most-negative selection can enter.
ActiveSetOutcome active_set(const Mat& G, const Vec& c, const Mat& A,
                            const Vec& b, Vec y, const QPOptions& opts) {
  const int n = static_cast<int>(y.size());
  const int m = static_cast<int>(A.rows());
  const int max_iter = opts.max_iterations > 0
                           ? opts.max_iterations
                           : 50 * (n + m + 10);
  std::vector<int> working;
  std::vector<char> in_working(m, 0);
  const Vec r0 = A * y - b;
  for (int i = 0; i < m; ++i) {
    if (std::abs(r0[i]) <= opts.feasibility_tol && is_independent(A, working, i)) {
      working.push_back(i);
      in_working[i] = 1;
    }
  }

  bool bland = false;
  int degenerate_streak = 0;

  // Min-ratio test over rows outside the working set. dir_tol is the
  // denominator cutoff: for unit-norm rows a_i.d below it is treated as
  // orthogonal. A tight row that is numerically dependent on the working set
  // shows a noise cosine up to ~1e-10 against the step direction; blocking on
  // it would freeze the iteration, so the cutoff sits near sqrt(eps) and a
  // twin row inside the working set enforces the true constraint. Under Bland
  // pivoting ties resolve to the smallest row index; otherwise to the first
  // argmin.
  const auto pick_blocking = [&](const Vec& Ad, const Vec& room, double dir_tol) {
    double alpha = std::numeric_limits<double>::infinity();
    int blocking = -1;
    for (int i = 0; i < m; ++i) {
      if (in_working[i] || Ad[i] <= dir_tol) continue;
      const double a = std::max(0.0, room[i]) / Ad[i];
      if (a < alpha - 1e-15) {
        alpha = a;
        blocking = i;
      }
    }
    if (bland && blocking >= 0) {
      for (int i = 0; i < m; ++i) {
        if (in_working[i] || Ad[i] <= dir_tol) continue;
        if (std::max(0.0, room[i]) / Ad[i] <= alpha + 1e-15) {
          blocking = i;
          break;
        }
      }
    }
    return std::pair<double, int>(alpha, blocking);
  };

  // A blocking row that the rank test calls dependent would otherwise be
  // skipped, freezing the iteration; swapping it against a row of the
  // dependency keeps the working set moving. The swap must leave the working
  // rows full-rank: once rank slips, the independence test rejects every
  // candidate and the loop can never recover.
  const auto add_or_exchange = [&](int row) {
    if (is_independent(A, working, row)) {
      working.push_back(row);
      in_working[row] = 1;
      return;
    }
    for (int victim : dependency_victims(A, working, row, bland)) {
      std::vector<int> rest = working;
      rest.erase(rest.begin() + victim);
      if (!is_independent(A, rest, row)) continue;
      in_working[working[victim]] = 0;
      rest.push_back(row);
      working = std::move(rest);
      in_working[row] = 1;
      return;
    }
  };

  ActiveSetOutcome out;
  for (int iter = 0; iter < max_iter; ++iter) {
    out.iterations = iter + 1;
    const Vec grad = G * y + c;
    const Mat Z = working_nullspace(A, working, n);

    Vec d = Vec::Zero(n);
    bool ray = false;
    Vec ray_dir;
    if (Z.cols() > 0) {
      const Mat Hr = Z.transpose() * G * Z;
      const Vec gr = Z.transpose() * grad;
      Eigen::LDLT<Mat> ldlt(Hr);
      Vec dr;
      bool solved = false;
      if (ldlt.info() == Eigen::Success) {
        dr = ldlt.solve(-gr);
        solved = (Hr * dr + gr).lpNorm<Eigen::Infinity>() <=
                 1e-7 * (1.0 + gr.lpNorm<Eigen::Infinity>());
      }
      if (!solved) {
        Eigen::CompleteOrthogonalDecomposition<Mat> cod(Hr);
        dr = cod.solve(-gr);
        if ((Hr * dr + gr).lpNorm<Eigen::Infinity>() >
            1e-7 * (1.0 + gr.lpNorm<Eigen::Infinity>())) {
          // Gradient has a component in the null space of the reduced
          // Hessian: objective decreases linearly along that direction.
          Eigen::SelfAdjointEigenSolver<Mat> eig(Hr);
          const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
          double best = 0.0;
          Vec v;
          for (int k = 0; k < Hr.rows(); ++k) {
            if (std::abs(eig.eigenvalues()[k]) <= 1e-10 * scale) {
              const Vec cand = eig.eigenvectors().col(k);
              const double slope = gr.dot(cand);
              if (std::abs(slope) > best) {
                best = std::abs(slope);
                v = slope > 0 ? Vec(-cand) : cand;
              }
            }
          }
          if (best > 1e-12) {
            ray = true;
            ray_dir = Z * v;
          } else {
            dr.setZero();
          }
        }
      }
      if (!ray) d = Z * dr;
    }

    if (ray) {
      const Vec Ar_dir = A * ray_dir;
      const Vec room = b - A * y;
      auto [alpha, blocking] =
          pick_blocking(Ar_dir, room, 1e-9 * std::max(1.0, ray_dir.norm()));
      if (blocking < 0) {
        // Only rows at noise angles remain; re-test strictly before
        // declaring the problem unbounded.
        std::tie(alpha, blocking) = pick_blocking(Ar_dir, room, 1e-15);
        if (blocking < 0) {
          throw Unbounded("qp: objective decreases along a feasible ray");
        }
      }
      y += alpha * ray_dir;
      add_or_exchange(blocking);
      if (alpha <= 1e-12) {
        if (++degenerate_streak > 30) bland = true;
      } else {
        degenerate_streak = 0;
      }
      continue;
    }

    if (d.lpNorm<Eigen::Infinity>() <= kStepTol * (1.0 + y.lpNorm<Eigen::Infinity>())) {
      // Stationary on the working set; check multipliers.
      Vec mu_w;
      if (!working.empty()) {
        Mat Aw(working.size(), n);
        for (std::size_t i = 0; i < working.size(); ++i)
          Aw.row(i) = A.row(working[i]);
        mu_w = Aw.transpose()
                   .completeOrthogonalDecomposition()
                   .solve(-grad);
      }
      const double negative_tol =
          -opts.optimality_tol * (1.0 + grad.lpNorm<Eigen::Infinity>());
      int drop = -1;
      double most_negative = negative_tol;
      for (std::size_t i = 0; i < working.size(); ++i) {
        if (mu_w[i] >= negative_tol) continue;
        if (bland) {
          // Smallest constraint index wins, independent of magnitude.
          if (drop < 0 || working[i] < working[drop]) drop = static_cast<int>(i);
        } else if (mu_w[i] < most_negative) {
          most_negative = mu_w[i];
          drop = static_cast<int>(i);
        }
      }
      if (drop < 0) {
        out.y = y;
        out.duals = Vec::Zero(m);
        for (std::size_t i = 0; i < working.size(); ++i)
          out.duals[working[i]] = std::max(0.0, mu_w[i]);
        return out;
      }
      in_working[working[drop]] = 0;
      working.erase(working.begin() + drop);
      if (++degenerate_streak > 30) bland = true;
      continue;
    }

    const auto [ratio, blocking] =
        pick_blocking(A * d, b - A * y, 1e-9 * std::max(1.0, d.norm()));
    const double alpha = std::min(1.0, ratio);
    y += alpha * d;
    if (alpha < 1.0 && blocking >= 0) add_or_exchange(blocking);
    if (alpha <= 1e-12) {
      if (++degenerate_streak > 30) bland = true;
    } else {
      degenerate_streak = 0;
    }
  }
  throw Error("qp: active-set iteration limit reached");
}

/// Find a feasible point of A y <= b, or throw Infeasible. Solves the slack
/// relaxation min 0.5 (|s|^2 + eps |y - y_c|^2) s.t. A y - s <= b, -s <= 0,
/// with slack variables only on rows the center y_c violates; the rest must
/// hold outright, which keeps the relaxed problem close to the original size.
/// The eps term makes the Hessian definite but biases the optimum toward the
/// center by about eps * dist(y_c, feasible set), so the solve recenters and
/// repeats; each round shrinks that distance by a factor of roughly eps.
Vec phase1(const Mat& A, const Vec& b, const QPOptions& opts) {
  const int n = static_cast<int>(A.cols());
  const int m = static_cast<int>(A.rows());
  if (m == 0) return Vec::Zero(n);

  Vec y = Vec::Zero(n);
  double violation = (A * y - b).cwiseMax(0.0).lpNorm<Eigen::Infinity>();
  for (int round = 0; round < 6 && violation > opts.feasibility_tol; ++round) {
    const Vec r = A * y - b;
    std::vector<int> violated;
    for (int i = 0; i < m; ++i) {
      if (r[i] > opts.feasibility_tol) violated.push_back(i);
    }
    if (violated.empty()) break;
    const int k = static_cast<int>(violated.size());

    const int nw = n + k;
    Mat G = Mat::Identity(nw, nw);
    G.topLeftCorner(n, n) *= 1e-8;
    Vec c = Vec::Zero(nw);
    c.head(n) = -1e-8 * y;
    Mat Arel = Mat::Zero(m + k, nw);
    Vec brel(m + k);
    Arel.topLeftCorner(m, n) = A;
    brel.head(m) = b;
    for (int j = 0; j < k; ++j) {
      Arel(violated[j], n + j) = -1.0;
      Arel(m + j, n + j) = -1.0;  // slack stays non-negative
      brel[m + j] = 0.0;
    }

    Vec w0 = Vec::Zero(nw);
    w0.head(n) = y;
    for (int j = 0; j < k; ++j) w0[n + j] = r[violated[j]];

    const auto sol = active_set(G, c, Arel, brel, w0, opts);
    const Vec y_next = sol.y.head(n);
    const double v_next = (A * y_next - b).cwiseMax(0.0).lpNorm<Eigen::Infinity>();
    if (v_next >= violation) break;  // stalled; the check below decides
    y = y_next;
    violation = v_next;
  }
  if (violation > 1e2 * opts.feasibility_tol + 1e-8) {
    throw Infeasible("qp: no feasible point (best residual " +
                     std::to_string(violation) + ")");
  }
  return y;
}

}  // namespace

QPResult qp_solve(const Mat& H, const Vec& g, const Mat& Ae, const Vec& be,
                  const Mat& Ai, const Vec& bi, const QPOptions& opts) {
  const int n = static_cast<int>(g.size());
  if (H.rows() != n || H.cols() != n) throw LengthMismatch("qp_solve: H/g size mismatch");
  const int me = static_cast<int>(Ae.rows());
  const int mi = static_cast<int>(Ai.rows());
  if ((me && Ae.cols() != n) || (mi && Ai.cols() != n)) {
    throw LengthMismatch("qp_solve: constraint column count mismatch");
  }
  if (be.size() != me || bi.size() != mi) {
    throw LengthMismatch("qp_solve: constraint rhs length mismatch");
  }
  maybe_dump(H, g, Ae, be, Ai, bi);

  // Unit-norm equality rows keep the rank-revealing elimination honest when
  // the caller stacks rows of very different magnitudes.
  Mat Aen = Ae;
  Vec ben = be;
  for (int i = 0; i < me; ++i) {
    const double s = Aen.row(i).norm();
    if (s > 1e-300) {
      Aen.row(i) /= s;
      ben[i] /= s;
    }
  }

  // Eliminate equalities: z = z_p + Z y with Ae Z = 0.
  Vec z_p = Vec::Zero(n);
  Mat Z = Mat::Identity(n, n);
  if (me > 0) {
    z_p = Aen.completeOrthogonalDecomposition().solve(ben);
    const double eq_res = (Aen * z_p - ben).lpNorm<Eigen::Infinity>();
    if (eq_res > 1e-8 * (1.0 + ben.lpNorm<Eigen::Infinity>())) {
      throw Infeasible("qp: inconsistent equality constraints");
    }
    Eigen::ColPivHouseholderQR<Mat> qr(Aen.transpose());
    const int rank = qr.rank();
    if (rank >= n) {
      Z = Mat(n, 0);
    } else {
      Mat Q = qr.householderQ();
      Z = Q.rightCols(n - rank);
    }
  }

  QPResult res;
  res.ineq_duals = Vec::Zero(mi);
  res.eq_duals = Vec::Zero(me);

  if (Z.cols() == 0) {
    // Equalities pin z completely.
    res.z = z_p;
    if (mi > 0) {
      const double viol = (Ai * z_p - bi).cwiseMax(0.0).lpNorm<Eigen::Infinity>();
      if (viol > 1e2 * opts.feasibility_tol + 1e-8) {
        throw Infeasible("qp: equality-determined point violates inequalities");
      }
    }
  } else {
    const Mat Gr = Z.transpose() * H * Z;
    const Vec cr = Z.transpose() * (H * z_p + g);
    Mat Ar(mi, Z.cols());
    Vec br(mi);
    Vec row_scale = Vec::Ones(mi);
    if (mi > 0) {
      Ar = Ai * Z;
      br = bi - Ai * z_p;
      // Unit-norm reduced rows so the ratio tests, rank tests, and pivot
      // thresholds in the active-set loop compare like with like. A row the
      // elimination leaves without a direction is decided by the equalities
      // alone: violated means the whole problem is infeasible, satisfied
      // means the row is inert.
      for (int i = 0; i < mi; ++i) {
        const double s = Ar.row(i).norm();
        if (s > 1e-12) {
          Ar.row(i) /= s;
          br[i] /= s;
          row_scale[i] = s;
        } else if (br[i] < -(1e2 * opts.feasibility_tol + 1e-8)) {
          throw Infeasible("qp: inequality fixed by the equalities is violated");
        }
      }
    }
    const Vec y0 = phase1(Ar, br, opts);
    ActiveSetOutcome sol;
    try {
      sol = active_set(Gr, cr, Ar, br, y0, opts);
    } catch (const Error& e) {
      if (const char* fp = std::getenv("BME_QP_DUMP_FAIL")) {
        if (!std::ifstream(fp).good()) dump_to(fp, H, g, Ae, be, Ai, bi);
      }
      throw;
    }
    res.z = z_p + Z * sol.y;
    res.ineq_duals = sol.duals.cwiseQuotient(row_scale);
    res.iterations = sol.iterations;
  }

  // Equality duals from the stationarity residual that remains in range(Ae').
  Vec stat = H * res.z + g;
  if (mi > 0) stat += Ai.transpose() * res.ineq_duals;
  if (me > 0) {
    res.eq_duals = Ae.transpose().completeOrthogonalDecomposition().solve(-stat);
    stat += Ae.transpose() * res.eq_duals;
  }
  res.kkt_stationarity = stat.lpNorm<Eigen::Infinity>();
  double feas = 0.0;
  if (me > 0) feas = (Ae * res.z - be).lpNorm<Eigen::Infinity>();
  double comp = 0.0;
  if (mi > 0) {
    const Vec slack = Ai * res.z - bi;
    feas = std::max(feas, slack.cwiseMax(0.0).lpNorm<Eigen::Infinity>());
    comp = (res.ineq_duals.array() * slack.array()).abs().maxCoeff();
  }
  res.kkt_feasibility = feas;
  res.kkt_complementarity = comp;
  return res;
}

}  // namespace bme
