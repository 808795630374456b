#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "sls/game_model.hpp"

#include <memory>
#include <optional>

namespace sls::qp {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Eigen::VectorXd;

/// Second-order cone constraint || T z + t0 ||_2 <= head . z + head0.
struct SocConstraint {
  SparseMatrix T;
  VectorXd t0;
  Eigen::SparseVector<double> head;
  double head0 = 0.0;
};

/// || z[indices] ||_2 <= radius.
struct BallConstraint {
  std::vector<int> indices;
  double radius = 0.0;
};

/// minimize 1/2 z'Qz + q'z
/// s.t.     E z = e,  F z <= f,  SOC blocks,  optional norm ball.
struct ConicProgram {
  int n = 0;
  SparseMatrix Q;
  VectorXd q;
  SparseMatrix E;
  VectorXd e;
  SparseMatrix F;
  VectorXd f;
  std::vector<SocConstraint> socs;
  std::optional<BallConstraint> ball;

  void validate() const;  // throws DimensionError / Error on bad shapes
};

enum class SolveStatus { kOptimal, kInfeasible, kMaxIters };

struct Residuals {
  double stationarity = 0.0;
  double primal = 0.0;
  double dual = 0.0;
  double complementarity = 0.0;
};

struct SolveResult {
  VectorXd z;
  VectorXd dual_eq;
  VectorXd dual_ineq;
  std::vector<VectorXd> dual_soc;   // per block: (head component, tail...)
  VectorXd dual_ball;               // over the ball rows
  double ball_multiplier = 0.0;     // scalar theta with lambda = theta * y/||y||
  SolveStatus status = SolveStatus::kMaxIters;
  Residuals residuals;
  int iterations = 0;
  bool polished = false;

  bool optimal() const { return status == SolveStatus::kOptimal; }
};

struct SolverOptions {
  double tol_stationarity = 1e-9;
  double tol_primal = 1e-9;
  double tol_dual = 1e-8;
  int max_iters = 50000;
  double sigma = 1e-6;   // primal regularization
  double alpha = 1.6;    // over-relaxation
  double rho = 0.1;      // penalty; equalities get eq_rho_scale * rho
  double eq_rho_scale = 1e3;
  int check_interval = 25;
  bool adaptive_rho = true;
  bool scaling = true;
  int scaling_iters = 10;
  bool polish = true;
  int infeasibility_persistence = 500;  // iterations of sustained certificate
};

/// Operator-splitting solver with closed-form cone projections and a cached
/// sparse factorization of the linear step. The factorization depends only
/// on the matrices (Q, E, F, soc T/head, ball indices) and the penalty, so
/// repeated solves that change only the linear terms reuse it.
class Solver {
 public:
  explicit Solver(const ConicProgram& prog, SolverOptions opts = {});
  ~Solver();
  Solver(Solver&&) noexcept;
  Solver& operator=(Solver&&) noexcept;

  /// Refreshes q, e, f, soc offsets and the ball radius; all matrices must
  /// be structurally and numerically unchanged.
  void update_vectors(const ConicProgram& prog);

  SolveResult solve();

  /// Seeds the next solve; the conic iterate is the projection of M z.
  void warm_start(const VectorXd& z, const VectorXd& lambda);
  void clear_warm_start();

  int constraint_rows() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// One-shot solve.
SolveResult solve(const ConicProgram& prog, SolverOptions opts = {});

/// Minimizes || z_head - reference ||^2 over the program's constraint set,
/// where z_head is the leading reference.size() variables; any remaining
/// variables are free auxiliaries. The program's own objective is ignored.
SolveResult project_feasible(const ConicProgram& prog, const VectorXd& reference,
                             SolverOptions opts = {});

}  // namespace sls::qp
