#pragma once

#include "sls/qp_solver.hpp"
#include "sls/robust_constraints.hpp"
#include "sls/sls_core.hpp"

#include <memory>

namespace sls {

/// Quadratic operators of the per-player objectives over stacked tap
/// coordinates. With F^q the block-lower-triangular map from player q's
/// input taps to the state taps,
///   H[p][q] = (C^p F^p + D^pp)' (C^p F^q + D^pq),
///   h0[p]   = (C^p F^p + D^pp)' (C^p applied to the impulse column),
/// so that J^p = tr(U^p' H[p][p] U^p) + 2 tr((sum_q H[p][q] U^q + h0[p])' U^p)
/// up to terms constant in U^p.
struct HessianBlocks {
  int horizon = 0;
  std::vector<std::vector<MatrixXd>> H;
  std::vector<MatrixXd> h0;
};

HessianBlocks assemble_hessians(const GameSpec& spec, int horizon);

/// Stacks the taps of a kernel into the (N-1)Nu x Nx matrix the Hessian
/// blocks act on.
MatrixXd stack_taps(const FirKernel& k);
FirKernel unstack_taps(const MatrixXd& stacked, int nu, int nx);

/// J^p of the joint profile; the terminal ||C^p Phi_{x,N}||_F^2 term is
/// controlled by include_terminal.
double objective_value(const GameSpec& spec, int player,
                       const StrategyProfile& profile, bool include_terminal = true);

/// max_p gamma * J^p.
double epsilon_gap(const GameSpec& spec, const StrategyProfile& profile, double gamma);

struct BestResponseOptions {
  int horizon = 2;          // N
  double gamma = 0.95;      // terminal bound, soft-FIR mode
  bool exact_fir = false;   // Phi_{x,N} = 0 instead of the ball
  bool use_structure = false;
  qp::SolverOptions solver;
};

struct BestResponseDiagnostics {
  bool analytic = false;  // closed-form path, no conic solve
  qp::SolveStatus status = qp::SolveStatus::kOptimal;
  qp::Residuals residuals;
  int iterations = 0;
  bool polished = false;
  double terminal_norm_sq = 0.0;  // ||Phi_{x,N}||_F^2 at (result, opponents)
  double ball_multiplier = 0.0;
  bool coupled_active = false;    // any shared row at its bound
};

/// Per-player best-response solver. The conic program is assembled once;
/// each respond() updates only the linear terms induced by the opponents'
/// kernels, reusing the factorization and warm start across rounds.
class BestResponseSolver {
 public:
  BestResponseSolver(const GameSpec& spec, std::shared_ptr<const HessianBlocks> hessians,
                     int player, BestResponseOptions opts);
  ~BestResponseSolver();
  BestResponseSolver(BestResponseSolver&&) noexcept;

  /// opponents must hold one kernel per player; the own slot is ignored.
  FirKernel respond(const std::vector<FirKernel>& opponents,
                    BestResponseDiagnostics* diag = nullptr);

  const CompiledConstraints& compiled() const;
  int player() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// One-shot form of BestResponseSolver::respond.
FirKernel best_response(const GameSpec& spec, int player,
                        const std::vector<FirKernel>& opponents,
                        const BestResponseOptions& opts,
                        BestResponseDiagnostics* diag = nullptr);

/// Closed-form unconstrained solution -(H[p][p])^{-1}(sum H[p][q] U^q + h0[p]);
/// oracle and fast path when nothing compiles.
FirKernel unconstrained_best_response(const GameSpec& spec, const HessianBlocks& hessians,
                                      int player, const std::vector<FirKernel>& opponents);

/// Joint feasibility projection: min ||Phi_u - reference||^2 over the robust
/// operational rows, structural masks, and (unless include_terminal is
/// false) the shared terminal bound. Returns per-player kernels.
std::vector<FirKernel> project_profile(const GameSpec& spec,
                                       const std::vector<FirKernel>& reference,
                                       const BestResponseOptions& opts,
                                       bool* feasible = nullptr,
                                       bool include_terminal = true);

/// Centralized potential minimization for games with D[p][q] = 0 (p != q)
/// and a common state penalty: minimizes
///   sum_n ||C Phi_{x,n}||^2 + sum_p ||D^pp Phi_{u,n}^p||^2 (+ terminal)
/// over all players' taps under the shared constraint set.
std::vector<FirKernel> centralized_potential_solution(const GameSpec& spec,
                                                      const BestResponseOptions& opts);

/// Structural test used by centralized_potential_solution.
bool is_potential_game(const GameSpec& spec);

}  // namespace sls
