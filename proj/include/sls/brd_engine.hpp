#pragma once

#include "sls/best_response.hpp"

#include <cstdint>
#include <limits>

namespace sls {

struct BrdConfig {
  double eta = 0.5;           // learning rate in (0,1)
  int stages_per_update = 1;  // game stages between announcements
  int horizon = 2;            // FIR horizon N
  double gamma = 0.95;        // terminal bound (ignored with exact_fir)
  double stop_rel_tol = 1e-8;
  int max_updates = 5000;
  bool exact_fir = false;
  bool use_structure = false;
  std::uint64_t rng_seed = 0;
  int threads = 1;  // concurrent best-response solves per round
  bool record_history = false;  // keep the stacked profile of every update
  qp::SolverOptions solver;
  std::vector<int> update_order;  // diagnostic permutation of the solve order

  void validate(int n_players) const;
};

/// One logged row per (update, player).
struct IterationRow {
  int update = 0;  // k, starting at 1
  int stage = 0;   // t = k * stages_per_update
  int player = 0;
  double rel_update = 0.0;      // ||u_k^p - u_{k-1}^p|| / ||u_k^p||
  double br_distance = 0.0;     // ||BR^p(u_{k-1}) - u_{k-1}^p||
  double update_distance = 0.0;  // ||u_k^p - u_{k-1}^p||
  double phi_x_rel_gap = 0.0;   // ||phi_x_k^p - phi_x_k|| / ||phi_x_k^p||
  double objective = 0.0;       // J^p at the new joint profile
  double eps_gap = 0.0;         // max_p gamma J^p, repeated across players
  double terminal_sq = 0.0;     // ||phi_{x,k,N}^p||_F^2 (per-player copy)
  double reference_distance = std::numeric_limits<double>::quiet_NaN();
  int solver_iterations = 0;
  int solver_status = 0;  // 0 optimal, 1 infeasible, 2 max iters, 3 analytic
  double solver_residual = 0.0;
  bool coupled_active = false;
};

struct IterationLog {
  std::vector<IterationRow> rows;

  int updates() const { return rows.empty() ? 0 : rows.back().update; }
  double max_rel_update(int k) const;
  /// Joint reference distance logged at update k (NaN without a reference).
  double reference_distance(int k) const;
};

enum class RunStatus { kConverged, kMaxUpdates, kInfeasible, kDiverged };

struct RunResult {
  RunStatus status = RunStatus::kMaxUpdates;
  StrategyProfile profile;
  std::vector<PolicyKernel> policies;  // truncation 4N
  IterationLog log;
  int updates = 0;
  double eps_gap = 0.0;
  double eps_gap_loose = 0.0;  // (gamma/(1-gamma)) max_p J^p
  std::vector<double> objectives;
  bool coupled_active_any = false;
  std::string message;
  std::vector<VectorXd> history;  // stacked profile per update (record_history)

  /// Rewrites the logged reference distances against a stacked profile
  /// (requires record_history); used for last-iterate convergence plots.
  void rereference(const VectorXd& stacked_reference);

  bool converged() const { return status == RunStatus::kConverged; }
};

/// Joint projection of the zero response onto the operational constraint
/// set (robust rows and structural masks; the terminal bound binds from the
/// first update on, not at initialization).
StrategyProfile initial_profile(const GameSpec& spec, const BrdConfig& config);

/// Relaxed simultaneous best-response iteration: every round all players
/// respond to the same round-start profile, then blend with rate eta.
RunResult run_brd(const GameSpec& spec, const BrdConfig& config,
                  const std::vector<FirKernel>* reference = nullptr);

/// Centralized equilibrium for dynamic potential games; rejects games with
/// cross input penalties or differing state penalties.
StrategyProfile dpg_reference(const GameSpec& spec, const BrdConfig& config);

/// The engine's working copy of the spec: attaches default delay masks
/// (d_a = d_s = 1) when structure is requested but absent.
GameSpec effective_spec(const GameSpec& spec, const BrdConfig& config);

/// Profile kernels flattened into one vector (player, tap, row, column order).
VectorXd stack_profile(const std::vector<FirKernel>& kernels);

}  // namespace sls
