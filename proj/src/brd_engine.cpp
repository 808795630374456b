#include "sls/brd_engine.hpp"

#include <cmath>
#include <future>

namespace sls {

namespace {

bool all_finite(const std::vector<FirKernel>& kernels) {
  for (const auto& k : kernels)
    for (const auto& t : k.taps)
      if (!t.allFinite()) return false;
  return true;
}

double rel_or_inf(double diff, double base) {
  if (base > 0.0) return diff / base;
  return diff > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
}

}  // namespace

void BrdConfig::validate(int n_players) const {
  if (!(eta > 0.0 && eta < 1.0)) throw ConfigError("brd: eta must lie in (0,1)");
  if (stages_per_update < 1) throw ConfigError("brd: stages_per_update must be >= 1");
  if (horizon < 2) throw ConfigError("brd: horizon must be >= 2");
  if (!exact_fir && !(gamma > 0.0 && gamma < 1.0))
    throw ConfigError("brd: gamma must lie in (0,1) unless exact_fir is set");
  if (max_updates < 1) throw ConfigError("brd: max_updates must be >= 1");
  if (!update_order.empty()) {
    if (static_cast<int>(update_order.size()) != n_players)
      throw ConfigError("brd: update_order must list every player once");
    std::vector<bool> seen(n_players, false);
    for (int p : update_order) {
      if (p < 0 || p >= n_players || seen[p])
        throw ConfigError("brd: update_order must be a permutation");
      seen[p] = true;
    }
  }
}

double IterationLog::max_rel_update(int k) const {
  double m = 0.0;
  for (const auto& r : rows)
    if (r.update == k) m = std::max(m, r.rel_update);
  return m;
}

double IterationLog::reference_distance(int k) const {
  for (const auto& r : rows)
    if (r.update == k) return r.reference_distance;
  return std::numeric_limits<double>::quiet_NaN();
}

VectorXd stack_profile(const std::vector<FirKernel>& kernels) {
  int total = 0;
  for (const auto& k : kernels) total += k.horizon() * k.rows() * k.cols();
  VectorXd v(total);
  int at = 0;
  for (const auto& k : kernels)
    for (const auto& tap : k.taps) {
      v.segment(at, tap.size()) = Eigen::Map<const VectorXd>(tap.data(), tap.size());
      at += static_cast<int>(tap.size());
    }
  return v;
}

void RunResult::rereference(const VectorXd& stacked_reference) {
  if (history.empty()) throw Error("rereference: run was not recorded");
  for (auto& row : log.rows) {
    const int k = row.update;
    if (k >= 1 && k <= static_cast<int>(history.size()))
      row.reference_distance = (history[k - 1] - stacked_reference).norm();
  }
}

GameSpec effective_spec(const GameSpec& spec, const BrdConfig& config) {
  GameSpec work = spec;
  if (config.use_structure && !work.structure)
    work.structure = delay_sparsity(work, 1, 1, config.horizon);
  if (config.use_structure && work.structure &&
      work.structure->horizon() < config.horizon)
    throw ConfigError("brd: structural masks shorter than the FIR horizon");
  return work;
}

StrategyProfile initial_profile(const GameSpec& spec, const BrdConfig& config) {
  config.validate(spec.n_players);
  const GameSpec work = effective_spec(spec, config);

  BestResponseOptions opts;
  opts.horizon = config.horizon;
  opts.gamma = config.exact_fir ? 0.5 : config.gamma;
  opts.exact_fir = config.exact_fir;
  opts.use_structure = config.use_structure;
  opts.solver = config.solver;

  std::vector<FirKernel> zeros;
  for (int p = 0; p < work.n_players; ++p)
    zeros.push_back(FirKernel::zero(work.input_dims[p], work.state_dim,
                                    config.horizon - 1));
  bool feasible = true;
  std::vector<FirKernel> projected = project_profile(work, zeros, opts, &feasible);
  if (!feasible) throw InfeasibleError(-1, "initial projection rejected the game");
  return StrategyProfile::from_phi_u(work, std::move(projected));
}

RunResult run_brd(const GameSpec& spec, const BrdConfig& config,
                  const std::vector<FirKernel>* reference) {
  config.validate(spec.n_players);
  const GameSpec work = effective_spec(spec, config);
  work.check_dimensions();
  const int np = work.n_players;
  const int horizon = config.horizon;

  RunResult result;

  StrategyProfile profile;
  try {
    profile = initial_profile(spec, config);
  } catch (const InfeasibleError& err) {
    result.status = RunStatus::kInfeasible;
    result.message = err.what();
    return result;
  }

  auto hessians = std::make_shared<HessianBlocks>(assemble_hessians(work, horizon));

  BestResponseOptions bopts;
  bopts.horizon = horizon;
  bopts.gamma = config.gamma;
  bopts.exact_fir = config.exact_fir;
  bopts.use_structure = config.use_structure;
  bopts.solver = config.solver;

  std::vector<BestResponseSolver> solvers;
  solvers.reserve(np);
  for (int p = 0; p < np; ++p) solvers.emplace_back(work, hessians, p, bopts);

  std::vector<int> order(np);
  for (int p = 0; p < np; ++p) order[p] = p;
  if (!config.update_order.empty()) order = config.update_order;

  for (int k = 1; k <= config.max_updates; ++k) {
    std::vector<FirKernel> br(np);
    std::vector<BestResponseDiagnostics> diag(np);
    try {
      if (config.threads > 1) {
        std::vector<std::future<void>> jobs;
        for (int p : order)
          jobs.push_back(std::async(std::launch::async, [&, p] {
            br[p] = solvers[p].respond(profile.phi_u, &diag[p]);
          }));
        for (auto& j : jobs) j.get();
      } else {
        for (int p : order) br[p] = solvers[p].respond(profile.phi_u, &diag[p]);
      }
    } catch (const InfeasibleError& err) {
      result.status = RunStatus::kInfeasible;
      result.message = err.what();
      result.profile = profile;
      result.updates = k - 1;
      return result;
    }

    std::vector<FirKernel> next(np);
    for (int p = 0; p < np; ++p) {
      next[p] = profile.phi_u[p];
      for (int n = 1; n <= next[p].horizon(); ++n)
        next[p].tap(n) = (1.0 - config.eta) * profile.phi_u[p].tap(n) +
                         config.eta * br[p].tap(n);
    }
    if (!all_finite(next)) {
      result.status = RunStatus::kDiverged;
      result.message = "non-finite iterate at update " + std::to_string(k);
      result.profile = profile;
      result.updates = k - 1;
      return result;
    }

    StrategyProfile next_profile;
    next_profile.phi_u = next;
    next_profile.phi_x_joint = propagate_phi_x(work, next, horizon);
    next_profile.phi_x_per_player.clear();
    for (int p = 0; p < np; ++p) {
      std::vector<FirKernel> mixed = profile.phi_u;  // round-start opponents
      mixed[p] = next[p];
      next_profile.phi_x_per_player.push_back(propagate_phi_x(work, mixed, horizon));
    }

    double ref_dist = std::numeric_limits<double>::quiet_NaN();
    if (reference) {
      double s = 0.0;
      for (int p = 0; p < np; ++p)
        for (int n = 1; n <= next[p].horizon(); ++n)
          s += (next[p].tap(n) - (*reference)[p].tap(n)).squaredNorm();
      ref_dist = std::sqrt(s);
    }
    const double eps = epsilon_gap(work, next_profile, config.gamma);

    double worst_rel = 0.0;
    for (int p = 0; p < np; ++p) {
      IterationRow row;
      row.update = k;
      row.stage = k * config.stages_per_update;
      row.player = p;
      double diff = 0.0, base = 0.0, brd = 0.0;
      for (int n = 1; n <= next[p].horizon(); ++n) {
        diff += (next[p].tap(n) - profile.phi_u[p].tap(n)).squaredNorm();
        base += next[p].tap(n).squaredNorm();
        brd += (br[p].tap(n) - profile.phi_u[p].tap(n)).squaredNorm();
      }
      row.update_distance = std::sqrt(diff);
      row.br_distance = std::sqrt(brd);
      row.rel_update = rel_or_inf(row.update_distance, std::sqrt(base));
      worst_rel = std::max(worst_rel, row.rel_update);

      double gap = 0.0, pnorm = 0.0;
      for (int n = 1; n <= horizon; ++n) {
        gap += (next_profile.phi_x_per_player[p].tap(n) -
                next_profile.phi_x_joint.tap(n))
                   .squaredNorm();
        pnorm += next_profile.phi_x_per_player[p].tap(n).squaredNorm();
      }
      row.phi_x_rel_gap = rel_or_inf(std::sqrt(gap), std::sqrt(pnorm));
      row.objective = objective_value(work, p, next_profile);
      row.eps_gap = eps;
      row.terminal_sq =
          next_profile.phi_x_per_player[p].tap(horizon).squaredNorm();
      row.reference_distance = ref_dist;
      row.solver_iterations = diag[p].iterations;
      row.solver_status = diag[p].analytic ? 3 : static_cast<int>(diag[p].status);
      row.solver_residual =
          std::max({diag[p].residuals.stationarity, diag[p].residuals.primal,
                    diag[p].residuals.dual, diag[p].residuals.complementarity});
      row.coupled_active = diag[p].coupled_active;
      if (diag[p].coupled_active) result.coupled_active_any = true;
      result.log.rows.push_back(row);
    }

    profile = std::move(next_profile);
    result.updates = k;
    if (config.record_history) result.history.push_back(stack_profile(profile.phi_u));

    if (worst_rel <= config.stop_rel_tol) {
      result.status = RunStatus::kConverged;
      break;
    }
    if (k == config.max_updates) result.status = RunStatus::kMaxUpdates;
  }

  result.profile = profile;
  result.eps_gap = epsilon_gap(work, profile, config.gamma);
  const double one_minus = std::max(1.0 - config.gamma, 1e-12);
  result.eps_gap_loose = result.eps_gap / one_minus;
  for (int p = 0; p < np; ++p)
    result.objectives.push_back(objective_value(work, p, profile));

  const int truncation = 4 * horizon;
  for (int p = 0; p < np; ++p)
    result.policies.push_back(policy_kernel(profile.phi_u[p],
                                            profile.phi_x_per_player[p], truncation));
  return result;
}

StrategyProfile dpg_reference(const GameSpec& spec, const BrdConfig& config) {
  config.validate(spec.n_players);
  const GameSpec work = effective_spec(spec, config);

  BestResponseOptions opts;
  opts.horizon = config.horizon;
  opts.gamma = config.gamma;
  opts.exact_fir = config.exact_fir;
  opts.use_structure = config.use_structure;
  opts.solver = config.solver;

  std::vector<FirKernel> kernels = centralized_potential_solution(work, opts);
  return StrategyProfile::from_phi_u(work, std::move(kernels));
}

}  // namespace sls
