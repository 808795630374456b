#include "sls/best_response.hpp"

#include <Eigen/Cholesky>

#include <array>
#include <cmath>
#include <utility>

namespace sls {

namespace {

constexpr double kStructuralZero = 1e-12;

std::vector<MatrixXd> a_powers(const MatrixXd& A, int count) {
  std::vector<MatrixXd> p{MatrixXd::Identity(A.rows(), A.cols())};
  p.reserve(count);
  while (static_cast<int>(p.size()) < count) p.push_back(p.back() * A);
  return p;
}

}  // namespace

MatrixXd stack_taps(const FirKernel& k) {
  MatrixXd s(k.horizon() * k.rows(), k.cols());
  for (int n = 1; n <= k.horizon(); ++n) s.middleRows((n - 1) * k.rows(), k.rows()) = k.tap(n);
  return s;
}

FirKernel unstack_taps(const MatrixXd& stacked, int nu, int nx) {
  const int taps = static_cast<int>(stacked.rows()) / nu;
  FirKernel k(nu, nx, taps);
  for (int n = 1; n <= taps; ++n) k.tap(n) = stacked.middleRows((n - 1) * nu, nu);
  return k;
}

HessianBlocks assemble_hessians(const GameSpec& spec, int horizon) {
  if (horizon < 2) throw ConfigError("assemble_hessians: horizon must be >= 2");
  const int np = spec.n_players;
  const int nx = spec.state_dim;
  const int nz = spec.penalty_dim();
  const auto apow = a_powers(spec.A, horizon);

  HessianBlocks out;
  out.horizon = horizon;
  out.H.assign(np, std::vector<MatrixXd>(np));
  out.h0.resize(np);

  MatrixXd impulse(horizon * nx, nx);  // stacked A^{n-1}
  for (int n = 1; n <= horizon; ++n) impulse.middleRows((n - 1) * nx, nx) = apow[n - 1];

  for (int p = 0; p < np; ++p) {
    // G[q] = C^p F^q + D^pq over stacked taps, in the N_z-valued stage space.
    std::vector<MatrixXd> G(np);
    for (int q = 0; q < np; ++q) {
      const int nu = spec.input_dims[q];
      MatrixXd g = MatrixXd::Zero(horizon * nz, (horizon - 1) * nu);
      const MatrixXd dpq = spec.d_matrix(p, q);
      for (int n = 1; n <= horizon; ++n) {
        for (int m = 1; m < n; ++m)
          g.block((n - 1) * nz, (m - 1) * nu, nz, nu) =
              spec.C[p] * apow[n - 1 - m] * spec.B[q];
        if (n <= horizon - 1) g.block((n - 1) * nz, (n - 1) * nu, nz, nu) += dpq;
      }
      G[q] = std::move(g);
    }
    for (int q = 0; q < np; ++q) out.H[p][q] = G[p].transpose() * G[q];

    MatrixXd cimp(horizon * nz, nx);
    for (int n = 1; n <= horizon; ++n)
      cimp.middleRows((n - 1) * nz, nz) = spec.C[p] * apow[n - 1];
    out.h0[p] = G[p].transpose() * cimp;
  }
  return out;
}

double objective_value(const GameSpec& spec, int player, const StrategyProfile& profile,
                       bool include_terminal) {
  const int horizon = profile.horizon();
  double j = 0.0;
  for (int n = 1; n <= horizon - 1; ++n) {
    j += (spec.C[player] * profile.phi_x_joint.tap(n)).squaredNorm();
    MatrixXd du = MatrixXd::Zero(spec.penalty_dim(), spec.state_dim);
    for (int q = 0; q < spec.n_players; ++q)
      du += spec.d_matrix(player, q) * profile.phi_u[q].tap(n);
    j += du.squaredNorm();
  }
  if (include_terminal)
    j += (spec.C[player] * profile.phi_x_joint.tap(horizon)).squaredNorm();
  return j;
}

double epsilon_gap(const GameSpec& spec, const StrategyProfile& profile, double gamma) {
  double worst = 0.0;
  for (int p = 0; p < spec.n_players; ++p)
    worst = std::max(worst, gamma * objective_value(spec, p, profile));
  return worst;
}

FirKernel unconstrained_best_response(const GameSpec& spec, const HessianBlocks& hessians,
                                      int player, const std::vector<FirKernel>& opponents) {
  const int horizon = hessians.horizon;
  MatrixXd w = hessians.h0[player];
  for (int q = 0; q < spec.n_players; ++q) {
    if (q == player) continue;
    w += hessians.H[player][q] * stack_taps(opponents[q]);
  }
  const MatrixXd sol = -hessians.H[player][player].ldlt().solve(w);
  (void)horizon;
  return unstack_taps(sol, spec.input_dims[player], spec.state_dim);
}

// ---------------------------------------------------------------------------
// Program assembly shared by the per-player response, the joint projection
// and the centralized potential solve.
// ---------------------------------------------------------------------------

namespace {

struct TapVarMap {
  int player = 0, nu = 0, nx = 0, taps = 0, base = 0;
  std::vector<int> red;                       // full local index -> reduced or -1
  std::vector<std::array<int, 3>> coords;     // reduced -> (n, r, j)
  std::vector<std::vector<int>> kept_by_col;  // per state column: reduced indices

  int full_index(int n, int r, int j) const { return (j * taps + (n - 1)) * nu + r; }
  int reduced(int n, int r, int j) const { return red[full_index(n, r, j)]; }
  int size() const { return static_cast<int>(coords.size()); }
};

TapVarMap make_var_map(const GameSpec& spec, int player, int horizon, int base,
                       bool use_structure) {
  TapVarMap m;
  m.player = player;
  m.nu = spec.input_dims[player];
  m.nx = spec.state_dim;
  m.taps = horizon - 1;
  m.base = base;
  m.red.assign(m.nx * m.taps * m.nu, -1);
  m.kept_by_col.resize(m.nx);
  const StructuralPattern* pat =
      (use_structure && spec.structure) ? &*spec.structure : nullptr;
  for (int j = 0; j < m.nx; ++j)
    for (int n = 1; n <= m.taps; ++n)
      for (int r = 0; r < m.nu; ++r) {
        if (pat && pat->input_masks[player][n - 1](r, j) == 0.0) continue;
        m.red[m.full_index(n, r, j)] = m.size();
        m.coords.push_back({n, r, j});
        m.kept_by_col[j].push_back(m.size() - 1);
      }
  return m;
}

enum class OffsetKind { kStateTap, kCoupledTap, kTerminalEntry, kStructEntry };

struct OffsetRef {
  OffsetKind kind;
  int row = 0;   // source constraint row (state i / coupled l) or matrix entry i
  int n = 0;     // tap
  int c = 0;     // noise channel, or column j for matrix entries
};

enum class TerminalMode { kNone, kBall, kExact };

struct BuiltProgram {
  qp::ConicProgram prog;
  std::vector<TapVarMap> vars;  // per scope player, in scope order
  std::vector<int> scope;
  int n_v = 0;
  int horizon = 0;
  int y_base = 0, n_y = 0;

  // Auxiliary-variable bookkeeping for warm starts.
  struct EpigraphRec {
    int crow;    // index into the compiled rows
    int base;    // first auxiliary variable
    int taps;    // taps covered
    int comps;   // components per tap (channels for t, 1 for s)
  };
  std::vector<EpigraphRec> epigraphs;

  // Rows/entries whose offsets depend on out-of-scope data.
  struct FPair {
    int plus_row, minus_row;
    OffsetRef off;
  };
  std::vector<FPair> f_updates;
  struct EOff {
    int row;
    double sign;  // e(row) = sign * offset
    OffsetRef off;
  };
  std::vector<EOff> e_updates;
  struct SocOff {
    int soc, pos;
    OffsetRef off;
  };
  std::vector<SocOff> soc_updates;

  TerminalMode terminal = TerminalMode::kNone;
};

class ProgramAssembler {
 public:
  ProgramAssembler(const GameSpec& spec, int horizon, bool use_structure,
                   std::vector<int> scope, TerminalMode terminal, double gamma,
                   std::vector<CompiledRow> rows)
      : spec_(spec),
        horizon_(horizon),
        use_structure_(use_structure),
        scope_(std::move(scope)),
        terminal_(terminal),
        gamma_(gamma),
        rows_(std::move(rows)),
        apow_(a_powers(spec.A, horizon)) {
    in_scope_.assign(spec_.n_players, -1);
    for (int i = 0; i < static_cast<int>(scope_.size()); ++i) in_scope_[scope_[i]] = i;
    if (!rows_.empty()) {
      NoiseModel noise = spec_.noise;
      pd_ = noise_dual_factor(noise);
      // Bounded rows facing an unbounded noise set were already rejected in
      // compile(); pd_ is well defined here.
    }
  }

  BuiltProgram build() {
    BuiltProgram out;
    out.scope = scope_;
    out.horizon = horizon_;
    out.terminal = terminal_;

    int base = 0;
    for (int p : scope_) {
      out.vars.push_back(make_var_map(spec_, p, horizon_, base, use_structure_));
      base += out.vars.back().size();
    }
    out.n_v = base;
    n_v_ = base;

    // Variable layout: [taps | epigraph t | soc heads s | terminal y].
    int n_t = 0, n_s = 0;
    const int nw = rows_.empty() ? 0 : static_cast<int>(pd_.cols());
    for (const auto& r : rows_) {
      const int taps = (r.origin == ConstraintOrigin::kState) ? horizon_ : horizon_ - 1;
      if (spec_.noise.kind == NoiseKind::kInfinityBall)
        n_t += taps * nw;
      else
        n_s += taps;
    }
    const int nx = spec_.state_dim;
    const int n_y = (terminal_ == TerminalMode::kBall) ? nx * nx : 0;
    t_base_ = n_v_;
    s_base_ = t_base_ + n_t;
    y_base_ = s_base_ + n_s;
    const int n_total = y_base_ + n_y;
    out.prog.n = n_total;

    out.y_base = y_base_;
    out.n_y = n_y;

    std::vector<Eigen::Triplet<double>> etr, ftr;
    std::vector<double> evals, fvals;
    int t_at = t_base_, s_at = s_base_;
    int crow_index = -1;

    for (const auto& cr : rows_) {
      ++crow_index;
      const bool state_row = cr.origin == ConstraintOrigin::kState;
      const int taps = state_row ? horizon_ : horizon_ - 1;

      if (spec_.noise.kind == NoiseKind::kInfinityBall) {
        // Lemma-style epigraph: -t <= expr <= t per (tap, channel),
        // sum of t equal to the right-hand side.
        const int t0 = t_at;
        out.epigraphs.push_back({crow_index, t0, taps, nw});
        for (int n = 1; n <= taps; ++n)
          for (int c = 0; c < nw; ++c) {
            const auto coeffs = expr_coeffs(cr, out.vars, n, c);
            const int tvar = t_at++;
            const int plus = static_cast<int>(fvals.size());
            for (const auto& [var, val] : coeffs) ftr.emplace_back(plus, var, val);
            ftr.emplace_back(plus, tvar, -1.0);
            fvals.push_back(0.0);
            const int minus = static_cast<int>(fvals.size());
            for (const auto& [var, val] : coeffs) ftr.emplace_back(minus, var, -val);
            ftr.emplace_back(minus, tvar, -1.0);
            fvals.push_back(0.0);
            if (auto off = offset_ref(cr, n, c)) {
              out.f_updates.push_back({plus, minus, *off});
            }
          }
        const int erow = static_cast<int>(evals.size());
        for (int tv = t0; tv < t_at; ++tv) etr.emplace_back(erow, tv, 1.0);
        evals.push_back(cr.rhs);
      } else {
        // Sum of second-order cones sharing one linkage row.
        const int s0 = s_at;
        out.epigraphs.push_back({crow_index, s0, taps, 1});
        for (int n = 1; n <= taps; ++n) {
          qp::SocConstraint soc;
          soc.head.resize(n_total);
          soc.head.coeffRef(s_at) = 1.0;
          soc.head0 = 0.0;
          std::vector<Eigen::Triplet<double>> ttr;
          soc.t0 = VectorXd::Zero(nw);
          for (int c = 0; c < nw; ++c) {
            const auto coeffs = expr_coeffs(cr, out.vars, n, c);
            for (const auto& [var, val] : coeffs) ttr.emplace_back(c, var, val);
            if (auto off = offset_ref(cr, n, c))
              out.soc_updates.push_back(
                  {static_cast<int>(out.prog.socs.size()), c, *off});
          }
          soc.T.resize(nw, n_total);
          soc.T.setFromTriplets(ttr.begin(), ttr.end());
          out.prog.socs.push_back(std::move(soc));
          ++s_at;
        }
        const int erow = static_cast<int>(evals.size());
        for (int sv = s0; sv < s_at; ++sv) etr.emplace_back(erow, sv, 1.0);
        evals.push_back(cr.rhs);
      }
    }

    // Terminal tap handling.
    if (terminal_ != TerminalMode::kNone) {
      for (int j = 0; j < nx; ++j)
        for (int i = 0; i < nx; ++i) {
          const auto coeffs = terminal_coeffs(out.vars, i, j);
          const int erow = static_cast<int>(evals.size());
          if (terminal_ == TerminalMode::kBall) {
            const int yvar = y_base_ + j * nx + i;
            etr.emplace_back(erow, yvar, 1.0);
            for (const auto& [var, val] : coeffs) etr.emplace_back(erow, var, -val);
            evals.push_back(0.0);
            out.e_updates.push_back({erow, +1.0, {OffsetKind::kTerminalEntry, i, 0, j}});
          } else {
            for (const auto& [var, val] : coeffs) etr.emplace_back(erow, var, val);
            evals.push_back(0.0);
            out.e_updates.push_back({erow, -1.0, {OffsetKind::kTerminalEntry, i, 0, j}});
          }
        }
      if (terminal_ == TerminalMode::kBall) {
        qp::BallConstraint ball;
        ball.radius = std::sqrt(gamma_);
        for (int k = 0; k < nx * nx; ++k) ball.indices.push_back(y_base_ + k);
        out.prog.ball = ball;
      }
    }

    // Structural zero rows on the state response, where not structurally zero
    // already. Only taps 2..N can carry nontrivial entries.
    if (use_structure_ && spec_.structure) {
      const auto& pat = *spec_.structure;
      for (int n = 2; n <= horizon_; ++n) {
        const MatrixXd& mask = pat.state_masks[n - 1];
        for (int j = 0; j < nx; ++j)
          for (int i = 0; i < nx; ++i) {
            if (mask(i, j) != 0.0) continue;
            if (struct_entry_trivial(n, i, j)) continue;
            const auto coeffs = state_entry_coeffs(out.vars, n, i, j);
            const int erow = static_cast<int>(evals.size());
            for (const auto& [var, val] : coeffs) etr.emplace_back(erow, var, val);
            evals.push_back(-apow_[n - 1](i, j));
            out.e_updates.push_back({erow, -1.0, {OffsetKind::kStructEntry, i, n, j}});
          }
      }
    }

    out.prog.E.resize(static_cast<int>(evals.size()), n_total);
    out.prog.E.setFromTriplets(etr.begin(), etr.end());
    out.prog.e = Eigen::Map<VectorXd>(evals.data(), evals.size());
    out.prog.F.resize(static_cast<int>(fvals.size()), n_total);
    out.prog.F.setFromTriplets(ftr.begin(), ftr.end());
    out.prog.f = Eigen::Map<VectorXd>(fvals.data(), fvals.size());
    out.prog.Q.resize(n_total, n_total);
    out.prog.q = VectorXd::Zero(n_total);
    return out;
  }

  /// Offsets for the current out-of-scope kernels. phi_out is the state
  /// response of the out-of-scope players alone (in-scope taps zero).
  double eval_offset(const OffsetRef& o, const FirKernel& phi_out,
                     const std::vector<FirKernel>& all_kernels) const {
    switch (o.kind) {
      case OffsetKind::kStateTap:
        return spec_.state_constraints.G.row(o.row) * phi_out.tap(o.n) * pd_.col(o.c);
      case OffsetKind::kCoupledTap: {
        double v = 0.0;
        for (int q = 0; q < spec_.n_players; ++q) {
          if (in_scope_[q] >= 0) continue;
          v += spec_.coupled_G[q].row(o.row) * all_kernels[q].tap(o.n) * pd_.col(o.c);
        }
        return v;
      }
      case OffsetKind::kTerminalEntry:
        return phi_out.tap(horizon_)(o.row, o.c);
      case OffsetKind::kStructEntry:
        return phi_out.tap(o.n)(o.row, o.c);
    }
    return 0.0;
  }

  const std::vector<MatrixXd>& powers() const { return apow_; }

 private:
  using Coeffs = std::vector<std::pair<int, double>>;

  // Affine coefficients of the (tap n, channel c) scalar of a compiled row
  // over the in-scope variables.
  Coeffs expr_coeffs(const CompiledRow& cr, const std::vector<TapVarMap>& vars, int n,
                     int c) const {
    Coeffs out;
    switch (cr.origin) {
      case ConstraintOrigin::kInput: {
        const int pos = in_scope_[cr.player];
        if (pos < 0) throw Error("input row for out-of-scope player");
        const auto& vm = vars[pos];
        for (int r = 0; r < vm.nu; ++r) {
          if (cr.row(r) == 0.0) continue;
          for (int k = 0; k < vm.nx; ++k) {
            if (pd_(k, c) == 0.0) continue;
            const int idx = vm.reduced(n, r, k);
            if (idx >= 0) out.emplace_back(vm.base + idx, cr.row(r) * pd_(k, c));
          }
        }
        break;
      }
      case ConstraintOrigin::kCoupled: {
        for (const auto& vm : vars) {
          const RowVectorXd& g = cr.rows[vm.player];
          for (int r = 0; r < vm.nu; ++r) {
            if (g(r) == 0.0) continue;
            for (int k = 0; k < vm.nx; ++k) {
              if (pd_(k, c) == 0.0) continue;
              const int idx = vm.reduced(n, r, k);
              if (idx >= 0) out.emplace_back(vm.base + idx, g(r) * pd_(k, c));
            }
          }
        }
        break;
      }
      case ConstraintOrigin::kState: {
        for (const auto& vm : vars) {
          for (int m = 1; m < n; ++m) {
            const RowVectorXd gab = cr.row * apow_[n - 1 - m] * spec_.B[vm.player];
            for (int r = 0; r < vm.nu; ++r) {
              if (std::abs(gab(r)) <= kStructuralZero) continue;
              for (int k = 0; k < vm.nx; ++k) {
                if (pd_(k, c) == 0.0) continue;
                const int idx = vm.reduced(m, r, k);
                if (idx >= 0) out.emplace_back(vm.base + idx, gab(r) * pd_(k, c));
              }
            }
          }
        }
        break;
      }
    }
    return out;
  }

  Coeffs terminal_coeffs(const std::vector<TapVarMap>& vars, int i, int j) const {
    return state_entry_coeffs(vars, horizon_, i, j);
  }

  // Coefficients of Phi_{x,n}(i,j) over the in-scope variables.
  Coeffs state_entry_coeffs(const std::vector<TapVarMap>& vars, int n, int i,
                            int j) const {
    Coeffs out;
    for (const auto& vm : vars) {
      for (int m = 1; m < n; ++m) {
        const MatrixXd tb = apow_[n - 1 - m] * spec_.B[vm.player];
        for (int r = 0; r < vm.nu; ++r) {
          if (std::abs(tb(i, r)) <= kStructuralZero) continue;
          const int idx = vm.reduced(m, r, j);
          if (idx >= 0) out.emplace_back(vm.base + idx, tb(i, r));
        }
      }
    }
    return out;
  }

  // True when entry (i,j) of tap n is zero for every feasible profile:
  // no player's taps can reach it and the autonomous part vanishes.
  bool struct_entry_trivial(int n, int i, int j) const {
    if (std::abs(apow_[n - 1](i, j)) > kStructuralZero) return false;
    for (int q = 0; q < spec_.n_players; ++q)
      for (int m = 1; m < n; ++m) {
        const MatrixXd tb = apow_[n - 1 - m] * spec_.B[q];
        if (tb.row(i).cwiseAbs().maxCoeff() > kStructuralZero) return false;
      }
    return true;
  }

  std::optional<OffsetRef> offset_ref(const CompiledRow& cr, int n, int c) const {
    switch (cr.origin) {
      case ConstraintOrigin::kInput:
        return std::nullopt;  // own-tap rows carry no outside data
      case ConstraintOrigin::kCoupled: {
        bool outside = false;
        for (int q = 0; q < spec_.n_players; ++q)
          if (in_scope_[q] < 0) outside = true;
        if (!outside) return std::nullopt;
        return OffsetRef{OffsetKind::kCoupledTap, cr.source_row, n, c};
      }
      case ConstraintOrigin::kState: {
        // The autonomous A-power part always contributes; out-of-scope taps
        // may as well. Both are carried by the same offset.
        return OffsetRef{OffsetKind::kStateTap, cr.source_row, n, c};
      }
    }
    return std::nullopt;
  }

  const GameSpec& spec_;
  int horizon_;
  bool use_structure_;
  std::vector<int> scope_;
  TerminalMode terminal_;
  double gamma_;
  std::vector<CompiledRow> rows_;
  std::vector<MatrixXd> apow_;
  std::vector<int> in_scope_;
  MatrixXd pd_;
  int n_v_ = 0, t_base_ = 0, s_base_ = 0, y_base_ = 0;
};

// State response of the out-of-scope kernels alone (in-scope slots zeroed).
FirKernel out_of_scope_response(const GameSpec& spec, const std::vector<int>& in_scope,
                                const std::vector<FirKernel>& kernels, int horizon) {
  std::vector<FirKernel> masked;
  for (int q = 0; q < spec.n_players; ++q) {
    if (in_scope[q] >= 0 ||
        kernels[q].horizon() != horizon - 1)
      masked.push_back(FirKernel::zero(spec.input_dims[q], spec.state_dim, horizon - 1));
    else
      masked.push_back(kernels[q]);
  }
  return propagate_phi_x(spec, masked, horizon);
}

void refresh_offsets(const ProgramAssembler& assembler, BuiltProgram& built,
                     const FirKernel& phi_out, const std::vector<FirKernel>& kernels) {
  for (const auto& u : built.f_updates) {
    const double off = assembler.eval_offset(u.off, phi_out, kernels);
    built.prog.f(u.plus_row) = -off;
    built.prog.f(u.minus_row) = off;
  }
  for (const auto& u : built.e_updates)
    built.prog.e(u.row) = u.sign * assembler.eval_offset(u.off, phi_out, kernels);
  for (const auto& u : built.soc_updates)
    built.prog.socs[u.soc].t0(u.pos) = assembler.eval_offset(u.off, phi_out, kernels);
}

std::vector<CompiledRow> gather_rows(const GameSpec& spec, const std::vector<int>& scope,
                                     int horizon) {
  // State and coupled rows appear once; input rows once per in-scope player.
  std::vector<CompiledRow> rows;
  const CompiledConstraints base = compile(spec, scope.front(), horizon);
  for (const auto& r : base.rows)
    if (r.origin != ConstraintOrigin::kInput) rows.push_back(r);
  for (int p : scope) {
    const CompiledConstraints own = compile(spec, p, horizon);
    for (const auto& r : own.rows)
      if (r.origin == ConstraintOrigin::kInput) rows.push_back(r);
  }
  return rows;
}

// Per-(tap, channel) values of one compiled row at a full profile; the
// epigraph warm start distributes the remaining slack across them.
std::vector<double> row_components(const GameSpec& spec, const CompiledRow& cr,
                                   const MatrixXd& pd,
                                   const std::vector<FirKernel>& kernels,
                                   const FirKernel& phi_x, int taps) {
  std::vector<double> vals;
  vals.reserve(taps * pd.cols());
  for (int n = 1; n <= taps; ++n) {
    RowVectorXd expr;
    switch (cr.origin) {
      case ConstraintOrigin::kState:
        expr = cr.row * phi_x.tap(n) * pd;
        break;
      case ConstraintOrigin::kInput:
        expr = cr.row * kernels[cr.player].tap(n) * pd;
        break;
      case ConstraintOrigin::kCoupled: {
        RowVectorXd combined = RowVectorXd::Zero(spec.state_dim);
        for (int q = 0; q < spec.n_players; ++q)
          combined += cr.rows[q] * kernels[q].tap(n);
        expr = combined * pd;
        break;
      }
    }
    for (int c = 0; c < expr.size(); ++c) vals.push_back(expr(c));
  }
  return vals;
}

// Feasible-point warm start: tap variables from the kernels, epigraph
// variables at their implied values with the slack spread uniformly, the
// terminal auxiliaries at the actual terminal tap.
VectorXd feasible_start(const GameSpec& spec, const BuiltProgram& built,
                        const std::vector<CompiledRow>& crows, const MatrixXd& pd,
                        const std::vector<FirKernel>& kernels) {
  VectorXd z = VectorXd::Zero(built.prog.n);
  for (const auto& vm : built.vars)
    for (int idx = 0; idx < vm.size(); ++idx) {
      const auto [n, r, j] = vm.coords[idx];
      z(vm.base + idx) = kernels[vm.player].tap(n)(r, j);
    }
  const FirKernel phi_x = propagate_phi_x(spec, kernels, built.horizon);
  const bool inf_ball = spec.noise.kind == NoiseKind::kInfinityBall;
  for (const auto& epi : built.epigraphs) {
    const CompiledRow& cr = crows[epi.crow];
    const auto comps = row_components(spec, cr, pd, kernels, phi_x, epi.taps);
    if (inf_ball) {
      double total = 0.0;
      for (double v : comps) total += std::abs(v);
      const double slack = std::max(0.0, cr.rhs - total) / comps.size();
      for (size_t k = 0; k < comps.size(); ++k)
        z(epi.base + k) = std::abs(comps[k]) + slack;
    } else {
      const int nw = static_cast<int>(comps.size()) / epi.taps;
      double total = 0.0;
      std::vector<double> norms(epi.taps, 0.0);
      for (int n = 0; n < epi.taps; ++n) {
        double s = 0.0;
        for (int c = 0; c < nw; ++c) s += comps[n * nw + c] * comps[n * nw + c];
        norms[n] = std::sqrt(s);
        total += norms[n];
      }
      const double slack = std::max(0.0, cr.rhs - total) / epi.taps;
      for (int n = 0; n < epi.taps; ++n) z(epi.base + n) = norms[n] + slack;
    }
  }
  if (built.n_y > 0) {
    const int nx = spec.state_dim;
    for (int j = 0; j < nx; ++j)
      for (int i = 0; i < nx; ++i)
        z(built.y_base + j * nx + i) = phi_x.tap(built.horizon)(i, j);
  }
  return z;
}

std::vector<FirKernel> extract_kernels(const GameSpec& spec, const BuiltProgram& built,
                                       const VectorXd& z) {
  std::vector<FirKernel> out;
  for (const auto& vm : built.vars) {
    FirKernel k(vm.nu, spec.state_dim, vm.taps);
    for (int idx = 0; idx < vm.size(); ++idx) {
      const auto [n, r, j] = vm.coords[idx];
      k.tap(n)(r, j) = z(vm.base + idx);
    }
    out.push_back(std::move(k));
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// BestResponseSolver
// ---------------------------------------------------------------------------

struct BestResponseSolver::Impl {
  const GameSpec& spec;
  std::shared_ptr<const HessianBlocks> hessians;
  int player;
  BestResponseOptions opts;
  CompiledConstraints compiled_rows;

  std::unique_ptr<ProgramAssembler> assembler;
  BuiltProgram built;
  std::unique_ptr<qp::Solver> solver;
  std::vector<Eigen::LDLT<MatrixXd>> column_factors;  // fast path, per state column
  std::vector<int> in_scope;
  bool solver_seeded = false;
  MatrixXd pd;  // noise dual factor, for warm starts

  Impl(const GameSpec& s, std::shared_ptr<const HessianBlocks> h, int p,
       BestResponseOptions o)
      : spec(s), hessians(std::move(h)), player(p), opts(std::move(o)) {
    if (opts.exact_fir) {
      // no terminal ball parameter to validate
    } else if (!(opts.gamma > 0.0 && opts.gamma < 1.0)) {
      throw ConfigError("best response: gamma must lie in (0,1)");
    }
    if (hessians->horizon != opts.horizon)
      throw ConfigError("best response: Hessians assembled at a different horizon");

    compiled_rows = compile(spec, player, opts.horizon);
    const TerminalMode term = opts.exact_fir ? TerminalMode::kExact : TerminalMode::kBall;
    assembler = std::make_unique<ProgramAssembler>(
        spec, opts.horizon, opts.use_structure, std::vector<int>{player}, term,
        opts.gamma, compiled_rows.rows);
    built = assembler->build();
    in_scope.assign(spec.n_players, -1);
    in_scope[player] = 0;
    if (!compiled_rows.empty()) pd = noise_dual_factor(spec.noise);

    build_objective();
    solver = std::make_unique<qp::Solver>(built.prog, opts.solver);

    const auto& vm = built.vars[0];
    const MatrixXd& hpp = hessians->H[player][player];
    for (int j = 0; j < spec.state_dim; ++j) {
      const auto& kept = vm.kept_by_col[j];
      MatrixXd hj(kept.size(), kept.size());
      for (size_t a = 0; a < kept.size(); ++a)
        for (size_t b = 0; b < kept.size(); ++b) {
          const auto [na, ra, ja] = vm.coords[kept[a]];
          const auto [nb, rb, jb] = vm.coords[kept[b]];
          hj(a, b) = hpp((na - 1) * vm.nu + ra, (nb - 1) * vm.nu + rb);
        }
      column_factors.emplace_back(hj);
    }
  }

  void build_objective() {
    const auto& vm = built.vars[0];
    const MatrixXd& hpp = hessians->H[player][player];
    std::vector<Eigen::Triplet<double>> trips;
    for (int j = 0; j < spec.state_dim; ++j) {
      const auto& kept = vm.kept_by_col[j];
      for (int a : kept)
        for (int b : kept) {
          const auto [na, ra, ja] = vm.coords[a];
          const auto [nb, rb, jb] = vm.coords[b];
          const double v = 2.0 * hpp((na - 1) * vm.nu + ra, (nb - 1) * vm.nu + rb);
          if (v != 0.0) trips.emplace_back(vm.base + a, vm.base + b, v);
        }
    }
    built.prog.Q.setFromTriplets(trips.begin(), trips.end());
  }

  MatrixXd linear_block(const std::vector<FirKernel>& opponents) const {
    MatrixXd w = hessians->h0[player];
    for (int q = 0; q < spec.n_players; ++q) {
      if (q == player) continue;
      w += hessians->H[player][q] * stack_taps(opponents[q]);
    }
    return w;
  }

  FirKernel fast_path(const MatrixXd& w) const {
    const auto& vm = built.vars[0];
    FirKernel k(vm.nu, spec.state_dim, vm.taps);
    for (int j = 0; j < spec.state_dim; ++j) {
      const auto& kept = vm.kept_by_col[j];
      VectorXd rhs(kept.size());
      for (size_t a = 0; a < kept.size(); ++a) {
        const auto [n, r, jj] = vm.coords[kept[a]];
        rhs(a) = -w((n - 1) * vm.nu + r, j);
      }
      const VectorXd sol = column_factors[j].solve(rhs);
      for (size_t a = 0; a < kept.size(); ++a) {
        const auto [n, r, jj] = vm.coords[kept[a]];
        k.tap(n)(r, j) = sol(a);
      }
    }
    return k;
  }

  FirKernel respond(const std::vector<FirKernel>& opponents,
                    BestResponseDiagnostics* diag) {
    const MatrixXd w = linear_block(opponents);

    auto terminal_sq = [&](const FirKernel& own) {
      std::vector<FirKernel> all = opponents;
      all[player] = own;
      const FirKernel phi_x = propagate_phi_x(spec, all, opts.horizon);
      return phi_x.tap(opts.horizon).squaredNorm();
    };

    if (compiled_rows.empty() && !opts.exact_fir) {
      FirKernel candidate = fast_path(w);
      const double tsq = terminal_sq(candidate);
      if (tsq <= opts.gamma) {
        if (diag) {
          *diag = BestResponseDiagnostics{};
          diag->analytic = true;
          diag->terminal_norm_sq = tsq;
        }
        return candidate;
      }
    }

    // Conic solve: refresh opponent-dependent pieces, reuse the factorization.
    const auto& vm = built.vars[0];
    for (int idx = 0; idx < vm.size(); ++idx) {
      const auto [n, r, j] = vm.coords[idx];
      built.prog.q(vm.base + idx) = 2.0 * w((n - 1) * vm.nu + r, j);
    }
    const FirKernel phi_out =
        out_of_scope_response(spec, in_scope, opponents, opts.horizon);
    refresh_offsets(*assembler, built, phi_out, opponents);
    solver->update_vectors(built.prog);
    if (!solver_seeded && opponents[player].horizon() == opts.horizon - 1) {
      // The round-start own kernel is feasible whenever the joint profile is;
      // starting there keeps the first solve short.
      const VectorXd z0 = feasible_start(spec, built, compiled_rows.rows,
                                         pd.size() ? pd : MatrixXd(), opponents);
      solver->warm_start(z0, VectorXd::Zero(solver->constraint_rows()));
      solver_seeded = true;
    }
    const qp::SolveResult res = solver->solve();

    if (res.status == qp::SolveStatus::kInfeasible)
      throw InfeasibleError(player, "best response infeasible for player " +
                                        std::to_string(player + 1));

    FirKernel own = extract_kernels(spec, built, res.z)[0];
    if (diag) {
      *diag = BestResponseDiagnostics{};
      diag->analytic = false;
      diag->status = res.status;
      diag->residuals = res.residuals;
      diag->iterations = res.iterations;
      diag->polished = res.polished;
      diag->ball_multiplier = res.ball_multiplier;
      diag->terminal_norm_sq = terminal_sq(own);
      // A coupled row is active when its worst case meets the bound.
      std::vector<FirKernel> all = opponents;
      all[player] = own;
      StrategyProfile prof;
      prof.phi_u = all;
      prof.phi_x_joint = propagate_phi_x(spec, all, opts.horizon);
      const SlackReport slack = check_feasible_point(compiled_rows, prof);
      for (size_t i = 0; i < compiled_rows.rows.size(); ++i)
        if (compiled_rows.rows[i].origin == ConstraintOrigin::kCoupled &&
            slack.slack[i] > -1e-6 * (1.0 + compiled_rows.rows[i].rhs))
          diag->coupled_active = true;
    }
    return own;
  }
};

BestResponseSolver::BestResponseSolver(const GameSpec& spec,
                                       std::shared_ptr<const HessianBlocks> hessians,
                                       int player, BestResponseOptions opts)
    : impl_(std::make_unique<Impl>(spec, std::move(hessians), player, std::move(opts))) {}
BestResponseSolver::~BestResponseSolver() = default;
BestResponseSolver::BestResponseSolver(BestResponseSolver&&) noexcept = default;

FirKernel BestResponseSolver::respond(const std::vector<FirKernel>& opponents,
                                      BestResponseDiagnostics* diag) {
  return impl_->respond(opponents, diag);
}

const CompiledConstraints& BestResponseSolver::compiled() const {
  return impl_->compiled_rows;
}

int BestResponseSolver::player() const { return impl_->player; }

FirKernel best_response(const GameSpec& spec, int player,
                        const std::vector<FirKernel>& opponents,
                        const BestResponseOptions& opts, BestResponseDiagnostics* diag) {
  auto hessians = std::make_shared<HessianBlocks>(assemble_hessians(spec, opts.horizon));
  BestResponseSolver solver(spec, hessians, player, opts);
  return solver.respond(opponents, diag);
}

// ---------------------------------------------------------------------------
// Joint programs
// ---------------------------------------------------------------------------

std::vector<FirKernel> project_profile(const GameSpec& spec,
                                       const std::vector<FirKernel>& reference,
                                       const BestResponseOptions& opts, bool* feasible,
                                       bool include_terminal) {
  std::vector<int> scope(spec.n_players);
  for (int p = 0; p < spec.n_players; ++p) scope[p] = p;
  const TerminalMode term = !include_terminal ? TerminalMode::kNone
                            : opts.exact_fir  ? TerminalMode::kExact
                                              : TerminalMode::kBall;
  ProgramAssembler assembler(spec, opts.horizon, opts.use_structure, scope, term,
                             opts.gamma, gather_rows(spec, scope, opts.horizon));
  BuiltProgram built = assembler.build();

  std::vector<int> in_scope(spec.n_players, 0);
  const FirKernel phi_out = out_of_scope_response(spec, in_scope, reference, opts.horizon);
  refresh_offsets(assembler, built, phi_out, reference);

  VectorXd ref = VectorXd::Zero(built.n_v);
  for (const auto& vm : built.vars)
    for (int idx = 0; idx < vm.size(); ++idx) {
      const auto [n, r, j] = vm.coords[idx];
      ref(vm.base + idx) = reference[vm.player].tap(n)(r, j);
    }

  const qp::SolveResult res = qp::project_feasible(built.prog, ref, opts.solver);
  if (feasible) *feasible = res.status == qp::SolveStatus::kOptimal;
  if (res.status == qp::SolveStatus::kInfeasible)
    throw InfeasibleError(-1, "initial projection: constraint set is empty");
  return extract_kernels(spec, built, res.z);
}

bool is_potential_game(const GameSpec& spec) {
  for (int p = 0; p < spec.n_players; ++p)
    for (int q = 0; q < spec.n_players; ++q) {
      if (p == q) continue;
      if (spec.D[p][q].size() != 0 && spec.D[p][q].cwiseAbs().maxCoeff() > 1e-12)
        return false;
    }
  const double scale = 1.0 + spec.C[0].cwiseAbs().maxCoeff();
  for (int p = 1; p < spec.n_players; ++p)
    if ((spec.C[p] - spec.C[0]).cwiseAbs().maxCoeff() > 1e-12 * scale) return false;
  return true;
}

std::vector<FirKernel> centralized_potential_solution(const GameSpec& spec,
                                                      const BestResponseOptions& opts) {
  if (!is_potential_game(spec))
    throw ConfigError(
        "centralized solve requires a potential game (zero cross penalties and a "
        "common state penalty)");

  std::vector<int> scope(spec.n_players);
  for (int p = 0; p < spec.n_players; ++p) scope[p] = p;
  const TerminalMode term = opts.exact_fir ? TerminalMode::kExact : TerminalMode::kBall;
  ProgramAssembler assembler(spec, opts.horizon, opts.use_structure, scope, term,
                             opts.gamma, gather_rows(spec, scope, opts.horizon));
  BuiltProgram built = assembler.build();

  // Potential objective sum_n ||C Phi_x,n||^2 + sum_p ||D^pp Phi_u,n^p||^2
  // (+ the terminal state term), expanded over the joint taps.
  const int horizon = opts.horizon;
  const int nx = spec.state_dim;
  const auto& apow = assembler.powers();
  const MatrixXd ctc = spec.C[0].transpose() * spec.C[0];

  std::vector<MatrixXd> F(spec.n_players);  // stacked response maps
  for (int q = 0; q < spec.n_players; ++q) {
    const int nu = spec.input_dims[q];
    MatrixXd f = MatrixXd::Zero(horizon * nx, (horizon - 1) * nu);
    for (int n = 1; n <= horizon; ++n)
      for (int m = 1; m < n; ++m)
        f.block((n - 1) * nx, (m - 1) * nu, nx, nu) = apow[n - 1 - m] * spec.B[q];
    F[q] = std::move(f);
  }
  MatrixXd impulse(horizon * nx, nx);
  for (int n = 1; n <= horizon; ++n) impulse.middleRows((n - 1) * nx, nx) = apow[n - 1];
  const MatrixXd ctc_blocks = ctc;  // per-stage weight

  auto weighted = [&](const MatrixXd& f) {
    MatrixXd g = f;
    for (int n = 0; n < horizon; ++n)
      g.middleRows(n * nx, nx) = ctc_blocks * f.middleRows(n * nx, nx);
    return g;
  };

  std::vector<Eigen::Triplet<double>> qtr;
  VectorXd qvec = VectorXd::Zero(built.prog.n);
  for (int a = 0; a < spec.n_players; ++a) {
    const MatrixXd wfa = weighted(F[a]);
    for (int b = 0; b < spec.n_players; ++b) {
      MatrixXd hab = F[b].transpose() * wfa;  // (taps_b) x (taps_a) transposed below
      hab.transposeInPlace();                 // rows: player a coords
      if (a == b) {
        const MatrixXd dd =
            spec.d_matrix(a, a).transpose() * spec.d_matrix(a, a);
        for (int n = 0; n < horizon - 1; ++n)
          hab.block(n * spec.input_dims[a], n * spec.input_dims[a], spec.input_dims[a],
                    spec.input_dims[a]) += dd;
      }
      const auto& va = built.vars[a];
      const auto& vb = built.vars[b];
      for (int j = 0; j < nx; ++j) {
        for (int ia : va.kept_by_col[j])
          for (int ib : vb.kept_by_col[j]) {
            const auto [na, ra, ja] = va.coords[ia];
            const auto [nb, rb, jb] = vb.coords[ib];
            const double v =
                2.0 * hab((na - 1) * va.nu + ra, (nb - 1) * vb.nu + rb);
            if (v != 0.0) qtr.emplace_back(va.base + ia, vb.base + ib, v);
          }
      }
    }
    const MatrixXd h0 = F[a].transpose() * [&] {
      MatrixXd g = impulse;
      for (int n = 0; n < horizon; ++n)
        g.middleRows(n * nx, nx) = ctc_blocks * impulse.middleRows(n * nx, nx);
      return g;
    }();
    const auto& va = built.vars[a];
    for (int idx = 0; idx < va.size(); ++idx) {
      const auto [n, r, j] = va.coords[idx];
      qvec(va.base + idx) = 2.0 * h0((n - 1) * va.nu + r, j);
    }
  }
  built.prog.Q.setFromTriplets(qtr.begin(), qtr.end());
  built.prog.q = qvec;

  std::vector<FirKernel> zeros;
  for (int q = 0; q < spec.n_players; ++q)
    zeros.push_back(FirKernel::zero(spec.input_dims[q], spec.state_dim, horizon - 1));
  std::vector<int> in_scope(spec.n_players, 0);
  const FirKernel phi_out = out_of_scope_response(spec, in_scope, zeros, horizon);
  refresh_offsets(assembler, built, phi_out, zeros);

  const qp::SolveResult res = qp::solve(built.prog, opts.solver);
  if (res.status == qp::SolveStatus::kInfeasible)
    throw InfeasibleError(-1, "centralized solve infeasible");
  if (res.status != qp::SolveStatus::kOptimal)
    throw Error("centralized solve did not reach optimality");
  return extract_kernels(spec, built, res.z);
}

}  // namespace sls
