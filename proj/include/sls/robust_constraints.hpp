#pragma once

#include "sls/sls_core.hpp"

namespace sls {

enum class ConstraintOrigin { kState, kInput, kCoupled };

/// One robust scalar constraint over FIR taps:
///   sum_n dual_norm(row * tap_n * P_dual) <= rhs
/// where dual_norm is the l1 norm for infinity-ball noise and the l2 norm
/// for ellipsoidal noise. Coupled rows carry one functional per player and
/// apply to the summed input response.
struct CompiledRow {
  ConstraintOrigin origin = ConstraintOrigin::kInput;
  int source_row = 0;
  int player = -1;  // owning player for input rows, -1 otherwise
  double rhs = 0.0;
  RowVectorXd row;                 // state/input rows
  std::vector<RowVectorXd> rows;   // coupled rows, one per player
};

struct CompiledConstraints {
  int player = 0;
  int horizon = 0;
  NoiseKind noise_kind = NoiseKind::kInfinityBall;
  MatrixXd noise_dual;  // pseudo-inverse (infinity ball) or inverse (ellipsoid)
  std::vector<CompiledRow> rows;

  bool empty() const { return rows.empty(); }
  int state_row_count() const;
  int input_row_count() const;
  int coupled_row_count() const;
};

/// P^dagger (SVD cutoff 1e-10 * sigma_max) or P^{-1} depending on the noise
/// kind; throws on a singular ellipsoid shape matrix.
MatrixXd noise_dual_factor(const NoiseModel& noise);

/// Worst case of row * (Phi * w)_n accumulated over taps, each tap facing an
/// independent worst-case noise: sum_n ||(row tap_n P_dual)'||_1 (infinity
/// ball) or the same with the l2 norm (ellipsoid).
double worst_case_lhs(const RowVectorXd& row, const std::vector<MatrixXd>& taps,
                      const NoiseModel& noise);

/// Compiles the polyhedral state/input/coupled sets of `spec` into robust
/// rows for player `p` at FIR horizon `horizon`. State rows range over the
/// full phi_x taps, input and coupled rows over the phi_u taps.
CompiledConstraints compile(const GameSpec& spec, int player, int horizon);

struct SlackReport {
  std::vector<double> slack;  // worst-case lhs minus rhs, per row

  bool feasible(double tol = 1e-9) const {
    for (double s : slack)
      if (s > tol) return false;
    return true;
  }
  double max_slack() const;
};

/// Worst-case slack of every compiled row at the candidate responses.
SlackReport check_feasible_point(const CompiledConstraints& compiled,
                                 const StrategyProfile& profile);

}  // namespace sls
