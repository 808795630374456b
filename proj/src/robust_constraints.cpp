#include "sls/robust_constraints.hpp"

#include <Eigen/SVD>

#include <cmath>

namespace sls {

namespace {

int count_kind(const CompiledConstraints& c, ConstraintOrigin o) {
  int n = 0;
  for (const auto& r : c.rows)
    if (r.origin == o) ++n;
  return n;
}

double dual_norm(const RowVectorXd& v, NoiseKind kind) {
  return kind == NoiseKind::kInfinityBall ? v.lpNorm<1>() : v.norm();
}

}  // namespace

int CompiledConstraints::state_row_count() const {
  return count_kind(*this, ConstraintOrigin::kState);
}
int CompiledConstraints::input_row_count() const {
  return count_kind(*this, ConstraintOrigin::kInput);
}
int CompiledConstraints::coupled_row_count() const {
  return count_kind(*this, ConstraintOrigin::kCoupled);
}

double SlackReport::max_slack() const {
  double m = -std::numeric_limits<double>::infinity();
  for (double s : slack) m = std::max(m, s);
  return m;
}

MatrixXd noise_dual_factor(const NoiseModel& noise) {
  if (noise.kind == NoiseKind::kEnergyEllipsoid) {
    Eigen::FullPivLU<MatrixXd> lu(noise.P);
    if (!lu.isInvertible())
      throw Error("noise model: singular ellipsoid shape matrix");
    return lu.inverse();
  }
  Eigen::JacobiSVD<MatrixXd> svd(noise.P, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  const double cutoff = 1e-10 * (s.size() > 0 ? s(0) : 0.0);
  VectorXd inv = VectorXd::Zero(s.size());
  for (int i = 0; i < s.size(); ++i)
    if (s(i) > cutoff) inv(i) = 1.0 / s(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

double worst_case_lhs(const RowVectorXd& row, const std::vector<MatrixXd>& taps,
                      const NoiseModel& noise) {
  const MatrixXd dual = noise_dual_factor(noise);
  double total = 0.0;
  for (const auto& tap : taps) {
    if (tap.cols() != dual.rows() || row.size() != tap.rows())
      throw DimensionError("worst_case_lhs: tap shape mismatch");
    total += dual_norm(row * tap * dual, noise.kind);
  }
  return total;
}

CompiledConstraints compile(const GameSpec& spec, int player, int horizon) {
  const bool any_rows = !spec.state_constraints.empty() ||
                        spec.coupled_rows() > 0 ||
                        [&] {
                          for (const auto& u : spec.input_constraints)
                            if (!u.empty()) return true;
                          return false;
                        }();

  CompiledConstraints out;
  out.player = player;
  out.horizon = horizon;
  out.noise_kind = spec.noise.kind;
  if (!any_rows) return out;

  // A bounded constraint facing an unbounded noise set cannot be enforced by
  // any stabilising policy; surface it instead of compiling garbage.
  if (spec.noise.kind == NoiseKind::kInfinityBall) {
    Eigen::JacobiSVD<MatrixXd> svd(spec.noise.P);
    const auto& s = svd.singularValues();
    if (s.size() == 0 || s(s.size() - 1) <= 1e-10 * s(0) ||
        spec.noise.P.rows() < spec.noise.P.cols())
      throw Error("constraint compilation: noise set is unbounded (rank-deficient P)");
  }
  out.noise_dual = noise_dual_factor(spec.noise);

  for (int i = 0; i < spec.state_constraints.rows(); ++i) {
    CompiledRow r;
    r.origin = ConstraintOrigin::kState;
    r.source_row = i;
    r.rhs = spec.state_constraints.g(i);
    r.row = spec.state_constraints.G.row(i);
    out.rows.push_back(std::move(r));
  }
  const auto& own = spec.input_constraints[player];
  for (int j = 0; j < own.rows(); ++j) {
    CompiledRow r;
    r.origin = ConstraintOrigin::kInput;
    r.source_row = j;
    r.player = player;
    r.rhs = own.g(j);
    r.row = own.G.row(j);
    out.rows.push_back(std::move(r));
  }
  for (int l = 0; l < spec.coupled_rows(); ++l) {
    CompiledRow r;
    r.origin = ConstraintOrigin::kCoupled;
    r.source_row = l;
    r.rhs = spec.coupled_g(l);
    for (int q = 0; q < spec.n_players; ++q) r.rows.push_back(spec.coupled_G[q].row(l));
    out.rows.push_back(std::move(r));
  }
  return out;
}

SlackReport check_feasible_point(const CompiledConstraints& compiled,
                                 const StrategyProfile& profile) {
  SlackReport report;
  const MatrixXd& dual = compiled.noise_dual;

  auto accumulate = [&](const RowVectorXd& row, const std::vector<MatrixXd>& taps) {
    double total = 0.0;
    for (const auto& tap : taps) total += dual_norm(row * tap * dual, compiled.noise_kind);
    return total;
  };

  for (const auto& r : compiled.rows) {
    double lhs = 0.0;
    switch (r.origin) {
      case ConstraintOrigin::kState:
        lhs = accumulate(r.row, profile.phi_x_joint.taps);
        break;
      case ConstraintOrigin::kInput:
        lhs = accumulate(r.row, profile.phi_u[r.player].taps);
        break;
      case ConstraintOrigin::kCoupled: {
        const int n_taps = profile.phi_u[0].horizon();
        for (int n = 1; n <= n_taps; ++n) {
          RowVectorXd combined =
              RowVectorXd::Zero(profile.phi_u[0].cols());
          for (int q = 0; q < static_cast<int>(profile.phi_u.size()); ++q)
            combined += r.rows[q] * profile.phi_u[q].tap(n);
          lhs += dual_norm(combined * dual, compiled.noise_kind);
        }
        break;
      }
    }
    report.slack.push_back(lhs - r.rhs);
  }
  return report;
}

}  // namespace sls
