#include "sls/sls_core.hpp"

#include <cmath>

namespace sls {

double FirKernel::norm() const {
  double s = 0.0;
  for (const auto& t : taps) s += t.squaredNorm();
  return std::sqrt(s);
}

double stacked_norm(const std::vector<FirKernel>& kernels) {
  double s = 0.0;
  for (const auto& k : kernels)
    for (const auto& t : k.taps) s += t.squaredNorm();
  return std::sqrt(s);
}

FirKernel propagate_phi_x(const GameSpec& spec, const std::vector<FirKernel>& phi_u,
                          int horizon) {
  if (static_cast<int>(phi_u.size()) != spec.n_players)
    throw DimensionError("propagate_phi_x: one input kernel per player expected");
  for (int p = 0; p < spec.n_players; ++p) {
    if (phi_u[p].horizon() != horizon - 1)
      throw DimensionError("propagate_phi_x: phi_u must have horizon - 1 taps");
    if (phi_u[p].rows() != spec.input_dims[p] || phi_u[p].cols() != spec.state_dim)
      throw DimensionError("propagate_phi_x: phi_u tap shape mismatch for player " +
                           std::to_string(p + 1));
  }

  FirKernel phi_x(spec.state_dim, spec.state_dim, horizon);
  phi_x.tap(1) = MatrixXd::Identity(spec.state_dim, spec.state_dim);
  for (int n = 1; n < horizon; ++n) {
    MatrixXd next = spec.A * phi_x.tap(n);
    for (int p = 0; p < spec.n_players; ++p) next += spec.B[p] * phi_u[p].tap(n);
    phi_x.tap(n + 1) = next;
  }
  return phi_x;
}

StrategyProfile StrategyProfile::from_phi_u(const GameSpec& spec,
                                            std::vector<FirKernel> phi_u) {
  StrategyProfile prof;
  const int horizon = phi_u.empty() ? 0 : phi_u[0].horizon() + 1;
  prof.phi_x_joint = propagate_phi_x(spec, phi_u, horizon);
  prof.phi_u = std::move(phi_u);
  prof.phi_x_per_player.assign(spec.n_players, prof.phi_x_joint);
  return prof;
}

MatrixXd toeplitz_matrix(const FirKernel& k, int signal_length) {
  const int r = k.rows(), c = k.cols();
  MatrixXd m = MatrixXd::Zero(r * signal_length, c * signal_length);
  for (int i = 0; i < signal_length; ++i) {
    for (int j = 0; j <= i; ++j) {
      const int n = i - j + 1;  // tap index applied to z_j when producing out_i
      if (n > k.horizon()) continue;
      m.block(i * r, j * c, r, c) = k.tap(n);
    }
  }
  return m;
}

std::vector<VectorXd> convolve(const FirKernel& k, const std::vector<VectorXd>& w) {
  std::vector<VectorXd> out;
  out.reserve(w.size());
  for (int t = 0; t < static_cast<int>(w.size()); ++t) {
    VectorXd y = VectorXd::Zero(k.rows());
    const int n_max = std::min(t + 1, k.horizon());
    for (int n = 1; n <= n_max; ++n) {
      if (w[t - n + 1].size() != k.cols())
        throw DimensionError("convolve: signal dimension mismatch");
      y += k.tap(n) * w[t - n + 1];
    }
    out.push_back(std::move(y));
  }
  return out;
}

double sls_residual(const GameSpec& spec, const std::vector<FirKernel>& phi_u,
                    const FirKernel& phi_x) {
  const int horizon = phi_x.horizon();
  double worst = 0.0;
  for (int n = 1; n < horizon; ++n) {
    MatrixXd next = spec.A * phi_x.tap(n);
    for (int p = 0; p < spec.n_players; ++p) next += spec.B[p] * phi_u[p].tap(n);
    worst = std::max(worst, (phi_x.tap(n + 1) - next).norm());
  }
  const MatrixXd eye = MatrixXd::Identity(spec.state_dim, spec.state_dim);
  return worst + (phi_x.tap(1) - eye).norm();
}

double sls_residual(const GameSpec& spec, const StrategyProfile& profile) {
  return sls_residual(spec, profile.phi_u, profile.phi_x_joint);
}

PolicyKernel policy_kernel(const FirKernel& phi_u_p, const FirKernel& phi_x,
                           int truncation) {
  if (truncation < 1) throw ConfigError("policy_kernel: truncation must be >= 1");
  const int nu = phi_u_p.rows();
  const int nx = phi_x.cols();

  PolicyKernel pol;
  pol.phi_x = phi_x;
  pol.phi_u = phi_u_p;
  pol.taps.reserve(truncation);
  // Solve Psi * phi_x = phi_u tap by tap; phi_x tap 1 is the identity, so
  // each new lag follows by forward substitution.
  for (int l = 0; l < truncation; ++l) {
    const int n = l + 1;  // target tap of phi_u
    MatrixXd rhs = (n <= phi_u_p.horizon()) ? phi_u_p.tap(n) : MatrixXd::Zero(nu, nx);
    for (int m = 0; m < l; ++m) {
      const int tap = n - m;  // phi_x tap paired with lag m
      if (tap >= 2 && tap <= phi_x.horizon()) rhs -= pol.taps[m] * phi_x.tap(tap);
    }
    pol.taps.push_back(std::move(rhs));
  }
  return pol;
}

ControllerState::ControllerState(FirKernel phi_x, FirKernel phi_u)
    : phi_x_(std::move(phi_x)), phi_u_(std::move(phi_u)) {
  window_ = std::max(phi_x_.horizon(), phi_u_.horizon() + 1);
}

void ControllerState::reset() {
  xi_.clear();
  t_ = 0;
}

VectorXd ControllerState::step(const VectorXd& x_t) {
  VectorXd xi = x_t;
  const int stored = static_cast<int>(xi_.size());
  for (int tau = 1; tau <= stored; ++tau) {
    const int tap = tau + 1;
    if (tap > phi_x_.horizon()) break;
    xi -= phi_x_.tap(tap) * xi_[stored - tau];
  }
  xi_.push_back(xi);
  if (static_cast<int>(xi_.size()) > window_) xi_.erase(xi_.begin());

  VectorXd u = VectorXd::Zero(phi_u_.rows());
  const int avail = static_cast<int>(xi_.size());
  for (int tau = 0; tau < avail; ++tau) {
    const int tap = tau + 1;
    if (tap > phi_u_.horizon()) break;
    u += phi_u_.tap(tap) * xi_[avail - 1 - tau];
  }
  ++t_;
  return u;
}

VectorXd controller_step(ControllerState& state, const VectorXd& x_t) {
  return state.step(x_t);
}

}  // namespace sls
