#pragma once

#include "sls/game_model.hpp"

namespace sls {

/// Finite impulse response: an ordered list of equally-sized matrix taps.
/// Tap indices start at 1 (tap 0 is structurally zero by strict causality);
/// tap n is stored at taps[n-1].
struct FirKernel {
  std::vector<MatrixXd> taps;

  FirKernel() = default;
  FirKernel(int rows, int cols, int horizon)
      : taps(horizon, MatrixXd::Zero(rows, cols)) {}

  int horizon() const { return static_cast<int>(taps.size()); }
  int rows() const { return taps.empty() ? 0 : static_cast<int>(taps[0].rows()); }
  int cols() const { return taps.empty() ? 0 : static_cast<int>(taps[0].cols()); }

  /// 1-based tap access; indices beyond the horizon read as zero.
  const MatrixXd& tap(int n) const { return taps.at(n - 1); }
  MatrixXd& tap(int n) { return taps.at(n - 1); }

  /// l2 norm of the stacked taps (Frobenius over the whole kernel).
  double norm() const;

  static FirKernel zero(int rows, int cols, int horizon) {
    return FirKernel(rows, cols, horizon);
  }
};

double stacked_norm(const std::vector<FirKernel>& kernels);

/// Joint system responses at one iterate of the learning dynamics.
/// phi_x_joint = response of the state map to the joint phi_u; the
/// per-player copies phi_x[p] track each player's own bookkeeping.
struct StrategyProfile {
  std::vector<FirKernel> phi_u;          // per player, horizon N-1
  FirKernel phi_x_joint;                 // horizon N, tap 1 = I
  std::vector<FirKernel> phi_x_per_player;

  int horizon() const { return phi_x_joint.horizon(); }

  static StrategyProfile from_phi_u(const GameSpec& spec,
                                    std::vector<FirKernel> phi_u);
};

/// Rolls the deterministic tap recursion
///   Phi_{x,1} = I,  Phi_{x,n+1} = A Phi_{x,n} + sum_p B[p] Phi_{u,n}^p
/// out to `horizon` taps. Each phi_u[p] must have horizon - 1 taps.
FirKernel propagate_phi_x(const GameSpec& spec, const std::vector<FirKernel>& phi_u,
                          int horizon);

/// Lower block-triangular block-Toeplitz matrix with block (i,j) = tap_{i-j},
/// mapping a stacked signal (z_0..z_{T-1}) to the stacked convolution output.
MatrixXd toeplitz_matrix(const FirKernel& k, int signal_length);

/// Causal convolution (k * w)_t = sum_{n=1..min(t+1,horizon)} tap_n w_{t-n+1}.
/// Output length equals input length.
std::vector<VectorXd> convolve(const FirKernel& k, const std::vector<VectorXd>& w);

/// max_n || Phi_{x,n+1} - A Phi_{x,n} - sum_p B[p] Phi_{u,n}^p ||_F
/// plus || Phi_{x,1} - I ||_F.
double sls_residual(const GameSpec& spec, const std::vector<FirKernel>& phi_u,
                    const FirKernel& phi_x);
double sls_residual(const GameSpec& spec, const StrategyProfile& profile);

/// Feedback kernel Phi = phi_u * phi_x^{-1} by forward substitution; tap at
/// lag l is stored at taps[l] (lag 0 acts on the current state). The raw
/// (phi_x, phi_u) pair is retained for the exact internal-state controller.
struct PolicyKernel {
  std::vector<MatrixXd> taps;  // lag l at taps[l], l = 0..truncation-1
  FirKernel phi_x;
  FirKernel phi_u;

  int truncation() const { return static_cast<int>(taps.size()); }
};

PolicyKernel policy_kernel(const FirKernel& phi_u_p, const FirKernel& phi_x,
                           int truncation);

/// Internal-state controller
///   xi_t  = x_t - sum_{tau>=1} Phi_{x,tau+1} xi_{t-tau}
///   u_t   = sum_{tau>=0} Phi_{u,tau+1} xi_{t-tau}
/// with sums truncated to the stored horizons and xi_0 = x_0.
class ControllerState {
 public:
  ControllerState(FirKernel phi_x, FirKernel phi_u);

  /// Advances one stage: consumes x_t, returns u_t.
  VectorXd step(const VectorXd& x_t);

  void reset();
  int time() const { return t_; }

 private:
  FirKernel phi_x_;
  FirKernel phi_u_;
  std::vector<VectorXd> xi_;  // newest last, bounded window
  int window_ = 0;
  int t_ = 0;
};

/// Free-function form of ControllerState::step.
VectorXd controller_step(ControllerState& state, const VectorXd& x_t);

}  // namespace sls
