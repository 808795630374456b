#pragma once

#include "sls/sls_core.hpp"

#include <cstdint>
#include <random>

namespace sls {

/// Disturbance generator for closed-loop runs.
struct NoiseSource {
  enum class Kind { kZero, kImpulse, kUniformBall, kScripted };

  Kind kind = Kind::kZero;
  int impulse_index = 0;
  std::uint64_t seed = 0;
  std::vector<VectorXd> script;  // w_t table; zero past the end

  static NoiseSource zero();
  static NoiseSource impulse(int index);
  static NoiseSource uniform_ball(std::uint64_t seed);
  static NoiseSource scripted(std::vector<VectorXd> table);
};

/// Draws w_0, w_1, ... for one run; UniformBall draws are uniform over the
/// noise set (componentwise uniform mapped through the pseudo-inverse for
/// the infinity ball; radius-corrected direction sampling for ellipsoids).
class NoiseStream {
 public:
  NoiseStream(const NoiseSource& source, const NoiseModel& model, int state_dim);
  VectorXd next();

 private:
  NoiseSource source_;
  NoiseModel model_;
  MatrixXd dual_;
  int dim_;
  int t_ = 0;
  std::mt19937_64 rng_;
};

struct Trajectory {
  std::vector<VectorXd> x;                    // x_0..x_{T-1}
  std::vector<std::vector<VectorXd>> u;       // u[t][p]
  std::vector<VectorXd> w;                    // w_0..w_{T-1} (w_t drives x_{t+1})
  std::vector<std::vector<double>> stage_costs;  // [t][p]
  bool aborted_unstable = false;

  int stages() const { return static_cast<int>(x.size()); }
};

/// Simulates x_{t+1} = A x_t + sum_p B u^p_t + w_t with each player running
/// its internal-state controller from its own (phi_x, phi_u) pair.
Trajectory closed_loop_run(const GameSpec& spec,
                           const std::vector<PolicyKernel>& policies, int stages,
                           const NoiseSource& noise, const VectorXd& x0);

struct MonteCarloCost {
  VectorXd mean;           // per player: average per-stage cost, stationary window
  VectorXd standard_error;
  int runs = 0;
  int window_start = 0;    // first averaged stage
};

/// Per-stage stationary cost estimate: stages before the FIR horizon are
/// discarded (warm-up), the rest averaged per run; mean and standard error
/// are taken across runs. The truncation bias of soft-FIR policies is not
/// corrected.
MonteCarloCost monte_carlo_cost(const GameSpec& spec,
                                const std::vector<PolicyKernel>& policies, int stages,
                                int n_runs, std::uint64_t seed);

/// The five two-week +-1 demand-shock patterns on stages [265,279], [293,307],
/// [321,335], [349,363], [377,391]; zero elsewhere.
NoiseSource market_disturbance_script();

/// Spectral radius of the lifted closed-loop companion matrix built from the
/// first `kernel_length` taps of the policy kernels.
double closed_loop_spectral_radius(const GameSpec& spec,
                                   const std::vector<PolicyKernel>& policies,
                                   int kernel_length);

}  // namespace sls
