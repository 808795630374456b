#include "sls/simulate.hpp"

#include "sls/robust_constraints.hpp"

#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>

namespace sls {

NoiseSource NoiseSource::zero() { return NoiseSource{}; }

NoiseSource NoiseSource::impulse(int index) {
  NoiseSource n;
  n.kind = Kind::kImpulse;
  n.impulse_index = index;
  return n;
}

NoiseSource NoiseSource::uniform_ball(std::uint64_t seed) {
  NoiseSource n;
  n.kind = Kind::kUniformBall;
  n.seed = seed;
  return n;
}

NoiseSource NoiseSource::scripted(std::vector<VectorXd> table) {
  NoiseSource n;
  n.kind = Kind::kScripted;
  n.script = std::move(table);
  return n;
}

NoiseStream::NoiseStream(const NoiseSource& source, const NoiseModel& model,
                         int state_dim)
    : source_(source), model_(model), dim_(state_dim), rng_(source.seed) {
  if (source_.kind == NoiseSource::Kind::kUniformBall)
    dual_ = noise_dual_factor(model_);
}

VectorXd NoiseStream::next() {
  const int t = t_++;
  switch (source_.kind) {
    case NoiseSource::Kind::kZero:
      return VectorXd::Zero(dim_);
    case NoiseSource::Kind::kImpulse:
      return t == 0 ? VectorXd::Unit(dim_, source_.impulse_index).eval()
                    : VectorXd::Zero(dim_).eval();
    case NoiseSource::Kind::kScripted:
      if (t < static_cast<int>(source_.script.size())) return source_.script[t];
      return VectorXd::Zero(dim_);
    case NoiseSource::Kind::kUniformBall: {
      std::uniform_real_distribution<double> unif(-1.0, 1.0);
      if (model_.kind == NoiseKind::kInfinityBall) {
        VectorXd zeta(model_.P.rows());
        for (int i = 0; i < zeta.size(); ++i) zeta(i) = unif(rng_);
        return dual_ * zeta;
      }
      // Ellipsoid: uniform direction, radius with the density correction.
      std::normal_distribution<double> gauss(0.0, 1.0);
      VectorXd dir(dim_);
      for (int i = 0; i < dim_; ++i) dir(i) = gauss(rng_);
      if (dir.norm() < 1e-14) dir = VectorXd::Unit(dim_, 0);
      dir.normalize();
      std::uniform_real_distribution<double> u01(0.0, 1.0);
      const double radius = std::pow(u01(rng_), 1.0 / dim_);
      return dual_ * (radius * dir);
    }
  }
  return VectorXd::Zero(dim_);
}

Trajectory closed_loop_run(const GameSpec& spec,
                           const std::vector<PolicyKernel>& policies, int stages,
                           const NoiseSource& noise, const VectorXd& x0) {
  if (static_cast<int>(policies.size()) != spec.n_players)
    throw DimensionError("closed_loop_run: one policy per player expected");

  std::vector<ControllerState> controllers;
  controllers.reserve(spec.n_players);
  for (const auto& pol : policies) controllers.emplace_back(pol.phi_x, pol.phi_u);

  NoiseStream stream(noise, spec.noise, spec.state_dim);
  Trajectory traj;
  traj.x.reserve(stages);

  VectorXd x = x0.size() == 0 ? VectorXd::Zero(spec.state_dim) : x0;
  for (int t = 0; t < stages; ++t) {
    if (!x.allFinite() || x.cwiseAbs().maxCoeff() > 1e12) {
      traj.aborted_unstable = true;
      break;
    }
    traj.x.push_back(x);
    std::vector<VectorXd> ut;
    for (int p = 0; p < spec.n_players; ++p) ut.push_back(controllers[p].step(x));

    std::vector<double> costs;
    for (int p = 0; p < spec.n_players; ++p) {
      double c = (spec.C[p] * x).squaredNorm();
      VectorXd du = VectorXd::Zero(spec.penalty_dim());
      for (int q = 0; q < spec.n_players; ++q) du += spec.d_matrix(p, q) * ut[q];
      c += du.squaredNorm();
      costs.push_back(c);
    }

    VectorXd w = stream.next();
    VectorXd xn = spec.A * x;
    for (int p = 0; p < spec.n_players; ++p) xn += spec.B[p] * ut[p];
    xn += w;

    traj.u.push_back(std::move(ut));
    traj.w.push_back(std::move(w));
    traj.stage_costs.push_back(std::move(costs));
    x = std::move(xn);
  }
  return traj;
}

MonteCarloCost monte_carlo_cost(const GameSpec& spec,
                                const std::vector<PolicyKernel>& policies, int stages,
                                int n_runs, std::uint64_t seed) {
  const int np = spec.n_players;
  const int warmup = std::min(policies[0].phi_x.horizon(), stages / 2);

  MatrixXd per_run(n_runs, np);
  for (int run = 0; run < n_runs; ++run) {
    const NoiseSource src = NoiseSource::uniform_ball(seed + 0x9e3779b97f4a7c15ULL * run);
    const Trajectory traj =
        closed_loop_run(spec, policies, stages, src, VectorXd::Zero(spec.state_dim));
    if (traj.aborted_unstable) throw Error("monte_carlo_cost: unstable closed loop");
    VectorXd acc = VectorXd::Zero(np);
    for (int t = warmup; t < traj.stages(); ++t)
      for (int p = 0; p < np; ++p) acc(p) += traj.stage_costs[t][p];
    per_run.row(run) = acc.transpose() / (traj.stages() - warmup);
  }

  MonteCarloCost out;
  out.runs = n_runs;
  out.window_start = warmup;
  out.mean = per_run.colwise().mean();
  VectorXd var = VectorXd::Zero(np);
  for (int p = 0; p < np; ++p)
    var(p) = (per_run.col(p).array() - out.mean(p)).square().sum() /
             std::max(1, n_runs - 1);
  out.standard_error = (var / n_runs).cwiseSqrt();
  return out;
}

NoiseSource market_disturbance_script() {
  const int dim = 4;
  struct Window {
    int from, to;
    std::array<double, 4> pattern;
  };
  const std::vector<Window> windows = {
      {265, 279, {1, 1, 1, 1}},   {293, 307, {1, -1, 1, -1}},
      {321, 335, {-1, 1, -1, 1}}, {349, 363, {1, 1, -1, -1}},
      {377, 391, {-1, -1, -1, -1}}};

  std::vector<VectorXd> table(392, VectorXd::Zero(dim));
  for (const auto& wdw : windows)
    for (int t = wdw.from; t <= wdw.to; ++t)
      for (int i = 0; i < dim; ++i) table[t](i) = wdw.pattern[i];
  return NoiseSource::scripted(std::move(table));
}

double closed_loop_spectral_radius(const GameSpec& spec,
                                   const std::vector<PolicyKernel>& policies,
                                   int kernel_length) {
  const int nx = spec.state_dim;
  const int lifted = kernel_length * nx;
  MatrixXd companion = MatrixXd::Zero(lifted, lifted);
  for (int lag = 0; lag < kernel_length; ++lag) {
    MatrixXd gain = MatrixXd::Zero(nx, nx);
    for (int p = 0; p < spec.n_players; ++p) {
      if (lag < policies[p].truncation()) gain += spec.B[p] * policies[p].taps[lag];
    }
    if (lag == 0) gain += spec.A;
    companion.block(0, lag * nx, nx, nx) = gain;
  }
  for (int k = 1; k < kernel_length; ++k)
    companion.block(k * nx, (k - 1) * nx, nx, nx) = MatrixXd::Identity(nx, nx);
  return spectral_radius(companion);
}

}  // namespace sls
