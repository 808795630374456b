#include "sls/analysis.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace sls {

double operator_norm(const MatrixXd& m) {
  if (m.rows() == 0 || m.cols() == 0) return 0.0;
  const MatrixXd gram = m.transpose() * m;
  VectorXd v = VectorXd::Ones(gram.rows());
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < 10000; ++it) {
    VectorXd w = gram * v;
    const double next = w.norm();
    if (next <= 0.0) return 0.0;
    w /= next;
    if (std::abs(next - lambda) <= 1e-10 * std::max(1.0, next) && it > 1) {
      lambda = next;
      break;
    }
    lambda = next;
    v = w;
  }
  return std::sqrt(lambda);
}

MatrixXd symmetric_pseudo_inverse(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m);
  const VectorXd& vals = es.eigenvalues();
  const double cutoff = 1e-10 * std::max(0.0, vals.cwiseAbs().maxCoeff());
  VectorXd inv = VectorXd::Zero(vals.size());
  for (int i = 0; i < vals.size(); ++i)
    if (std::abs(vals(i)) > cutoff) inv(i) = 1.0 / vals(i);
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

LipschitzReport lipschitz_constants(const GameSpec& spec, const HessianBlocks& hessians) {
  LipschitzReport report;
  const int np = spec.n_players;
  report.advisory_only = !spec.state_constraints.empty() || spec.coupled_rows() > 0 ||
                         spec.structure.has_value();

  for (int p = 0; p < np; ++p) {
    const MatrixXd& hpp = hessians.H[p][p];
    const MatrixXd pinv = symmetric_pseudo_inverse(hpp);
    const double kappa = operator_norm(pinv) * operator_norm(hpp);
    report.condition_numbers.push_back(kappa);

    int opp_cols = 0;
    for (int q = 0; q < np; ++q)
      if (q != p) opp_cols += static_cast<int>(hessians.H[p][q].cols());
    if (opp_cols == 0) {
      report.player_constants.push_back(0.0);
      continue;
    }
    MatrixXd opp(hpp.rows(), opp_cols);
    int at = 0;
    for (int q = 0; q < np; ++q) {
      if (q == p) continue;
      opp.middleCols(at, hessians.H[p][q].cols()) = hessians.H[p][q];
      at += static_cast<int>(hessians.H[p][q].cols());
    }
    const double norm = operator_norm(pinv * opp);
    report.player_constants.push_back((1.0 + kappa) * norm);
  }

  double s = 0.0;
  for (double lp : report.player_constants) s += lp * lp;
  report.global_constant = std::sqrt(s);
  return report;
}

double predicted_rate(double eta, double lipschitz) {
  return (1.0 - eta) + eta * lipschitz;
}

double empirical_lipschitz(const GameSpec& spec, const BrdConfig& config, int n_samples,
                           std::mt19937_64& rng) {
  const GameSpec work = effective_spec(spec, config);
  const int horizon = config.horizon;
  auto hessians = std::make_shared<HessianBlocks>(assemble_hessians(work, horizon));

  BestResponseOptions opts;
  opts.horizon = horizon;
  opts.gamma = config.gamma;
  opts.exact_fir = config.exact_fir;
  opts.use_structure = config.use_structure;
  opts.solver = config.solver;

  std::vector<BestResponseSolver> solvers;
  for (int p = 0; p < work.n_players; ++p) solvers.emplace_back(work, hessians, p, opts);

  std::normal_distribution<double> gauss(0.0, 1.0);
  auto random_profile = [&] {
    std::vector<FirKernel> kernels;
    for (int p = 0; p < work.n_players; ++p) {
      FirKernel k(work.input_dims[p], work.state_dim, horizon - 1);
      for (auto& tap : k.taps)
        for (int i = 0; i < tap.rows(); ++i)
          for (int j = 0; j < tap.cols(); ++j) tap(i, j) = 0.3 * gauss(rng);
      kernels.push_back(std::move(k));
    }
    return project_profile(work, kernels, opts);
  };

  auto joint_br = [&](const std::vector<FirKernel>& at) {
    std::vector<FirKernel> out;
    for (int p = 0; p < work.n_players; ++p) out.push_back(solvers[p].respond(at));
    return out;
  };

  double worst = 0.0;
  for (int s = 0; s < n_samples; ++s) {
    const auto x = random_profile();
    const auto y = random_profile();
    double dist = 0.0;
    for (int p = 0; p < work.n_players; ++p)
      for (int n = 1; n < horizon; ++n)
        dist += (x[p].tap(n) - y[p].tap(n)).squaredNorm();
    dist = std::sqrt(dist);
    if (dist < 1e-12) continue;
    const auto bx = joint_br(x);
    const auto by = joint_br(y);
    double bdist = 0.0;
    for (int p = 0; p < work.n_players; ++p)
      for (int n = 1; n < horizon; ++n)
        bdist += (bx[p].tap(n) - by[p].tap(n)).squaredNorm();
    worst = std::max(worst, std::sqrt(bdist) / dist);
  }
  return worst;
}

}  // namespace sls
