#pragma once

#include "sls/brd_engine.hpp"

#include <random>

namespace sls {

/// Contraction data of the joint best-response map: per-player constants
/// L^p = (1 + kappa(H^pp)) ||(H^pp)^+ H^{p,-p}||, aggregated as the
/// root-sum-square. Valid as stated only without state/coupled rows and
/// structural masks; advisory_only is set otherwise.
struct LipschitzReport {
  std::vector<double> player_constants;
  std::vector<double> condition_numbers;
  double global_constant = 0.0;
  double eta = std::numeric_limits<double>::quiet_NaN();
  double predicted_rate = std::numeric_limits<double>::quiet_NaN();
  double empirical_ratio = std::numeric_limits<double>::quiet_NaN();
  bool advisory_only = false;
};

LipschitzReport lipschitz_constants(const GameSpec& spec, const HessianBlocks& hessians);

/// (1 - eta) + eta * L.
double predicted_rate(double eta, double lipschitz);

/// Largest observed ||BR(x) - BR(y)|| / ||x - y|| over sampled feasible
/// profile pairs (profiles are projected onto the constraint set first).
double empirical_lipschitz(const GameSpec& spec, const BrdConfig& config, int n_samples,
                           std::mt19937_64& rng);

/// Spectral norm by power iteration on M'M (tolerance 1e-10, 10000 rounds).
double operator_norm(const MatrixXd& m);

/// Pseudo-inverse via eigendecomposition, eigenvalue cutoff 1e-10 * lambda_max.
MatrixXd symmetric_pseudo_inverse(const MatrixXd& m);

}  // namespace sls
