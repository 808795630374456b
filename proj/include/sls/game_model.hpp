#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sls {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dimension mismatch; the message names the offending matrix.
class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InfeasibleError : public Error {
 public:
  InfeasibleError(int player, const std::string& what)
      : Error(what), player_(player) {}
  int player() const { return player_; }

 private:
  int player_ = -1;
};

/// Polyhedron {z : G z <= g} with g >= 0 elementwise. Zero rows means
/// the set is the whole space.
struct Polyhedron {
  MatrixXd G;
  VectorXd g;

  int rows() const { return static_cast<int>(G.rows()); }
  bool empty() const { return G.rows() == 0; }

  static Polyhedron unconstrained(int dim) {
    Polyhedron p;
    p.G.resize(0, dim);
    p.g.resize(0);
    return p;
  }
};

enum class NoiseKind { kInfinityBall, kEnergyEllipsoid };

/// Bounded noise set, either {w : ||P w||_inf <= 1} (full-rank P) or
/// {w : ||P w||_2 <= 1} (symmetric positive-definite P).
struct NoiseModel {
  NoiseKind kind = NoiseKind::kInfinityBall;
  MatrixXd P;

  static NoiseModel infinity_ball(MatrixXd P);
  static NoiseModel energy_ellipsoid(MatrixXd P);
};

/// Sparsity masks encoding actuation/sensing-delay information patterns.
/// state_masks[n-1] and input_masks[p][n-1] hold the binary masks for
/// tap n = 1..horizon.
struct StructuralPattern {
  int actuation_delay = 1;  // >= 0
  int sensing_delay = 1;    // >= 1
  std::vector<MatrixXd> state_masks;
  std::vector<std::vector<MatrixXd>> input_masks;

  int horizon() const { return static_cast<int>(state_masks.size()); }
};

/// One linear-quadratic stochastic dynamic game instance.
///
/// Dynamics   x_{t+1} = A x_t + sum_p B[p] u^p_t + w_t
/// Costs      J^p = E sum_t ||C[p] x_t||^2 + ||sum_q D[p][q] u^q_t||^2
/// Sets       state/input/coupled polyhedra, bounded noise set.
struct GameSpec {
  int n_players = 0;
  int state_dim = 0;
  std::vector<int> input_dims;

  MatrixXd A;
  std::vector<MatrixXd> B;  // B[p]: state_dim x input_dims[p]
  std::vector<MatrixXd> C;  // C[p]: penalty_dim x state_dim
  // D[p][q]: penalty_dim x input_dims[q]; a 0x0 entry stands for zero.
  std::vector<std::vector<MatrixXd>> D;

  Polyhedron state_constraints;                // on x_t
  std::vector<Polyhedron> input_constraints;   // on u^p_t, per player
  std::vector<MatrixXd> coupled_G;             // per player: rows x input_dims[p]
  VectorXd coupled_g;

  NoiseModel noise;
  std::optional<StructuralPattern> structure;
  std::optional<MatrixXd> noise_covariance;  // informational only

  int penalty_dim() const;
  int total_input_dim() const;
  int coupled_rows() const { return static_cast<int>(coupled_g.size()); }

  /// D[p][q] with 0x0 entries materialized as zero matrices.
  MatrixXd d_matrix(int p, int q) const;

  /// Throws DimensionError naming the first inconsistent matrix.
  void check_dimensions() const;
};

struct CheckItem {
  std::string name;
  int player = -1;  // -1 for game-wide checks
  bool pass = false;
  double value = 0.0;
  std::string detail;
};

struct ValidationReport {
  std::vector<CheckItem> checks;
  double spectral_radius = 0.0;  // rho(A)

  bool all_pass() const;
};

/// PBH stabilisability/detectability, D[p][p] column rank, and the
/// D[p][q]' C[p] = 0 orthogonality, one CheckItem per (check, player).
ValidationReport validate_assumptions(const GameSpec& spec);

/// Chain of single-state nodes (tridiagonal A, +0.2 above, -0.2 below),
/// each player actuating two adjacent nodes, |u_1 + u_2| <= 10 per player.
GameSpec build_chain_game(int n_nodes, const std::vector<double>& betas);

struct MarketParams {
  std::uint64_t seed = 0;
  double tau = 1.2;
  double dt = 0.25;
  double u_avg = 0.5;
  double d_base = 10.0;
  std::pair<double, double> alpha_range{5.0, 15.0};
  std::pair<double, double> beta_range{0.3, 0.6};
  std::pair<double, double> b_range{0.5, 1.5};
  int n_players = 4;
};

/// Raw samples behind a market game, kept for reproducibility checks.
struct MarketDraws {
  MatrixXd b_tilde;  // n_players x n_players, row p = price sensitivities of demand p
  VectorXd alpha;
  VectorXd beta;
};

/// Discretized price-competition game: A = exp(-tau*dt) I, scalar input per
/// player, average-price cap as the only (coupled) constraint.
GameSpec build_market_game(const MarketParams& params, MarketDraws* draws = nullptr);

/// Binary pattern of a matrix; entries with |a| <= tol count as zero.
MatrixXd sparsity_pattern(const MatrixXd& m, double tol = 1e-12);

/// Delay-induced masks S_{x,n} = Sp(A^e(n)), S_{u,n}^p = Sp(B[p]' A^e(n)),
/// e(n) = max(0, floor((n - d_a)/d_s)), n = 1..horizon.
StructuralPattern delay_sparsity(const GameSpec& spec, int actuation_delay,
                                 int sensing_delay, int horizon);

double spectral_radius(const MatrixXd& m);

}  // namespace sls
