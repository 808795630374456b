#include "sls/game_model.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>
#include <random>
#include <sstream>

namespace sls {

namespace {

constexpr double kRankTol = 1e-9;  // relative singular-value cutoff for PBH/rank tests

int matrix_rank(const MatrixXd& m) {
  if (m.rows() == 0 || m.cols() == 0) return 0;
  Eigen::JacobiSVD<MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) <= 0.0) return 0;
  int r = 0;
  for (int i = 0; i < s.size(); ++i)
    if (s(i) >= kRankTol * s(0)) ++r;
  return r;
}

int matrix_rank(const Eigen::MatrixXcd& m) {
  if (m.rows() == 0 || m.cols() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(m);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) <= 0.0) return 0;
  int r = 0;
  for (int i = 0; i < s.size(); ++i)
    if (s(i) >= kRankTol * s(0)) ++r;
  return r;
}

void require(bool ok, const std::string& matrix, const std::string& why) {
  if (!ok) throw DimensionError("dimension error in " + matrix + ": " + why);
}

std::string pstr(int p) { return std::to_string(p + 1); }

}  // namespace

double spectral_radius(const MatrixXd& m) {
  if (m.rows() == 0) return 0.0;
  Eigen::EigenSolver<MatrixXd> es(m, /*computeEigenvectors=*/false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

NoiseModel NoiseModel::infinity_ball(MatrixXd P) {
  NoiseModel n;
  n.kind = NoiseKind::kInfinityBall;
  n.P = std::move(P);
  return n;
}

NoiseModel NoiseModel::energy_ellipsoid(MatrixXd P) {
  NoiseModel n;
  n.kind = NoiseKind::kEnergyEllipsoid;
  n.P = std::move(P);
  return n;
}

int GameSpec::penalty_dim() const { return C.empty() ? 0 : static_cast<int>(C[0].rows()); }

int GameSpec::total_input_dim() const {
  int s = 0;
  for (int d : input_dims) s += d;
  return s;
}

MatrixXd GameSpec::d_matrix(int p, int q) const {
  const MatrixXd& m = D[p][q];
  if (m.size() == 0) return MatrixXd::Zero(penalty_dim(), input_dims[q]);
  return m;
}

void GameSpec::check_dimensions() const {
  require(n_players >= 1, "n_players", "need at least one player");
  require(static_cast<int>(input_dims.size()) == n_players, "input_dims",
          "one entry per player");
  require(A.rows() == state_dim && A.cols() == state_dim, "A",
          "expected " + std::to_string(state_dim) + "x" + std::to_string(state_dim));
  require(static_cast<int>(B.size()) == n_players, "B", "one block per player");
  require(static_cast<int>(C.size()) == n_players, "C", "one block per player");
  require(static_cast<int>(D.size()) == n_players, "D", "one row of blocks per player");

  const int nz = penalty_dim();
  require(nz >= state_dim + total_input_dim(), "C",
          "penalty dimension must be at least state_dim + total input dim");
  for (int p = 0; p < n_players; ++p) {
    require(B[p].rows() == state_dim && B[p].cols() == input_dims[p], "B^" + pstr(p),
            "expected state_dim x input_dims[p]");
    require(C[p].rows() == nz && C[p].cols() == state_dim, "C^" + pstr(p),
            "all C blocks share the penalty dimension");
    require(static_cast<int>(D[p].size()) == n_players, "D^" + pstr(p),
            "one block per opponent");
    for (int q = 0; q < n_players; ++q) {
      const MatrixXd& m = D[p][q];
      if (m.size() == 0) continue;
      require(m.rows() == nz && m.cols() == input_dims[q],
              "D^" + pstr(p) + pstr(q), "expected penalty_dim x input_dims[q]");
    }
  }

  if (!state_constraints.empty()) {
    require(state_constraints.G.cols() == state_dim, "G_x", "columns must match state_dim");
    require(state_constraints.g.size() == state_constraints.G.rows(), "g_x",
            "row counts of G_x and g_x must agree");
    require(state_constraints.g.minCoeff() >= 0.0, "g_x", "entries must be nonnegative");
  }
  require(static_cast<int>(input_constraints.size()) == n_players, "G_u",
          "one polyhedron per player");
  for (int p = 0; p < n_players; ++p) {
    const auto& poly = input_constraints[p];
    if (poly.empty()) continue;
    require(poly.G.cols() == input_dims[p], "G_u^" + pstr(p),
            "columns must match input_dims[p]");
    require(poly.g.size() == poly.G.rows(), "g_u^" + pstr(p),
            "row counts of G_u and g_u must agree");
    require(poly.g.minCoeff() >= 0.0, "g_u^" + pstr(p), "entries must be nonnegative");
  }
  if (coupled_rows() > 0) {
    require(static_cast<int>(coupled_G.size()) == n_players, "G_G",
            "one block per player");
    for (int p = 0; p < n_players; ++p)
      require(coupled_G[p].rows() == coupled_rows() && coupled_G[p].cols() == input_dims[p],
              "G_G^" + pstr(p), "expected coupled rows x input_dims[p]");
    require(coupled_g.minCoeff() >= 0.0, "g_G", "entries must be nonnegative");
  }

  require(noise.P.cols() == state_dim, "P", "columns must match state_dim");
  if (noise.kind == NoiseKind::kEnergyEllipsoid)
    require(noise.P.rows() == state_dim, "P", "ellipsoid shape matrix must be square");
  if (noise_covariance)
    require(noise_covariance->rows() == state_dim && noise_covariance->cols() == state_dim,
            "Sigma_w", "expected state_dim x state_dim");
}

bool ValidationReport::all_pass() const {
  for (const auto& c : checks)
    if (!c.pass) return false;
  return true;
}

ValidationReport validate_assumptions(const GameSpec& spec) {
  spec.check_dimensions();

  ValidationReport report;
  const int nx = spec.state_dim;
  Eigen::EigenSolver<MatrixXd> es(spec.A);
  const Eigen::VectorXcd eigs = es.eigenvalues();
  report.spectral_radius = eigs.cwiseAbs().maxCoeff();

  for (int p = 0; p < spec.n_players; ++p) {
    // PBH: rank [A - lambda I, B^p] = n_x at every unstable eigenvalue.
    bool stab = true;
    double worst_stab = 1.0;
    for (int i = 0; i < eigs.size(); ++i) {
      if (std::abs(eigs(i)) < 1.0 - 1e-12) continue;
      Eigen::MatrixXcd pbh(nx, nx + spec.input_dims[p]);
      pbh.leftCols(nx) = spec.A.cast<std::complex<double>>() -
                         eigs(i) * Eigen::MatrixXcd::Identity(nx, nx);
      pbh.rightCols(spec.input_dims[p]) = spec.B[p].cast<std::complex<double>>();
      if (matrix_rank(pbh) < nx) {
        stab = false;
        worst_stab = std::abs(eigs(i));
      }
    }
    report.checks.push_back({"stabilisable(A,B)", p, stab, worst_stab,
                             stab ? "" : "rank deficiency at an unstable eigenvalue"});

    bool det = true;
    double worst_det = 1.0;
    for (int i = 0; i < eigs.size(); ++i) {
      if (std::abs(eigs(i)) < 1.0 - 1e-12) continue;
      Eigen::MatrixXcd pbh(nx + spec.penalty_dim(), nx);
      pbh.topRows(nx) = spec.A.cast<std::complex<double>>() -
                        eigs(i) * Eigen::MatrixXcd::Identity(nx, nx);
      pbh.bottomRows(spec.penalty_dim()) = spec.C[p].cast<std::complex<double>>();
      if (matrix_rank(pbh) < nx) {
        det = false;
        worst_det = std::abs(eigs(i));
      }
    }
    report.checks.push_back({"detectable(C,A)", p, det, worst_det,
                             det ? "" : "rank deficiency at an unstable eigenvalue"});

    const MatrixXd dpp = spec.d_matrix(p, p);
    const int r = matrix_rank(dpp);
    report.checks.push_back({"full_column_rank(D)", p, r == spec.input_dims[p],
                             static_cast<double>(r), ""});

    double ortho = 0.0;
    for (int q = 0; q < spec.n_players; ++q) {
      const MatrixXd dq = spec.d_matrix(p, q);
      ortho = std::max(ortho, (dq.transpose() * spec.C[p]).cwiseAbs().maxCoeff());
    }
    report.checks.push_back({"orthogonal(D'C)", p, ortho <= 1e-10, ortho, ""});
  }
  return report;
}

GameSpec build_chain_game(int n_nodes, const std::vector<double>& betas) {
  const int np = static_cast<int>(betas.size());
  if (np < 1) throw ConfigError("chain game needs at least one player");
  for (double b : betas)
    if (!(b > 0.0)) throw ConfigError("chain game weights must be positive");
  int spacing = 0;
  if (np > 1) {
    if ((n_nodes - 2) % (np - 1) != 0)
      throw ConfigError("chain game: n_nodes - 2 must be divisible by n_players - 1");
    spacing = (n_nodes - 2) / (np - 1);
    if (spacing < 2) throw ConfigError("chain game: players would overlap");
  } else if (n_nodes < 2) {
    throw ConfigError("chain game needs at least two nodes");
  }

  GameSpec spec;
  spec.n_players = np;
  spec.state_dim = n_nodes;
  spec.input_dims.assign(np, 2);

  spec.A = MatrixXd::Identity(n_nodes, n_nodes);
  for (int i = 0; i + 1 < n_nodes; ++i) {
    spec.A(i, i + 1) = 0.2;
    spec.A(i + 1, i) = -0.2;
  }

  const int nu_total = 2 * np;
  const int nz = n_nodes + nu_total;
  for (int p = 0; p < np; ++p) {
    const int offset = spacing * p;
    MatrixXd b = MatrixXd::Zero(n_nodes, 2);
    b.block(offset, 0, 2, 2) = MatrixXd::Identity(2, 2);
    spec.B.push_back(b);

    MatrixXd c = MatrixXd::Zero(nz, n_nodes);
    c.topRows(n_nodes) = MatrixXd::Identity(n_nodes, n_nodes);
    spec.C.push_back(c);
  }
  spec.D.assign(np, std::vector<MatrixXd>(np));
  for (int p = 0; p < np; ++p) {
    MatrixXd d = MatrixXd::Zero(nz, 2);
    d.block(n_nodes + 2 * p, 0, 2, 2) = std::sqrt(betas[p]) * MatrixXd::Identity(2, 2);
    spec.D[p][p] = d;
  }

  spec.state_constraints = Polyhedron::unconstrained(n_nodes);
  for (int p = 0; p < np; ++p) {
    Polyhedron u;
    u.G.resize(2, 2);
    u.G << 0.1, 0.1, -0.1, -0.1;  // |u_1 + u_2| <= 10
    u.g = VectorXd::Ones(2);
    spec.input_constraints.push_back(u);
  }
  spec.noise = NoiseModel::infinity_ball(MatrixXd::Identity(n_nodes, n_nodes));
  spec.check_dimensions();
  return spec;
}

GameSpec build_market_game(const MarketParams& params, MarketDraws* draws) {
  if (!(params.tau > 0.0) || !(params.dt > 0.0))
    throw ConfigError("market game: tau and dt must be positive");
  auto check_range = [](const std::pair<double, double>& r, const char* name) {
    if (!(r.second >= r.first)) throw ConfigError(std::string("market game: empty ") + name);
  };
  check_range(params.alpha_range, "alpha_range");
  check_range(params.beta_range, "beta_range");
  check_range(params.b_range, "b_range");
  if (params.n_players < 1) throw ConfigError("market game needs at least one player");

  const int np = params.n_players;
  std::mt19937_64 rng(params.seed);
  auto uniform = [&rng](const std::pair<double, double>& r) {
    std::uniform_real_distribution<double> dist(r.first, r.second);
    return dist(rng);
  };

  MarketDraws d;
  d.b_tilde.resize(np, np);
  for (int p = 0; p < np; ++p)
    for (int q = 0; q < np; ++q) d.b_tilde(p, q) = uniform(params.b_range);
  d.alpha.resize(np);
  d.beta.resize(np);
  for (int p = 0; p < np; ++p) d.alpha(p) = uniform(params.alpha_range);
  for (int p = 0; p < np; ++p) d.beta(p) = uniform(params.beta_range);

  GameSpec spec;
  spec.n_players = np;
  spec.state_dim = np;  // one demand state per company
  spec.input_dims.assign(np, 1);
  spec.A = std::exp(-params.tau * params.dt) * MatrixXd::Identity(np, np);

  const MatrixXd hold = -(1.0 / params.tau) * (spec.A - MatrixXd::Identity(np, np));
  const MatrixXd b_full = hold * d.b_tilde;  // column p = input matrix of player p
  for (int p = 0; p < np; ++p) spec.B.push_back(b_full.col(p));

  const int nz = np + np;  // states + one scalar input per player
  for (int p = 0; p < np; ++p) {
    MatrixXd c = MatrixXd::Zero(nz, np);
    c.topRows(np) = std::sqrt(d.alpha(p)) * MatrixXd::Identity(np, np);
    spec.C.push_back(c);
  }
  spec.D.assign(np, std::vector<MatrixXd>(np));
  for (int p = 0; p < np; ++p) {
    MatrixXd dm = MatrixXd::Zero(nz, 1);
    dm(np + p, 0) = std::sqrt(d.beta(p));
    spec.D[p][p] = dm;
  }

  spec.state_constraints = Polyhedron::unconstrained(np);
  for (int p = 0; p < np; ++p)
    spec.input_constraints.push_back(Polyhedron::unconstrained(1));
  // Price cap |mean_p u^p| <= u_avg as two coupled rows shared by all players.
  const double scale = 1.0 / (np * params.u_avg);
  for (int p = 0; p < np; ++p) {
    MatrixXd g(2, 1);
    g << scale, -scale;
    spec.coupled_G.push_back(g);
  }
  spec.coupled_g = VectorXd::Ones(2);

  spec.noise = NoiseModel::infinity_ball(MatrixXd::Identity(np, np));
  spec.check_dimensions();
  if (draws) *draws = d;
  return spec;
}

MatrixXd sparsity_pattern(const MatrixXd& m, double tol) {
  MatrixXd s = MatrixXd::Zero(m.rows(), m.cols());
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j)
      if (std::abs(m(i, j)) > tol) s(i, j) = 1.0;
  return s;
}

StructuralPattern delay_sparsity(const GameSpec& spec, int actuation_delay,
                                 int sensing_delay, int horizon) {
  if (sensing_delay < 1) throw ConfigError("delay_sparsity: sensing delay must be >= 1");
  if (actuation_delay < 0) throw ConfigError("delay_sparsity: actuation delay must be >= 0");
  if (horizon < 2) throw ConfigError("delay_sparsity: horizon must be >= 2");

  StructuralPattern pat;
  pat.actuation_delay = actuation_delay;
  pat.sensing_delay = sensing_delay;
  pat.input_masks.resize(spec.n_players);

  // Powers of A fetched lazily; exponents repeat when sensing_delay > 1.
  std::vector<MatrixXd> powers{MatrixXd::Identity(spec.state_dim, spec.state_dim)};
  auto a_power = [&](int e) -> const MatrixXd& {
    while (static_cast<int>(powers.size()) <= e) powers.push_back(powers.back() * spec.A);
    return powers[e];
  };

  for (int n = 1; n <= horizon; ++n) {
    const int num = n - actuation_delay;  // floor division, num may be negative
    const int fl = (num >= 0) ? num / sensing_delay
                              : -(((-num) + sensing_delay - 1) / sensing_delay);
    const int exponent = std::max(0, fl);
    pat.state_masks.push_back(sparsity_pattern(a_power(exponent)));
    for (int p = 0; p < spec.n_players; ++p)
      pat.input_masks[p].push_back(
          sparsity_pattern(spec.B[p].transpose() * a_power(exponent)));
  }
  return pat;
}

}  // namespace sls
