#include "support/test_games.hpp"

#include <cmath>

namespace sls::testing {

namespace {

MatrixXd random_matrix(std::mt19937_64& rng, int rows, int cols, double scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = scale * gauss(rng);
  return m;
}

}  // namespace

GameSpec random_game(std::mt19937_64& rng, const RandomGameOptions& opts) {
  std::uniform_int_distribution<int> udim(1, opts.max_input_dim);
  std::uniform_real_distribution<double> ubeta(opts.beta_lo, opts.beta_hi);

  GameSpec spec;
  spec.n_players = opts.n_players;
  spec.state_dim = opts.state_dim;
  for (int p = 0; p < opts.n_players; ++p) spec.input_dims.push_back(udim(rng));

  spec.A = random_matrix(rng, opts.state_dim, opts.state_dim);
  const double rho = spectral_radius(spec.A);
  if (rho > 1e-9) spec.A *= opts.spectral_radius / rho;

  for (int p = 0; p < opts.n_players; ++p)
    spec.B.push_back(random_matrix(rng, opts.state_dim, spec.input_dims[p]));

  // Penalty layout: [state block | player 0 block | player 1 block | ...].
  const int nu_total = spec.total_input_dim();
  const int nz = opts.state_dim + nu_total;
  std::vector<int> offsets(opts.n_players);
  {
    int at = opts.state_dim;
    for (int p = 0; p < opts.n_players; ++p) {
      offsets[p] = at;
      at += spec.input_dims[p];
    }
  }
  for (int p = 0; p < opts.n_players; ++p) {
    MatrixXd c = MatrixXd::Zero(nz, opts.state_dim);
    c.topRows(opts.state_dim) = MatrixXd::Identity(opts.state_dim, opts.state_dim);
    spec.C.push_back(c);
  }
  spec.D.assign(opts.n_players, std::vector<MatrixXd>(opts.n_players));
  for (int p = 0; p < opts.n_players; ++p) {
    const int nu = spec.input_dims[p];
    MatrixXd own = std::sqrt(ubeta(rng)) *
                   (MatrixXd::Identity(nu, nu) + random_matrix(rng, nu, nu, 0.15));
    MatrixXd d = MatrixXd::Zero(nz, nu);
    d.middleRows(offsets[p], nu) = own;
    spec.D[p][p] = d;
    if (opts.coupling == CrossCoupling::kNone) continue;
    for (int q = 0; q < opts.n_players; ++q) {
      if (q == p) continue;
      const int nuq = spec.input_dims[q];
      MatrixXd cross = MatrixXd::Zero(nz, nuq);
      const int row = opts.coupling == CrossCoupling::kSharedBlock ? offsets[p]
                                                                   : offsets[q];
      const int rows = opts.coupling == CrossCoupling::kSharedBlock
                           ? std::min(spec.input_dims[p], nz - row)
                           : nuq;
      cross.middleRows(row, rows) = random_matrix(rng, rows, nuq, opts.cross_scale);
      spec.D[p][q] = cross;
    }
  }

  spec.state_constraints = Polyhedron::unconstrained(opts.state_dim);
  if (opts.state_constraints) {
    std::uniform_real_distribution<double> ug(4.0, 8.0);
    Polyhedron poly;
    RowVectorXd row = random_matrix(rng, 1, opts.state_dim, 0.4);
    poly.G.resize(2, opts.state_dim);
    poly.G << row, -row;
    poly.g = VectorXd::Constant(2, ug(rng));
    spec.state_constraints = poly;
  }
  for (int p = 0; p < opts.n_players; ++p) {
    if (!opts.input_constraints) {
      spec.input_constraints.push_back(Polyhedron::unconstrained(spec.input_dims[p]));
      continue;
    }
    std::uniform_real_distribution<double> ug(2.0, 6.0);
    Polyhedron poly;
    RowVectorXd row = random_matrix(rng, 1, spec.input_dims[p], 0.5);
    poly.G.resize(2, spec.input_dims[p]);
    poly.G << row, -row;
    poly.g = VectorXd::Constant(2, ug(rng));
    spec.input_constraints.push_back(poly);
  }

  if (opts.ellipsoid_noise) {
    MatrixXd r = random_matrix(rng, opts.state_dim, opts.state_dim, 0.4);
    spec.noise = NoiseModel::energy_ellipsoid(
        MatrixXd::Identity(opts.state_dim, opts.state_dim) + r * r.transpose());
  } else {
    spec.noise = NoiseModel::infinity_ball(
        MatrixXd::Identity(opts.state_dim, opts.state_dim));
  }
  spec.check_dimensions();
  return spec;
}

GameSpec random_scalar_duo(std::mt19937_64& rng, double a_magnitude) {
  RandomGameOptions opts;
  opts.n_players = 2;
  opts.state_dim = 1;
  opts.max_input_dim = 1;
  opts.coupling = CrossCoupling::kOrthogonalBlocks;
  GameSpec spec = random_game(rng, opts);
  std::uniform_real_distribution<double> ua(-a_magnitude, a_magnitude);
  spec.A(0, 0) = ua(rng);
  return spec;
}

}  // namespace sls::testing
