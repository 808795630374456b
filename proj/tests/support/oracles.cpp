#include "support/oracles.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace sls::testing {

std::vector<VectorXd> convolve_loop(const FirKernel& k, const std::vector<VectorXd>& w) {
  std::vector<VectorXd> out;
  for (int t = 0; t < static_cast<int>(w.size()); ++t) {
    VectorXd y = VectorXd::Zero(k.rows());
    for (int n = 1; n <= k.horizon(); ++n) {
      const int src = t - n + 1;
      if (src < 0) break;
      y += k.tap(n) * w[src];
    }
    out.push_back(y);
  }
  return out;
}

double vertex_worst_case(const RowVectorXd& row, const std::vector<MatrixXd>& taps,
                         const MatrixXd& P) {
  const MatrixXd pinv = P.fullPivLu().inverse();
  const int m = static_cast<int>(P.rows());
  double total = 0.0;
  for (const auto& tap : taps) {
    const RowVectorXd base = row * tap * pinv;
    double best = -std::numeric_limits<double>::infinity();
    for (long mask = 0; mask < (1L << m); ++mask) {
      double v = 0.0;
      for (int i = 0; i < m; ++i) v += (mask >> i & 1) ? base(i) : -base(i);
      best = std::max(best, v);
    }
    total += best;
  }
  return total;
}

std::optional<ActiveSetSolution> active_set_oracle(const MatrixXd& Q, const VectorXd& q,
                                                   const MatrixXd& F, const VectorXd& f) {
  const int n = static_cast<int>(Q.rows());
  const int m = static_cast<int>(F.rows());
  if (m > 20) throw std::runtime_error("active_set_oracle: too many rows");

  std::optional<ActiveSetSolution> best;
  for (long mask = 0; mask < (1L << m); ++mask) {
    std::vector<int> act;
    for (int i = 0; i < m; ++i)
      if (mask >> i & 1) act.push_back(i);
    const int na = static_cast<int>(act.size());
    MatrixXd kkt(n + na, n + na);
    kkt.setZero();
    kkt.topLeftCorner(n, n) = Q;
    for (int i = 0; i < na; ++i) {
      kkt.block(n + i, 0, 1, n) = F.row(act[i]);
      kkt.block(0, n + i, n, 1) = F.row(act[i]).transpose();
    }
    VectorXd rhs(n + na);
    rhs.head(n) = -q;
    for (int i = 0; i < na; ++i) rhs(n + i) = f(act[i]);

    Eigen::FullPivLU<MatrixXd> lu(kkt);
    if (!lu.isInvertible()) continue;
    const VectorXd sol = lu.solve(rhs);
    const VectorXd x = sol.head(n);
    const VectorXd lambda = sol.tail(na);

    bool ok = lambda.size() == 0 || lambda.minCoeff() >= -1e-9;
    for (int i = 0; ok && i < m; ++i)
      if (F.row(i) * x - f(i) > 1e-9) ok = false;
    if (!ok) continue;

    const double obj = 0.5 * x.dot(Q * x) + q.dot(x);
    if (!best || obj < best->objective - 1e-12) best = ActiveSetSolution{x, obj};
  }
  return best;
}

MatrixXd finite_difference_hessian(const std::function<double(const VectorXd&)>& f,
                                   int dim, double step) {
  MatrixXd h(dim, dim);
  VectorXd x = VectorXd::Zero(dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j <= i; ++j) {
      auto at = [&](double si, double sj) {
        VectorXd y = x;
        y(i) += si * step;
        y(j) += sj * step;
        return f(y);
      };
      const double v =
          (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * step * step);
      h(i, j) = v;
      h(j, i) = v;
    }
  return h;
}

VectorXd finite_difference_gradient(const std::function<double(const VectorXd&)>& f,
                                    const VectorXd& at, double step) {
  VectorXd g(at.size());
  for (int i = 0; i < at.size(); ++i) {
    VectorXd hi = at, lo = at;
    hi(i) += step;
    lo(i) -= step;
    g(i) = (f(hi) - f(lo)) / (2.0 * step);
  }
  return g;
}

VectorXd flatten_profile(const std::vector<FirKernel>& kernels) {
  int total = 0;
  for (const auto& k : kernels) total += k.horizon() * k.rows() * k.cols();
  VectorXd v(total);
  int at = 0;
  for (const auto& k : kernels)
    for (int j = 0; j < k.cols(); ++j)
      for (int n = 1; n <= k.horizon(); ++n)
        for (int r = 0; r < k.rows(); ++r) v(at++) = k.tap(n)(r, j);
  return v;
}

std::vector<FirKernel> unflatten_profile(const GameSpec& spec, int horizon,
                                         const VectorXd& v) {
  std::vector<FirKernel> kernels;
  int at = 0;
  for (int p = 0; p < spec.n_players; ++p) {
    FirKernel k(spec.input_dims[p], spec.state_dim, horizon - 1);
    for (int j = 0; j < spec.state_dim; ++j)
      for (int n = 1; n < horizon; ++n)
        for (int r = 0; r < spec.input_dims[p]; ++r) k.tap(n)(r, j) = v(at++);
    kernels.push_back(std::move(k));
  }
  return kernels;
}

AffineBrd affine_brd(const GameSpec& spec, const HessianBlocks& hessians, double eta) {
  const int np = spec.n_players;
  const int horizon = hessians.horizon;
  const int nx = spec.state_dim;

  std::vector<int> sizes(np), bases(np);
  int total = 0;
  for (int p = 0; p < np; ++p) {
    sizes[p] = (horizon - 1) * spec.input_dims[p];
    bases[p] = total;
    total += sizes[p] * nx;
  }

  AffineBrd out;
  out.a_br = MatrixXd::Zero(total, total);
  out.b_br = VectorXd::Zero(total);
  for (int p = 0; p < np; ++p) {
    const MatrixXd hinv = hessians.H[p][p].ldlt().solve(
        MatrixXd::Identity(sizes[p], sizes[p]));
    for (int j = 0; j < nx; ++j) {
      for (int q = 0; q < np; ++q) {
        if (q == p) continue;
        out.a_br.block(bases[p] + j * sizes[p], bases[q] + j * sizes[q], sizes[p],
                       sizes[q]) = -hinv * hessians.H[p][q];
      }
      out.b_br.segment(bases[p] + j * sizes[p], sizes[p]) =
          -hinv * hessians.h0[p].col(j);
    }
  }
  out.a_t = (1.0 - eta) * MatrixXd::Identity(total, total) + eta * out.a_br;
  out.b_t = eta * out.b_br;
  out.fixed_point =
      (MatrixXd::Identity(total, total) - out.a_t).fullPivLu().solve(out.b_t);
  return out;
}

std::optional<std::vector<FirKernel>> least_norm_deadbeat(const GameSpec& spec,
                                                          int horizon) {
  const int nx = spec.state_dim;
  std::vector<MatrixXd> apow{MatrixXd::Identity(nx, nx)};
  for (int k = 1; k < horizon; ++k) apow.push_back(apow.back() * spec.A);

  int cols = 0;
  for (int p = 0; p < spec.n_players; ++p) cols += (horizon - 1) * spec.input_dims[p];

  // One linear system per state column: rows are Phi_{x,N} entries.
  MatrixXd a = MatrixXd::Zero(nx, cols);
  int at = 0;
  for (int p = 0; p < spec.n_players; ++p)
    for (int m = 1; m < horizon; ++m) {
      a.middleCols(at, spec.input_dims[p]) = apow[horizon - 1 - m] * spec.B[p];
      at += spec.input_dims[p];
    }

  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(a);
  std::vector<FirKernel> kernels;
  for (int p = 0; p < spec.n_players; ++p)
    kernels.push_back(FirKernel::zero(spec.input_dims[p], nx, horizon - 1));

  for (int j = 0; j < nx; ++j) {
    const VectorXd rhs = -apow[horizon - 1].col(j);
    const VectorXd sol = cod.solve(rhs);
    if ((a * sol - rhs).norm() > 1e-8 * (1.0 + rhs.norm())) return std::nullopt;
    int col = 0;
    for (int p = 0; p < spec.n_players; ++p)
      for (int m = 1; m < horizon; ++m)
        for (int r = 0; r < spec.input_dims[p]; ++r)
          kernels[p].tap(m)(r, j) = sol(col++);
  }
  return kernels;
}

}  // namespace sls::testing
