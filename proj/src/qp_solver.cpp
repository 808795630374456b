#include "sls/qp_solver.hpp"
#include <cstdio>
#include <cstdlib>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace sls::qp {

namespace {

enum class BlockKind { kEq, kIneq, kSoc, kBall };

struct Block {
  BlockKind kind;
  int start = 0;
  int size = 0;
  int soc_index = -1;
};

double inf_norm(const VectorXd& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

}  // namespace

void ConicProgram::validate() const {
  auto check = [&](bool ok, const char* what) {
    if (!ok) throw DimensionError(std::string("conic program: ") + what);
  };
  check(n >= 1, "needs at least one variable");
  check(Q.rows() == n && Q.cols() == n, "Q must be n x n");
  check(q.size() == n, "q must have length n");
  check(E.rows() == e.size() && (E.cols() == n || E.rows() == 0), "E/e shape mismatch");
  check(F.rows() == f.size() && (F.cols() == n || F.rows() == 0), "F/f shape mismatch");
  for (const auto& s : socs) {
    check(s.T.cols() == n, "soc tail must have n columns");
    check(s.t0.size() == s.T.rows(), "soc offset length mismatch");
    check(s.head.size() == n, "soc head must have length n");
  }
  if (ball) {
    check(ball->radius >= 0.0, "ball radius must be nonnegative");
    for (int i : ball->indices) check(i >= 0 && i < n, "ball index out of range");
  }
  // Q symmetry within tolerance.
  SparseMatrix d = SparseMatrix(Q.transpose()) - Q;
  double asym = 0.0, qmax = 0.0;
  for (int k = 0; k < d.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(d, k); it; ++it)
      asym = std::max(asym, std::abs(it.value()));
  for (int k = 0; k < Q.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(Q, k); it; ++it)
      qmax = std::max(qmax, std::abs(it.value()));
  if (asym > 1e-12 * (1.0 + qmax)) throw Error("conic program: Q is not symmetric");
}

struct Solver::Impl {
  SolverOptions opts;
  int n = 0;
  int m = 0;

  // Unscaled data. Matrices fixed for the solver's lifetime; vectors mutable.
  SparseMatrix Q;
  VectorXd q;
  SparseMatrix M;
  std::vector<Block> blocks;
  VectorXd cone_val;       // per row: e_i (eq), f_i (ineq), offsets (soc), 0 (ball)
  double ball_radius = 0.0;
  int n_eq = 0, n_ineq = 0;
  int ball_start = -1, ball_size = 0;

  // Ruiz scaling: z = D zbar, lambda = R lbar / c.
  VectorXd D, R;
  double c = 1.0;
  SparseMatrix Qs, Ms, MsT;
  VectorXd qs, cone_val_s;
  double ball_radius_s = 0.0;

  // Iterates (scaled space).
  VectorXd zb, yb, lb;
  bool have_iterates = false;

  VectorXd rho;  // per row, scaled-space penalty
  Eigen::SimplicialLDLT<SparseMatrix> kkt;
  bool pattern_ready = false;

  double data_norm = 1.0;  // for relative thresholds

  explicit Impl(const ConicProgram& prog, SolverOptions o) : opts(o) { build(prog); }

  void build(const ConicProgram& prog) {
    prog.validate();
    n = prog.n;
    Q = prog.Q;
    q = prog.q;

    std::vector<Eigen::Triplet<double>> trips;
    int row = 0;
    auto add_block = [&](BlockKind kind, int size, int soc_index) {
      blocks.push_back({kind, row, size, soc_index});
      row += size;
    };

    n_eq = static_cast<int>(prog.E.rows());
    if (n_eq > 0) {
      for (int k = 0; k < prog.E.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(prog.E, k); it; ++it)
          trips.emplace_back(row + static_cast<int>(it.row()),
                             static_cast<int>(it.col()), it.value());
      add_block(BlockKind::kEq, n_eq, -1);
    }
    n_ineq = static_cast<int>(prog.F.rows());
    if (n_ineq > 0) {
      for (int k = 0; k < prog.F.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(prog.F, k); it; ++it)
          trips.emplace_back(row + static_cast<int>(it.row()),
                             static_cast<int>(it.col()), it.value());
      add_block(BlockKind::kIneq, n_ineq, -1);
    }
    for (int s = 0; s < static_cast<int>(prog.socs.size()); ++s) {
      const auto& soc = prog.socs[s];
      const int rows = 1 + static_cast<int>(soc.T.rows());
      for (Eigen::SparseVector<double>::InnerIterator it(soc.head); it; ++it)
        trips.emplace_back(row, static_cast<int>(it.index()), it.value());
      for (int k = 0; k < soc.T.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(soc.T, k); it; ++it)
          trips.emplace_back(row + 1 + static_cast<int>(it.row()),
                             static_cast<int>(it.col()), it.value());
      add_block(BlockKind::kSoc, rows, s);
    }
    if (prog.ball) {
      ball_start = row;
      ball_size = static_cast<int>(prog.ball->indices.size());
      for (int i = 0; i < ball_size; ++i)
        trips.emplace_back(row + i, prog.ball->indices[i], 1.0);
      add_block(BlockKind::kBall, ball_size, -1);
      ball_radius = prog.ball->radius;
    }
    m = row;
    M.resize(m, n);
    M.setFromTriplets(trips.begin(), trips.end());
    M.makeCompressed();

    read_vectors(prog);

    double dn = inf_norm(q);
    for (int k = 0; k < Q.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(Q, k); it; ++it)
        dn = std::max(dn, std::abs(it.value()));
    for (int k = 0; k < M.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(M, k); it; ++it)
        dn = std::max(dn, std::abs(it.value()));
    data_norm = std::max(1.0, dn);

    compute_scaling();
    setup_rho();
    build_kkt(true);
  }

  void read_vectors(const ConicProgram& prog) {
    cone_val = VectorXd::Zero(m);
    q = prog.q;
    for (const auto& b : blocks) {
      switch (b.kind) {
        case BlockKind::kEq:
          cone_val.segment(b.start, b.size) = prog.e;
          break;
        case BlockKind::kIneq:
          cone_val.segment(b.start, b.size) = prog.f;
          break;
        case BlockKind::kSoc: {
          const auto& soc = prog.socs[b.soc_index];
          cone_val(b.start) = soc.head0;
          cone_val.segment(b.start + 1, b.size - 1) = soc.t0;
          break;
        }
        case BlockKind::kBall:
          ball_radius = prog.ball->radius;
          break;
      }
    }
    rescale_vectors();
  }

  void rescale_vectors() {
    if (D.size() == 0) return;  // scaling not computed yet
    qs = c * D.cwiseProduct(q);
    cone_val_s = R.cwiseProduct(cone_val);
    ball_radius_s = ball_radius * (ball_size > 0 ? R(ball_start) : 1.0);
  }

  void compute_scaling() {
    D = VectorXd::Ones(n);
    R = VectorXd::Ones(m);
    c = 1.0;
    if (!opts.scaling) {
      rescale_vectors();
      return;
    }

    // Ruiz equilibration on [Q M'; M 0], with one uniform factor per
    // soc/ball block so cones stay cones.
    for (int pass = 0; pass < opts.scaling_iters; ++pass) {
      VectorXd col_norm = VectorXd::Zero(n);
      for (int k = 0; k < Q.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(Q, k); it; ++it) {
          const double v = std::abs(c * D(it.row()) * D(it.col()) * it.value());
          col_norm(it.col()) = std::max(col_norm(it.col()), v);
        }
      VectorXd row_norm = VectorXd::Zero(m);
      for (int k = 0; k < M.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(M, k); it; ++it) {
          const double v = std::abs(R(it.row()) * D(it.col()) * it.value());
          col_norm(it.col()) = std::max(col_norm(it.col()), v);
          row_norm(it.row()) = std::max(row_norm(it.row()), v);
        }
      for (int j = 0; j < n; ++j)
        if (col_norm(j) > 1e-12) D(j) /= std::sqrt(col_norm(j));
      for (const auto& b : blocks) {
        if (b.kind == BlockKind::kEq || b.kind == BlockKind::kIneq) {
          for (int i = b.start; i < b.start + b.size; ++i)
            if (row_norm(i) > 1e-12) R(i) /= std::sqrt(row_norm(i));
        } else {
          double mx = 0.0;
          for (int i = b.start; i < b.start + b.size; ++i) mx = std::max(mx, row_norm(i));
          if (mx > 1e-12) {
            const double s = 1.0 / std::sqrt(mx);
            for (int i = b.start; i < b.start + b.size; ++i) R(i) *= s;
          }
        }
      }
      // Cost scaling toward unit-sized gradient data.
      VectorXd qcol = VectorXd::Zero(n);
      double qmean = 0.0;
      for (int k = 0; k < Q.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(Q, k); it; ++it)
          qcol(it.col()) = std::max(qcol(it.col()),
                                    std::abs(c * D(it.row()) * D(it.col()) * it.value()));
      qmean = n > 0 ? qcol.sum() / n : 0.0;
      const double qnorm = inf_norm((c * D.cwiseProduct(q)).eval());
      const double denom = std::max(qmean, qnorm);
      if (denom > 1e-12) c /= denom;
    }

    Qs = c * D.asDiagonal() * Q * D.asDiagonal();
    Ms = R.asDiagonal() * M * D.asDiagonal();
    MsT = Ms.transpose();
    rescale_vectors();
  }

  void setup_rho() {
    rho = VectorXd::Constant(m, opts.rho);
    for (const auto& b : blocks)
      if (b.kind == BlockKind::kEq)
        rho.segment(b.start, b.size).setConstant(opts.rho * opts.eq_rho_scale);
  }

  void build_kkt(bool analyze) {
    if (!opts.scaling || Qs.rows() == 0) {
      Qs = Q;
      Ms = M;
      MsT = SparseMatrix(M.transpose());
      rescale_vectors();
    }
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(Qs.nonZeros() + 2 * Ms.nonZeros() + n + m);
    for (int k = 0; k < Qs.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(Qs, k); it; ++it)
        trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                           it.value());
    for (int j = 0; j < n; ++j) trips.emplace_back(j, j, opts.sigma);
    for (int k = 0; k < Ms.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(Ms, k); it; ++it) {
        trips.emplace_back(n + static_cast<int>(it.row()), static_cast<int>(it.col()),
                           it.value());
        trips.emplace_back(static_cast<int>(it.col()), n + static_cast<int>(it.row()),
                           it.value());
      }
    for (int i = 0; i < m; ++i) trips.emplace_back(n + i, n + i, -1.0 / rho(i));

    SparseMatrix K(n + m, n + m);
    K.setFromTriplets(trips.begin(), trips.end());
    K.makeCompressed();
    if (analyze || !pattern_ready) {
      kkt.analyzePattern(K);
      pattern_ready = true;
    }
    kkt.factorize(K);
    if (kkt.info() != Eigen::Success)
      throw Error("qp solver: KKT factorization failed");
  }

  // ---- cone projection in scaled space ----
  void project(VectorXd& w) const {
    for (const auto& b : blocks) {
      switch (b.kind) {
        case BlockKind::kEq:
          w.segment(b.start, b.size) = cone_val_s.segment(b.start, b.size);
          break;
        case BlockKind::kIneq:
          for (int i = b.start; i < b.start + b.size; ++i)
            w(i) = std::min(w(i), cone_val_s(i));
          break;
        case BlockKind::kSoc: {
          // Shifted cone: y + off in K. Project y + off onto K, shift back.
          VectorXd v = w.segment(b.start, b.size) + cone_val_s.segment(b.start, b.size);
          const double h = v(0);
          const double t = v.tail(b.size - 1).norm();
          if (t <= h) {
            // inside
          } else if (t <= -h) {
            v.setZero();
          } else {
            const double s = 0.5 * (1.0 + h / t);
            v(0) = s * t;
            v.tail(b.size - 1) *= s;
          }
          w.segment(b.start, b.size) = v - cone_val_s.segment(b.start, b.size);
          break;
        }
        case BlockKind::kBall: {
          const double nrm = w.segment(b.start, b.size).norm();
          if (nrm > ball_radius_s && nrm > 0.0)
            w.segment(b.start, b.size) *= ball_radius_s / nrm;
          break;
        }
      }
    }
  }

  // ---- unscaled residuals ----
  struct FullResiduals {
    Residuals r;
    double stat_scale = 1.0, prim_scale = 1.0;
  };

  VectorXd unscale_z(const VectorXd& zbar) const { return D.cwiseProduct(zbar); }
  VectorXd unscale_y(const VectorXd& ybar) const { return ybar.cwiseQuotient(R); }
  VectorXd unscale_lambda(const VectorXd& lbar) const {
    return R.cwiseProduct(lbar) / c;
  }

  FullResiduals residuals(const VectorXd& z, const VectorXd& y,
                          const VectorXd& lambda) const {
    FullResiduals out;
    const VectorXd Qz = Q * z;
    const VectorXd Mtl = M.transpose() * lambda;
    const VectorXd stat = Qz + q + Mtl;
    const double sscale =
        1.0 + std::max({inf_norm(Qz), inf_norm(q), inf_norm(Mtl)});
    out.r.stationarity = inf_norm(stat) / sscale;
    out.stat_scale = sscale;

    const VectorXd Mz = M * z;
    const double pscale = 1.0 + std::max(inf_norm(Mz), inf_norm(y));
    const double lscale = 1.0 + inf_norm(lambda);
    double prim = inf_norm(Mz - y);
    double dual = 0.0, comp = 0.0;
    for (const auto& b : blocks) {
      switch (b.kind) {
        case BlockKind::kEq:
          prim = std::max(prim,
                          inf_norm(Mz.segment(b.start, b.size) -
                                   cone_val.segment(b.start, b.size)));
          break;
        case BlockKind::kIneq:
          for (int i = b.start; i < b.start + b.size; ++i) {
            const double slack = cone_val(i) - Mz(i);
            prim = std::max(prim, -slack);
            dual = std::max(dual, -lambda(i));
            comp = std::max(comp, std::abs(lambda(i) * slack) /
                                      (1.0 + std::abs(cone_val(i))));
          }
          break;
        case BlockKind::kSoc: {
          VectorXd v = Mz.segment(b.start, b.size) + cone_val.segment(b.start, b.size);
          prim = std::max(prim, std::max(0.0, v.tail(b.size - 1).norm() - v(0)));
          VectorXd lam = lambda.segment(b.start, b.size);
          // dual cone: -lam in K
          dual = std::max(dual, lam.tail(b.size - 1).norm() - (-lam(0)));
          comp = std::max(comp, std::abs(lam.dot(v)) / (1.0 + v.norm()));
          break;
        }
        case BlockKind::kBall: {
          const VectorXd yb = Mz.segment(b.start, b.size);
          prim = std::max(prim, yb.norm() - ball_radius);
          const VectorXd lam = lambda.segment(b.start, b.size);
          const double theta = lam.norm();
          comp = std::max(comp, std::abs(theta * (yb.norm() - ball_radius)) /
                                    (1.0 + ball_radius));
          // alignment of lam with yb (lam must be a nonnegative multiple)
          if (theta > 1e-12 * lscale)
            dual = std::max(dual, (lam * yb.norm() - yb * theta).norm() /
                                      (theta * (1.0 + yb.norm())));
          break;
        }
      }
    }
    out.r.primal = prim / pscale;
    out.r.dual = dual / lscale;
    out.r.complementarity = comp / lscale;
    out.prim_scale = pscale;
    return out;
  }

  bool meets_tolerance(const Residuals& r) const {
    return r.stationarity <= opts.tol_stationarity && r.primal <= opts.tol_primal &&
           r.dual <= opts.tol_dual && r.complementarity <= opts.tol_dual;
  }

  // ---- polish: equality-constrained QP on the detected active set. The
  // active norm ball is handled exactly through its scalar multiplier
  // (secular equation solved by safeguarded Newton); active second-order
  // cones are linearized and re-linearized until their directions settle.
  bool polish(VectorXd& z, VectorXd& y, VectorXd& lambda, Residuals& res) const {
    const VectorXd Mz = M * z;
    const double lam_scale = 1.0 + inf_norm(lambda);

    std::vector<int> active_ineq;
    std::vector<int> active_soc;
    bool ball_active = false;
    const Block* ball_block = nullptr;

    for (const auto& b : blocks) {
      if (b.kind == BlockKind::kIneq) {
        for (int i = b.start; i < b.start + b.size; ++i) {
          const double slack = cone_val(i) - Mz(i);
          if (lambda(i) > 1e-10 * lam_scale || slack < 1e-8 * (1.0 + std::abs(cone_val(i))))
            active_ineq.push_back(i);
        }
      } else if (b.kind == BlockKind::kSoc) {
        const VectorXd v = Mz.segment(b.start, b.size) + cone_val.segment(b.start, b.size);
        const double gap = v(0) - v.tail(b.size - 1).norm();
        const double lnorm = lambda.segment(b.start, b.size).norm();
        if (lnorm > 1e-10 * lam_scale || gap < 1e-8 * (1.0 + std::abs(v(0))))
          active_soc.push_back(static_cast<int>(&b - blocks.data()));
      } else if (b.kind == BlockKind::kBall) {
        // The secular search below decides for itself whether the ball binds.
        ball_block = &b;
        ball_active = true;
      }
    }

    const SparseMatrix Mt = M.transpose();

    // Rescaling that leaves the minimizer unchanged but keeps the
    // no-pivoting factorization well conditioned.
    double obj_scale = inf_norm(q);
    for (int k = 0; k < Q.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(Q, k); it; ++it)
        obj_scale = std::max(obj_scale, std::abs(it.value()));
    obj_scale = std::max(obj_scale, 1.0);

    struct SocLin {
      int block;
      VectorXd that;  // empty = degenerate vertex, block pinned to the origin
    };
    std::vector<SocLin> soc_lins;
    for (int bi : active_soc) {
      const auto& b = blocks[bi];
      const VectorXd v = Mz.segment(b.start, b.size) + cone_val.segment(b.start, b.size);
      const VectorXd tail = v.tail(b.size - 1);
      if (tail.norm() < 1e-12 * (1.0 + std::abs(v(0))))
        soc_lins.push_back({bi, VectorXd()});
      else
        soc_lins.push_back({bi, tail.normalized()});
    }

    enum class RowKind { kEqRow, kIneqRow, kSocPin, kSocLin };
    struct RowRef {
      RowKind kind;
      int index;
    };
    std::vector<RowRef> row_refs;
    std::vector<double> row_scale;

    // Ball variables enter the quadratic term with multiplier theta.
    std::vector<int> ball_vars;
    if (ball_block)
      for (int k = 0; k < ball_block->size; ++k)
        for (SparseMatrix::InnerIterator it(Mt, ball_block->start + k); it; ++it)
          ball_vars.push_back(static_cast<int>(it.row()));

    VectorXd zp, nu;
    int grow = 0;
    double theta = 0.0;  // ball multiplier in the squared-norm form
    std::vector<SocLin> used_lins;
    for (int relin = 0; relin < 20; ++relin) {
      used_lins = soc_lins;
      std::vector<Eigen::Triplet<double>> trips;
      std::vector<double> h;
      row_refs.clear();
      row_scale.clear();
      grow = 0;
      auto add_m_row = [&](int i, double rhs, RowKind kind) {
        double mx = 0.0;
        for (SparseMatrix::InnerIterator it(Mt, i); it; ++it)
          mx = std::max(mx, std::abs(it.value()));
        if (mx <= 1e-14) return std::abs(rhs) <= 1e-12;  // vacuous row
        for (SparseMatrix::InnerIterator it(Mt, i); it; ++it)
          trips.emplace_back(grow, static_cast<int>(it.row()), it.value() / mx);
        h.push_back(rhs / mx);
        row_scale.push_back(mx);
        row_refs.push_back({kind, i});
        ++grow;
        return true;
      };

      bool consistent = true;
      for (const auto& b : blocks)
        if (b.kind == BlockKind::kEq)
          for (int i = b.start; i < b.start + b.size; ++i)
            consistent = consistent && add_m_row(i, cone_val(i), RowKind::kEqRow);
      if (!consistent) return false;
      for (int i : active_ineq)
        if (!add_m_row(i, cone_val(i), RowKind::kIneqRow)) return false;

      for (size_t si = 0; si < soc_lins.size(); ++si) {
        const auto& sl = soc_lins[si];
        const auto& b = blocks[sl.block];
        if (sl.that.size() == 0) {
          for (int i = b.start; i < b.start + b.size; ++i)
            if (!add_m_row(i, -cone_val(i), RowKind::kSocPin)) return false;
          continue;
        }
        Eigen::SparseVector<double> row(n);
        for (SparseMatrix::InnerIterator it(Mt, b.start); it; ++it)
          row.coeffRef(it.row()) -= it.value();
        for (int k = 1; k < b.size; ++k)
          for (SparseMatrix::InnerIterator it(Mt, b.start + k); it; ++it)
            row.coeffRef(it.row()) += sl.that(k - 1) * it.value();
        double mx = 0.0;
        for (Eigen::SparseVector<double>::InnerIterator it(row); it; ++it)
          mx = std::max(mx, std::abs(it.value()));
        if (mx <= 1e-14) return false;
        for (Eigen::SparseVector<double>::InnerIterator it(row); it; ++it)
          trips.emplace_back(grow, static_cast<int>(it.index()), it.value() / mx);
        h.push_back((cone_val(b.start) -
                     sl.that.dot(cone_val.segment(b.start + 1, b.size - 1))) /
                    mx);
        row_scale.push_back(mx);
        row_refs.push_back({RowKind::kSocLin, static_cast<int>(si)});
        ++grow;
      }

      SparseMatrix G(grow, n);
      G.setFromTriplets(trips.begin(), trips.end());
      G.makeCompressed();

      const double delta = 1e-9;
      Eigen::SimplicialLDLT<SparseMatrix> fact;
      bool analyzed = false;
      auto factorize = [&](double th) {
        std::vector<Eigen::Triplet<double>> kt;
        for (int k = 0; k < Q.outerSize(); ++k)
          for (SparseMatrix::InnerIterator it(Q, k); it; ++it)
            kt.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                            it.value() / obj_scale);
        for (int v : ball_vars) kt.emplace_back(v, v, th);
        for (int j = 0; j < n; ++j) kt.emplace_back(j, j, delta);
        for (int k = 0; k < G.outerSize(); ++k)
          for (SparseMatrix::InnerIterator it(G, k); it; ++it) {
            kt.emplace_back(n + static_cast<int>(it.row()), static_cast<int>(it.col()),
                            it.value());
            kt.emplace_back(static_cast<int>(it.col()), n + static_cast<int>(it.row()),
                            it.value());
          }
        for (int i = 0; i < grow; ++i) kt.emplace_back(n + i, n + i, -delta);
        SparseMatrix K(n + grow, n + grow);
        K.setFromTriplets(kt.begin(), kt.end());
        K.makeCompressed();
        if (!analyzed) {
          fact.analyzePattern(K);
          analyzed = true;
        }
        fact.factorize(K);
        return fact.info() == Eigen::Success;
      };
      VectorXd rhs(n + grow);
      rhs.head(n) = -q / obj_scale;
      for (int i = 0; i < grow; ++i) rhs(n + i) = h[i];
      auto solve_at = [&](double th, VectorXd& out) {
        if (!factorize(th)) return false;
        out = fact.solve(rhs);
        for (int pass = 0; pass < 5; ++pass) {
          VectorXd resid = rhs;
          resid.head(n) -= Q * out.head(n) / obj_scale + G.transpose() * out.tail(grow);
          for (int v : ball_vars) resid(v) -= th * out(v);
          resid.tail(grow) -= G * out.head(n);
          out += fact.solve(resid);
        }
        return true;
      };
      auto ball_norm = [&](const VectorXd& sol) {
        double s = 0.0;
        for (int v : ball_vars) s += sol(v) * sol(v);
        return std::sqrt(s);
      };

      VectorXd sol;
      if (!solve_at(theta, sol)) return false;

      if (ball_active) {
        // phi(theta) = ||z_ball(theta)|| - r is decreasing; find its root.
        double phi = ball_norm(sol) - ball_radius;
        if (theta == 0.0 && phi <= 1e-12 * (1.0 + ball_radius)) {
          ball_active = false;  // ball not binding after all
        } else {
          double lo = 0.0, hi = theta > 0.0 ? theta : 1.0;
          VectorXd sol_hi;
          if (phi > 0.0) {
            for (int grow_it = 0; grow_it < 60; ++grow_it) {
              if (hi > 1e12) return false;  // sliver geometry, duals beyond double
              if (!solve_at(hi, sol_hi)) return false;
              if (ball_norm(sol_hi) - ball_radius <= 0.0) break;
              lo = hi;
              hi *= 4.0;
            }
          } else {
            hi = theta;
            lo = 0.0;
          }
          double th = 0.5 * (lo + hi);
          for (int newton = 0; newton < 60; ++newton) {
            if (!solve_at(th, sol)) return false;
            const double nrm = ball_norm(sol);
            phi = nrm - ball_radius;
            if (std::abs(phi) <= 1e-12 * (1.0 + ball_radius)) break;
            if (phi > 0.0)
              lo = th;
            else
              hi = th;
            // Newton step on phi; derivative via one extra solve.
            VectorXd dir = VectorXd::Zero(n + grow);
            for (int v : ball_vars) dir(v) = sol(v);
            const VectorXd dsol = -fact.solve(dir);
            double dnrm = 0.0;
            for (size_t kk = 0; kk < ball_vars.size(); ++kk)
              dnrm += sol(ball_vars[kk]) * dsol(ball_vars[kk]);
            dnrm /= std::max(nrm, 1e-300);
            double next = th - phi / std::min(dnrm, -1e-300);
            if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
            th = next;
          }
          theta = th;
        }
      }
      zp = sol.head(n);
      nu = sol.tail(grow);
      for (int i = 0; i < grow; ++i) nu(i) *= obj_scale / row_scale[i];

      // Re-linearize the active cones at the new point (damped).
      const double damp = relin < 2 ? 1.0 : 0.5;
      const VectorXd Mzp = M * zp;
      double shift = 0.0;
      for (auto& sl : soc_lins) {
        if (sl.that.size() == 0) continue;
        const auto& b = blocks[sl.block];
        const VectorXd tail = Mzp.segment(b.start + 1, b.size - 1) +
                              cone_val.segment(b.start + 1, b.size - 1);
        if (tail.norm() < 1e-14) continue;
        VectorXd next = sl.that + damp * (tail.normalized() - sl.that);
        if (next.norm() < 1e-14) continue;
        next.normalize();
        shift = std::max(shift, (next - sl.that).norm());
        sl.that = next;
      }
      if (shift < 1e-13) break;
    }

    // Rebuild block duals from the rows as last solved.
    VectorXd lp = VectorXd::Zero(m);
    for (int i = 0; i < grow; ++i) {
      const RowRef& ref = row_refs[i];
      switch (ref.kind) {
        case RowKind::kEqRow:
        case RowKind::kIneqRow:
        case RowKind::kSocPin:
          lp(ref.index) = nu(i);
          break;
        case RowKind::kSocLin: {
          const auto& sl = used_lins[ref.index];
          const auto& b = blocks[sl.block];
          lp(b.start) = -nu(i);
          lp.segment(b.start + 1, b.size - 1) = nu(i) * sl.that;
          break;
        }
      }
    }
    if (ball_block && theta > 0.0) {
      // Penalty multiplier theta on the squared norm maps to the cone dual
      // theta * y evaluated at the polished point, scaled back to the
      // original objective.
      for (int k = 0; k < ball_block->size; ++k) {
        double yk = 0.0;
        for (SparseMatrix::InnerIterator it(Mt, ball_block->start + k); it; ++it)
          yk += it.value() * zp(it.row());
        lp(ball_block->start + k) = obj_scale * theta * yk;
      }
    }

    const auto full = residuals(zp, M * zp, lp);
    if (std::getenv("SLS_QP_TRACE"))
      std::fprintf(stderr,
                   "  polish: rows=%d ineq=%zu soc=%zu ball=%d theta=%.3e -> "
                   "stat=%.2e prim=%.2e dual=%.2e comp=%.2e\n",
                   grow, active_ineq.size(), soc_lins.size(), ball_active ? 1 : 0,
                   theta, full.r.stationarity, full.r.primal, full.r.dual,
                   full.r.complementarity);
    if (!meets_tolerance(full.r)) return false;

    z = zp;
    y = M * z;
    lambda = lp;
    res = full.r;
    return true;
  }

  SolveResult run() {
    SolveResult result;
    if (!have_iterates) {
      zb = VectorXd::Zero(n);
      yb = VectorXd::Zero(m);
      lb = VectorXd::Zero(m);
      project(yb);
      have_iterates = true;
    }

    VectorXd lambda_prev_check = unscale_lambda(lb);
    int infeas_streak = 0;
    double polish_trigger = 1e-3;
    // With no inequalities and no cones the active set is known outright and
    // the polish step solves the problem exactly; try it before iterating.
    bool eager_polish = opts.polish && n_ineq == 0;
    for (const auto& b : blocks)
      if (b.kind == BlockKind::kSoc) eager_polish = false;
    Residuals last_res;
    int iter = 0;

    if (eager_polish) {
      VectorXd z = unscale_z(zb);
      VectorXd y = unscale_y(yb);
      VectorXd lambda = unscale_lambda(lb);
      Residuals rp;
      if (polish(z, y, lambda, rp)) {
        result.polished = true;
        finish(result, z, lambda, rp, SolveStatus::kOptimal, 0);
        return result;
      }
    }

    VectorXd rhs(n + m), w(m);
    for (iter = 1; iter <= opts.max_iters; ++iter) {
      rhs.head(n) = opts.sigma * zb - qs;
      rhs.tail(m) = yb - lb.cwiseQuotient(rho);
      const VectorXd sol = kkt.solve(rhs);
      const auto xt = sol.head(n);
      const auto nu = sol.tail(m);
      const VectorXd yt = yb + (nu - lb).cwiseQuotient(rho);

      zb = opts.alpha * xt + (1.0 - opts.alpha) * zb;
      w = opts.alpha * yt + (1.0 - opts.alpha) * yb + lb.cwiseQuotient(rho);
      yb = w;
      project(yb);
      lb = rho.cwiseProduct(w - yb);  // w already carries + lambda / rho

      if (iter % opts.check_interval != 0 && iter != opts.max_iters) continue;

      VectorXd z = unscale_z(zb);
      VectorXd y = unscale_y(yb);
      VectorXd lambda = unscale_lambda(lb);
      auto full = residuals(z, y, lambda);
      last_res = full.r;

      if (std::getenv("SLS_QP_TRACE") && iter % (25 * opts.check_interval) == 0) {
        const VectorXd mz = M * z;
        double worst = 0.0;
        int worst_row = -1;
        for (const auto& b : blocks) {
          if (b.kind != BlockKind::kEq) continue;
          for (int i = b.start; i < b.start + b.size; ++i) {
            const double viol = std::abs(mz(i) - cone_val(i));
            if (viol > worst) {
              worst = viol;
              worst_row = i;
            }
          }
        }
        double ball_viol = 0.0;
        for (const auto& b : blocks)
          if (b.kind == BlockKind::kBall)
            ball_viol = mz.segment(b.start, b.size).norm() - ball_radius;
        std::fprintf(stderr,
                     "iter=%6d rho=%.2e stat=%.2e prim=%.2e dual=%.2e comp=%.2e "
                     "eq_viol=%.2e@%d ball_viol=%.2e |z|=%.2e |lam|=%.2e\n",
                     iter, opts.rho, full.r.stationarity, full.r.primal, full.r.dual,
                     full.r.complementarity, worst, worst_row, ball_viol,
                     inf_norm(z), inf_norm(lambda));
      }

      if (meets_tolerance(full.r)) {
        if (opts.polish && polish(z, y, lambda, full.r)) result.polished = true;
        finish(result, z, lambda, full.r, SolveStatus::kOptimal, iter);
        return result;
      }

      // Early polish attempt once the iterate is in the right neighborhood.
      const double coarse = std::max({full.r.stationarity, full.r.primal, full.r.dual,
                                      full.r.complementarity});
      if (opts.polish && coarse < polish_trigger) {
        VectorXd zp = z, yp = y, lp = lambda;
        Residuals rp;
        if (polish(zp, yp, lp, rp)) {
          result.polished = true;
          finish(result, zp, lp, rp, SolveStatus::kOptimal, iter);
          return result;
        }
        polish_trigger *= 0.1;  // refine further before retrying
      }

      // Primal infeasibility certificate, sustained over several checks.
      const VectorXd dl = lambda - lambda_prev_check;
      lambda_prev_check = lambda;
      if (certifies_infeasibility(dl)) {
        infeas_streak += opts.check_interval;
        if (infeas_streak >= opts.infeasibility_persistence) {
          finish(result, unscale_z(zb), lambda, full.r, SolveStatus::kInfeasible, iter);
          return result;
        }
      } else {
        infeas_streak = 0;
      }

      if (opts.adaptive_rho) maybe_adapt_rho(full);
    }

    VectorXd z = unscale_z(zb);
    VectorXd lambda = unscale_lambda(lb);
    finish(result, z, lambda, last_res, SolveStatus::kMaxIters, opts.max_iters);
    return result;
  }

  bool certifies_infeasibility(const VectorXd& dl) const {
    const double nrm = inf_norm(dl);
    if (nrm < 1e-12) return false;
    const VectorXd d = dl / nrm;
    const double tol = 1e-9 * data_norm;
    if (inf_norm(M.transpose() * d) > tol) return false;

    double support = 0.0;
    for (const auto& b : blocks) {
      switch (b.kind) {
        case BlockKind::kEq:
          support += cone_val.segment(b.start, b.size).dot(d.segment(b.start, b.size));
          break;
        case BlockKind::kIneq:
          for (int i = b.start; i < b.start + b.size; ++i) {
            if (d(i) < -1e-9) return false;  // not in the recession normal cone
            support += cone_val(i) * std::max(d(i), 0.0);
          }
          break;
        case BlockKind::kSoc: {
          const VectorXd db = d.segment(b.start, b.size);
          if (db.tail(b.size - 1).norm() > -db(0) + 1e-9) return false;
          support -= cone_val.segment(b.start, b.size).dot(db);
          break;
        }
        case BlockKind::kBall:
          support += ball_radius * d.segment(b.start, b.size).norm();
          break;
      }
    }
    return support < -1e-9;
  }

  void maybe_adapt_rho(const FullResiduals& full) {
    const double rp = full.r.primal;
    const double rd = std::max(full.r.stationarity, 1e-16);
    // Near convergence the ratio is noise; leave the factorization alone.
    if (rp < 100 * opts.tol_primal && rd < 100 * opts.tol_stationarity) return;
    const double ratio = std::sqrt(rp / rd);
    if (ratio > 5.0 || ratio < 0.2) {
      const double factor = std::clamp(ratio, 1e-4, 1e4);
      const double new_rho = std::clamp(opts.rho * factor, 1e-6, 1e6);
      if (new_rho != opts.rho) {
        opts.rho = new_rho;
        setup_rho();
        build_kkt(false);
      }
    }
  }

  void finish(SolveResult& out, const VectorXd& z, const VectorXd& lambda,
              const Residuals& res, SolveStatus status, int iters) const {
    out.z = z;
    out.status = status;
    out.residuals = res;
    out.iterations = iters;
    out.dual_eq = VectorXd::Zero(n_eq);
    out.dual_ineq = VectorXd::Zero(n_ineq);
    for (const auto& b : blocks) {
      switch (b.kind) {
        case BlockKind::kEq:
          out.dual_eq = lambda.segment(b.start, b.size);
          break;
        case BlockKind::kIneq:
          out.dual_ineq = lambda.segment(b.start, b.size);
          break;
        case BlockKind::kSoc:
          out.dual_soc.push_back(lambda.segment(b.start, b.size));
          break;
        case BlockKind::kBall:
          out.dual_ball = lambda.segment(b.start, b.size);
          out.ball_multiplier = out.dual_ball.norm();
          break;
      }
    }
  }
};

Solver::Solver(const ConicProgram& prog, SolverOptions opts)
    : impl_(std::make_unique<Impl>(prog, opts)) {}
Solver::~Solver() = default;
Solver::Solver(Solver&&) noexcept = default;
Solver& Solver::operator=(Solver&&) noexcept = default;

void Solver::update_vectors(const ConicProgram& prog) { impl_->read_vectors(prog); }

SolveResult Solver::solve() { return impl_->run(); }

void Solver::warm_start(const VectorXd& z, const VectorXd& lambda) {
  impl_->zb = z.cwiseQuotient(impl_->D);
  impl_->yb = impl_->Ms * impl_->zb;
  impl_->project(impl_->yb);
  impl_->lb = impl_->c * lambda.cwiseQuotient(impl_->R);
  impl_->have_iterates = true;
}

void Solver::clear_warm_start() { impl_->have_iterates = false; }

int Solver::constraint_rows() const { return impl_->m; }

SolveResult solve(const ConicProgram& prog, SolverOptions opts) {
  Solver s(prog, opts);
  return s.solve();
}

SolveResult project_feasible(const ConicProgram& prog, const VectorXd& reference,
                             SolverOptions opts) {
  if (reference.size() > prog.n)
    throw DimensionError("project_feasible: reference longer than variable vector");
  ConicProgram proj = prog;
  std::vector<Eigen::Triplet<double>> trips;
  for (int i = 0; i < reference.size(); ++i) trips.emplace_back(i, i, 1.0);
  proj.Q.resize(prog.n, prog.n);
  proj.Q.setFromTriplets(trips.begin(), trips.end());
  proj.q = VectorXd::Zero(prog.n);
  proj.q.head(reference.size()) = -reference;
  return solve(proj, opts);
}

}  // namespace sls::qp
