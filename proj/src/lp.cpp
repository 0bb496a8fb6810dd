#include "mbb/lp.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "mbb/errors.hpp"

namespace mbb {

void SparseColumns::add_column(std::vector<int> rows, std::vector<double> vals) {
  if (rows.size() != vals.size()) throw InvalidArgument("add_column: size mismatch");
  for (int r : rows) {
    if (r < 0 || r >= n_rows) throw InvalidArgument("add_column: row out of range");
  }
  cols.push_back({std::move(rows), std::move(vals)});
}

namespace {

class Simplex {
 public:
  Simplex(const SparseColumns& A, const std::vector<double>& b, const LpOptions& opts)
      : A_(A), opts_(opts), m_(A.n_rows), n_(A.n_cols()) {
    sign_.resize(static_cast<std::size_t>(m_));
    b_ = Eigen::VectorXd(m_);
    for (int i = 0; i < m_; ++i) {
      sign_[static_cast<std::size_t>(i)] = b[static_cast<std::size_t>(i)] < 0.0 ? -1.0 : 1.0;
      b_(i) = std::abs(b[static_cast<std::size_t>(i)]);
    }
    basis_.resize(static_cast<std::size_t>(m_));
    in_basis_.assign(static_cast<std::size_t>(n_ + m_), -1);
    for (int i = 0; i < m_; ++i) {
      basis_[static_cast<std::size_t>(i)] = n_ + i;
      in_basis_[static_cast<std::size_t>(n_ + i)] = i;
    }
    binv_ = Eigen::MatrixXd::Identity(m_, m_);
    xb_ = b_;
    cost_.assign(static_cast<std::size_t>(n_ + m_), 0.0);
  }

  LpResult run(const std::vector<double>& c) {
    LpResult res;
    for (int i = 0; i < m_; ++i) cost_[static_cast<std::size_t>(n_ + i)] = 1.0;
    LpStatus st = iterate(/*allow_artificial=*/true);
    res.iterations = iterations_;
    if (st == LpStatus::IterationLimit) {
      res.status = st;
      return res;
    }
    double infeas = 0.0;
    for (int i = 0; i < m_; ++i) {
      if (basis_[static_cast<std::size_t>(i)] >= n_) infeas += std::max(xb_(i), 0.0);
    }
    res.phase1_infeasibility = infeas;
    if (infeas > opts_.feasibility_tol * std::max(1.0, b_.lpNorm<1>())) {
      res.status = LpStatus::Infeasible;
      return res;
    }
    drive_out_artificials();

    for (int j = 0; j < n_; ++j) cost_[static_cast<std::size_t>(j)] = c[static_cast<std::size_t>(j)];
    for (int i = 0; i < m_; ++i) cost_[static_cast<std::size_t>(n_ + i)] = 0.0;
    st = iterate(/*allow_artificial=*/false);
    res.iterations = iterations_;
    res.status = st;
    if (st != LpStatus::Optimal) return res;

    refactor();
    res.x.assign(static_cast<std::size_t>(n_), 0.0);
    for (int i = 0; i < m_; ++i) {
      const int v = basis_[static_cast<std::size_t>(i)];
      if (v < n_) res.x[static_cast<std::size_t>(v)] = std::max(xb_(i), 0.0);
    }
    const Eigen::VectorXd y = dual_vector();
    res.y.resize(static_cast<std::size_t>(m_));
    res.dual_objective = 0.0;
    for (int i = 0; i < m_; ++i) {
      res.y[static_cast<std::size_t>(i)] = sign_[static_cast<std::size_t>(i)] * y(i);
      res.dual_objective += b_(i) * y(i);
    }
    res.objective = 0.0;
    for (int j = 0; j < n_; ++j) res.objective += c[static_cast<std::size_t>(j)] * res.x[static_cast<std::size_t>(j)];
    return res;
  }

 private:
  // Entry (row r) of the signed constraint column for variable v.
  template <typename F>
  void for_column(int v, F&& f) const {
    if (v >= n_) {
      f(v - n_, 1.0);
      return;
    }
    const auto& col = A_.cols[static_cast<std::size_t>(v)];
    for (std::size_t k = 0; k < col.rows.size(); ++k) {
      const int r = col.rows[k];
      f(r, sign_[static_cast<std::size_t>(r)] * col.vals[k]);
    }
  }

  Eigen::VectorXd dual_vector() const {
    Eigen::VectorXd cb(m_);
    for (int i = 0; i < m_; ++i) cb(i) = cost_[static_cast<std::size_t>(basis_[static_cast<std::size_t>(i)])];
    return binv_.transpose() * cb;
  }

  Eigen::VectorXd column_in_basis(int v) const {
    Eigen::VectorXd u = Eigen::VectorXd::Zero(m_);
    for_column(v, [&](int r, double a) { u += a * binv_.col(r); });
    return u;
  }

  void pivot(int r, int entering, const Eigen::VectorXd& u) {
    const double theta = xb_(r) / u(r);
    xb_ -= theta * u;
    xb_(r) = theta;
    const Eigen::RowVectorXd pr = binv_.row(r) / u(r);
    binv_.noalias() -= u * pr;
    binv_.row(r) = pr;
    const int leaving = basis_[static_cast<std::size_t>(r)];
    in_basis_[static_cast<std::size_t>(leaving)] = -1;
    basis_[static_cast<std::size_t>(r)] = entering;
    in_basis_[static_cast<std::size_t>(entering)] = r;
    if (++since_refactor_ >= opts_.refactor_every) refactor();
  }

  void refactor() {
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(m_, m_);
    for (int i = 0; i < m_; ++i) {
      for_column(basis_[static_cast<std::size_t>(i)], [&](int r, double a) { B(r, i) = a; });
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(B);
    binv_ = lu.inverse();
    xb_ = binv_ * b_;
    for (int i = 0; i < m_; ++i) {
      if (xb_(i) < 0.0 && xb_(i) > -opts_.feasibility_tol) xb_(i) = 0.0;
    }
    since_refactor_ = 0;
  }

  LpStatus iterate(bool allow_artificial) {
    int degenerate_run = 0;
    const int n_candidates = allow_artificial ? n_ + m_ : n_;
    while (true) {
      if (iterations_ >= opts_.max_iterations) return LpStatus::IterationLimit;
      const Eigen::VectorXd y = dual_vector();
      const bool bland = degenerate_run >= opts_.degenerate_switch;
      int entering = -1;
      double best = -opts_.optimality_tol;
      for (int v = 0; v < n_candidates; ++v) {
        if (in_basis_[static_cast<std::size_t>(v)] >= 0) continue;
        double d = cost_[static_cast<std::size_t>(v)];
        for_column(v, [&](int r, double a) { d -= y(r) * a; });
        if (d < best) {
          entering = v;
          best = d;
          if (bland) break;
        }
      }
      if (entering < 0) return LpStatus::Optimal;

      const Eigen::VectorXd u = column_in_basis(entering);
      int leave = -1;
      double best_ratio = std::numeric_limits<double>::infinity();
      for (int i = 0; i < m_; ++i) {
        if (u(i) <= opts_.pivot_tol) continue;
        const double ratio = std::max(xb_(i), 0.0) / u(i);
        if (ratio < best_ratio - 1e-14 ||
            (ratio <= best_ratio + 1e-14 && leave >= 0 &&
             basis_[static_cast<std::size_t>(i)] < basis_[static_cast<std::size_t>(leave)])) {
          if (ratio < best_ratio) best_ratio = ratio;
          leave = i;
        }
      }
      if (leave < 0) return LpStatus::Unbounded;
      degenerate_run = best_ratio <= 1e-14 ? degenerate_run + 1 : 0;
      if (xb_(leave) < 0.0) xb_(leave) = 0.0;
      pivot(leave, entering, u);
      ++iterations_;
    }
  }

  // Replaces zero-valued basic artificials by structural columns where possible.
  // Rows where no structural column has a nonzero entry are redundant; their
  // artificial stays basic at zero and never moves.
  void drive_out_artificials() {
    for (int r = 0; r < m_; ++r) {
      if (basis_[static_cast<std::size_t>(r)] < n_) continue;
      int pick = -1;
      double best = 1e-9;
      for (int v = 0; v < n_; ++v) {
        if (in_basis_[static_cast<std::size_t>(v)] >= 0) continue;
        double val = 0.0;
        for_column(v, [&](int row, double a) { val += binv_(r, row) * a; });
        if (std::abs(val) > best) {
          best = std::abs(val);
          pick = v;
        }
      }
      if (pick < 0) continue;
      xb_(r) = 0.0;
      pivot(r, pick, column_in_basis(pick));
    }
    refactor();
  }

  const SparseColumns& A_;
  LpOptions opts_;
  int m_;
  int n_;
  std::vector<double> sign_;
  Eigen::VectorXd b_;
  std::vector<int> basis_;
  std::vector<int> in_basis_;
  Eigen::MatrixXd binv_;
  Eigen::VectorXd xb_;
  std::vector<double> cost_;
  int iterations_ = 0;
  int since_refactor_ = 0;
};

}  // namespace

namespace {

void check_sizes(const SparseColumns& A, const std::vector<double>& b,
                 const std::vector<double>& c) {
  if (static_cast<int>(b.size()) != A.n_rows) throw InvalidArgument("solve_lp: b size");
  if (static_cast<int>(c.size()) != A.n_cols()) throw InvalidArgument("solve_lp: c size");
}

Eigen::VectorXd mul(const SparseColumns& A, const Eigen::VectorXd& x) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(A.n_rows);
  for (int j = 0; j < A.n_cols(); ++j) {
    const auto& col = A.cols[static_cast<std::size_t>(j)];
    for (std::size_t k = 0; k < col.rows.size(); ++k) out(col.rows[k]) += col.vals[k] * x(j);
  }
  return out;
}

Eigen::VectorXd mul_t(const SparseColumns& A, const Eigen::VectorXd& y) {
  Eigen::VectorXd out(A.n_cols());
  for (int j = 0; j < A.n_cols(); ++j) {
    const auto& col = A.cols[static_cast<std::size_t>(j)];
    double v = 0.0;
    for (std::size_t k = 0; k < col.rows.size(); ++k) v += col.vals[k] * y(col.rows[k]);
    out(j) = v;
  }
  return out;
}

// Factorisation of A diag(d) A^T plus a small ridge. The ridge only moves y along
// null directions of A^T, which leaves x and s untouched.
class NormalSolver {
 public:
  NormalSolver(const SparseColumns& A, const Eigen::VectorXd& d) {
    const int m = A.n_rows;
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(m, m);
    for (int j = 0; j < A.n_cols(); ++j) {
      const auto& col = A.cols[static_cast<std::size_t>(j)];
      const double dj = d(j);
      for (std::size_t a = 0; a < col.rows.size(); ++a) {
        for (std::size_t b = 0; b < col.rows.size(); ++b) {
          M(col.rows[a], col.rows[b]) += dj * col.vals[a] * col.vals[b];
        }
      }
    }
    M_ = M;
    const double floor = 1e-300 + 1e-30 * M.diagonal().maxCoeff();
    for (int i = 0; i < m; ++i) M(i, i) += 1e-12 * M(i, i) + floor;
    ldlt_.compute(M);
  }
  // Solve with two steps of iterative refinement against the unregularised matrix.
  Eigen::VectorXd solve(const Eigen::VectorXd& r) const {
    Eigen::VectorXd x = ldlt_.solve(r);
    for (int k = 0; k < 2; ++k) x += ldlt_.solve(r - M_ * x);
    return x;
  }

 private:
  Eigen::MatrixXd M_;
  Eigen::LDLT<Eigen::MatrixXd> ldlt_;
};

double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
  double alpha = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (dv(i) < 0.0) alpha = std::min(alpha, -v(i) / dv(i));
  }
  return alpha;
}

}  // namespace

LpResult solve_lp_simplex(const SparseColumns& A, const std::vector<double>& b,
                          const std::vector<double>& c, const LpOptions& opts) {
  check_sizes(A, b, c);
  Simplex s(A, b, opts);
  return s.run(c);
}

LpResult solve_lp_interior(const SparseColumns& A, const std::vector<double>& b_in,
                           const std::vector<double>& c_in, const LpOptions& opts) {
  check_sizes(A, b_in, c_in);
  const int n = A.n_cols();
  const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(b_in.data(), A.n_rows);
  const Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(c_in.data(), n);
  const double bscale = 1.0 + b.lpNorm<Eigen::Infinity>();
  const double cscale = 1.0 + c.lpNorm<Eigen::Infinity>();

  // Mehrotra's starting point.
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  Eigen::VectorXd s;
  {
    const NormalSolver ns(A, Eigen::VectorXd::Ones(n));
    x = mul_t(A, ns.solve(b));
    y = ns.solve(mul(A, c));
    s = c - mul_t(A, y);
    const double dx = std::max(-1.5 * x.minCoeff(), 0.0);
    const double ds = std::max(-1.5 * s.minCoeff(), 0.0);
    x.array() += dx;
    s.array() += ds;
    const double xs = x.dot(s);
    x.array() += 0.5 * xs / std::max(s.sum(), 1e-300);
    s.array() += 0.5 * xs / std::max(x.sum(), 1e-300);
    // Costs in the row space of A give s = 0 above; keep the start well centred.
    x = x.cwiseMax(std::max(b.lpNorm<1>(), 1e-8) / n);
    s = s.cwiseMax(0.1 * cscale);
  }

  LpResult res;
  for (int it = 0; it < opts.max_ipm_iterations; ++it) {
    const Eigen::VectorXd rp = b - mul(A, x);
    const Eigen::VectorXd rd = c - mul_t(A, y) - s;
    const double mu = x.dot(s) / n;
    const double pobj = c.dot(x);
    const double dobj = b.dot(y);
    res.iterations = it;
    if (rp.lpNorm<Eigen::Infinity>() / bscale < opts.ipm_tol &&
        rd.lpNorm<Eigen::Infinity>() / cscale < opts.ipm_tol &&
        std::abs(pobj - dobj) / (1.0 + std::abs(pobj)) < opts.ipm_tol) {
      res.status = LpStatus::Optimal;
      break;
    }
    if (x.lpNorm<Eigen::Infinity>() > 1e12 * bscale) {
      res.status = LpStatus::Infeasible;
      res.phase1_infeasibility = rp.lpNorm<1>();
      return res;
    }
    const Eigen::VectorXd d = x.cwiseQuotient(s);
    const NormalSolver ns(A, d);
    // Solves for (dx, dy, ds) given the complementarity right-hand side r_xs.
    auto direction = [&](const Eigen::VectorXd& rxs, Eigen::VectorXd& dx, Eigen::VectorXd& dy,
                         Eigen::VectorXd& ds) {
      const Eigen::VectorXd sinv_rxs = rxs.cwiseQuotient(s);
      dy = ns.solve(rp - mul(A, sinv_rxs) + mul(A, d.cwiseProduct(rd)));
      ds = rd - mul_t(A, dy);
      dx = sinv_rxs - d.cwiseProduct(ds);
    };
    Eigen::VectorXd dx;
    Eigen::VectorXd dy;
    Eigen::VectorXd ds;
    direction(-x.cwiseProduct(s), dx, dy, ds);
    const double ap_aff = max_step(x, dx);
    const double ad_aff = max_step(s, ds);
    const double mu_aff = (x + ap_aff * dx).dot(s + ad_aff * ds) / n;
    const double sigma = std::pow(mu_aff / mu, 3.0);
    const Eigen::VectorXd rxs =
        -x.cwiseProduct(s) - dx.cwiseProduct(ds) + Eigen::VectorXd::Constant(n, sigma * mu);
    direction(rxs, dx, dy, ds);
    const double ap = std::min(1.0, 0.995 * max_step(x, dx));
    const double ad = std::min(1.0, 0.995 * max_step(s, ds));
    x += ap * dx;
    y += ad * dy;
    s += ad * ds;
    res.iterations = it + 1;
  }
  if (res.status != LpStatus::Optimal) {
    res.status = LpStatus::IterationLimit;
    res.phase1_infeasibility = (b - mul(A, x)).lpNorm<1>();
    return res;
  }
  res.x.assign(x.data(), x.data() + n);
  res.y.assign(y.data(), y.data() + A.n_rows);
  res.objective = c.dot(x);
  res.dual_objective = b.dot(y);
  return res;
}

LpResult solve_lp(const SparseColumns& A, const std::vector<double>& b,
                  const std::vector<double>& c, const LpOptions& opts) {
  const bool simplex = opts.method == LpMethod::Simplex ||
                       (opts.method == LpMethod::Auto && A.n_cols() <= opts.simplex_max_columns);
  return simplex ? solve_lp_simplex(A, b, c, opts) : solve_lp_interior(A, b, c, opts);
}

}  // namespace mbb
