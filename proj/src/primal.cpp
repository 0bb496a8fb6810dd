#include "mbb/primal.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "mbb/errors.hpp"
#include "mbb/interpolation.hpp"

namespace mbb {

namespace {

using SpMat = Eigen::SparseMatrix<double>;
using Vec = Eigen::VectorXd;
using Trip = Eigen::Triplet<double>;

// Unknowns: flux M^k_j (mass units, a = M / b) and slab-averaged mass b^k_j on the slabs
// k = 0..nt-1, masses w^k_j on k = 1..nt-1. Rows: the FPE step w^{k+1} - w^k = c D2 M^k and
// the averaging b^k = (w^k + w^{k+1}) / 2. With b explicit the objective is separable in
// (M, b) pairs, so the Newton system reduces to SPD normal equations.
struct Layout {
  int nt = 0;
  int nx = 0;
  double c = 0.0;  // dt / (2 h^2)
  std::vector<bool> m_active;
  std::vector<bool> w_active;
  std::vector<int> m_idx;     // [k nx + j]
  std::vector<int> b_idx;     // [k nx + j]
  std::vector<int> w_idx;     // [k nx + j], k in 0..nt
  std::vector<int> fpe_row;   // [k nx + j]
  std::vector<double> w_fixed;  // [k nx + j] where w is not an unknown
  std::vector<double> mass_cap;  // [j], upper bound on any cell mass of a feasible curve
  int n_var = 0;
  int n_rows = 0;
  SpMat A;
  Vec rhs;

  std::size_t at(int k, int j) const { return static_cast<std::size_t>(k * nx + j); }
  int mi(int k, int j) const { return m_idx[at(k, j)]; }
  int bi(int k, int j) const { return b_idx[at(k, j)]; }
  int wi(int k, int j) const { return w_idx[at(k, j)]; }
  double w(const Vec& x, int k, int j) const {
    const int i = wi(k, j);
    return i >= 0 ? x[i] : w_fixed[at(k, j)];
  }
  double m(const Vec& x, int k, int j) const {
    const int i = mi(k, j);
    return i >= 0 ? x[i] : 0.0;
  }
};

// Zero-flux second difference: coefficient of M_i in row j.
template <class F>
void for_stencil(int nx, int j, F&& f) {
  int neighbours = 0;
  if (j > 0) {
    f(j - 1, 1.0);
    ++neighbours;
  }
  if (j + 1 < nx) {
    f(j + 1, 1.0);
    ++neighbours;
  }
  f(j, -static_cast<double>(neighbours));
}

Layout make_layout(const DiscreteMeasure& mu, const DiscreteMeasure& nu, const std::vector<double>& f,
                   int nt) {
  Layout L;
  L.nt = nt;
  L.nx = mu.grid().n_cells;
  const int nx = L.nx;
  const double h = mu.grid().h();
  L.c = (1.0 / nt) / (2.0 * h * h);
  std::vector<bool> pos(static_cast<std::size_t>(nx));
  for (int j = 0; j < nx; ++j) pos[static_cast<std::size_t>(j)] = mu.weight(j) + nu.weight(j) > 0.0;
  // Flux is allowed where f > 0 and no neighbour is empty at both ends.
  L.m_active.assign(static_cast<std::size_t>(nx), false);
  for (int j = 0; j < nx; ++j) {
    const auto u = static_cast<std::size_t>(j);
    L.m_active[u] = f[u] > 0.0 && pos[u] && (j == 0 || pos[u - 1]) && (j + 1 == nx || pos[u + 1]);
  }
  L.w_active.assign(static_cast<std::size_t>(nx), false);
  for (int j = 0; j < nx; ++j) {
    bool any = false;
    for_stencil(nx, j, [&](int i, double) { any = any || L.m_active[static_cast<std::size_t>(i)]; });
    L.w_active[static_cast<std::size_t>(j)] = pos[static_cast<std::size_t>(j)] && any;
  }

  // With no flux on the end cells every feasible slice rho_k satisfies sum phi rho_k <= sum phi nu
  // for convex phi, so w_j (x_j - K) <= sum_i nu_i (x_i - K)^+ for K < x_j, and likewise with puts.
  double total = 0.0;
  for (int j = 0; j < nx; ++j) total += nu.weight(j);
  L.mass_cap.assign(static_cast<std::size_t>(nx), total);
  if (!L.m_active.front() && !L.m_active.back()) {
    const Grid1D& g = mu.grid();
    for (int j = 0; j < nx; ++j) {
      double cap_j = total;
      for (int k = 0; k < nx; ++k) {
        if (k == j) continue;
        const double K = g.center(k);
        double payoff = 0.0;
        for (int i = 0; i < nx; ++i) {
          const double d = k < j ? g.center(i) - K : K - g.center(i);
          payoff += nu.weight(i) * std::max(d, 0.0);
        }
        cap_j = std::min(cap_j, payoff / std::abs(g.center(j) - K));
      }
      L.mass_cap[static_cast<std::size_t>(j)] = cap_j;
    }
  }

  const auto cells = static_cast<std::size_t>((nt + 1) * nx);
  L.m_idx.assign(cells, -1);
  L.b_idx.assign(cells, -1);
  L.w_idx.assign(cells, -1);
  L.fpe_row.assign(cells, -1);
  L.w_fixed.assign(cells, 0.0);
  for (int k = 0; k <= nt; ++k) {
    for (int j = 0; j < nx; ++j) L.w_fixed[L.at(k, j)] = k == nt ? nu.weight(j) : mu.weight(j);
  }
  for (int k = 0; k < nt; ++k) {
    for (int j = 0; j < nx; ++j) {
      if (!L.m_active[static_cast<std::size_t>(j)]) continue;
      L.m_idx[L.at(k, j)] = L.n_var++;
      L.b_idx[L.at(k, j)] = L.n_var++;
    }
    if (k + 1 < nt) {
      for (int j = 0; j < nx; ++j) {
        if (L.w_active[static_cast<std::size_t>(j)]) L.w_idx[L.at(k + 1, j)] = L.n_var++;
      }
    }
  }

  // Weights alpha_j with sum_j alpha_j D2 M_j = 0 for every admissible flux (constants and,
  // away from the walls, linear functions on each connected run) make the FPE rows summed
  // over all steps dependent. Dropping one last-step row per such weight, picked by pivoted
  // QR on the null space, leaves independent rows.
  std::vector<bool> dropped(static_cast<std::size_t>(nx), false);
  {
    std::vector<int> col(static_cast<std::size_t>(nx), -1);
    std::vector<int> cells_w;
    for (int j = 0; j < nx; ++j) {
      if (L.w_active[static_cast<std::size_t>(j)]) {
        col[static_cast<std::size_t>(j)] = static_cast<int>(cells_w.size());
        cells_w.push_back(j);
      }
    }
    std::vector<int> mrow(static_cast<std::size_t>(nx), -1);
    int n_m = 0;
    for (int i = 0; i < nx; ++i) {
      if (L.m_active[static_cast<std::size_t>(i)]) mrow[static_cast<std::size_t>(i)] = n_m++;
    }
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(n_m, static_cast<Eigen::Index>(cells_w.size()));
    for (int j : cells_w) {
      for_stencil(nx, j, [&](int i, double coef) {
        if (mrow[static_cast<std::size_t>(i)] >= 0) G(mrow[static_cast<std::size_t>(i)], col[static_cast<std::size_t>(j)]) += coef;
      });
    }
    const Eigen::FullPivLU<Eigen::MatrixXd> lu = n_m > 0 ? Eigen::FullPivLU<Eigen::MatrixXd>(G) : Eigen::FullPivLU<Eigen::MatrixXd>();
    const auto d = n_m > 0 ? lu.dimensionOfKernel() : 0;
    if (d > 0) {
      const Eigen::MatrixXd kernel = lu.kernel();
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(kernel.transpose());
      for (Eigen::Index q = 0; q < d; ++q) {
        dropped[static_cast<std::size_t>(cells_w[static_cast<std::size_t>(qr.colsPermutation().indices()[q])])] = true;
      }
    }
  }

  std::vector<Trip> trip;
  std::vector<double> rhs;
  for (int k = 0; k < nt; ++k) {
    for (int j = 0; j < nx; ++j) {
      const auto u = static_cast<std::size_t>(j);
      if (!L.w_active[u] || (k + 1 == nt && dropped[u])) continue;
      const int row = L.n_rows++;
      L.fpe_row[L.at(k, j)] = row;
      double b = 0.0;
      if (L.wi(k + 1, j) >= 0) trip.emplace_back(row, L.wi(k + 1, j), 1.0);
      else b -= L.w_fixed[L.at(k + 1, j)];
      if (L.wi(k, j) >= 0) trip.emplace_back(row, L.wi(k, j), -1.0);
      else b += L.w_fixed[L.at(k, j)];
      for_stencil(nx, j, [&](int i, double coef) {
        if (L.mi(k, i) >= 0) trip.emplace_back(row, L.mi(k, i), -L.c * coef);
      });
      rhs.push_back(b);
    }
    for (int j = 0; j < nx; ++j) {
      if (L.bi(k, j) < 0) continue;
      const int row = L.n_rows++;
      double b = 0.0;
      trip.emplace_back(row, L.bi(k, j), 1.0);
      for (int kk : {k, k + 1}) {
        if (L.wi(kk, j) >= 0) trip.emplace_back(row, L.wi(kk, j), -0.5);
        else b += 0.5 * L.w_fixed[L.at(kk, j)];
      }
      rhs.push_back(b);
    }
  }
  L.A.resize(L.n_rows, L.n_var);
  L.A.setFromTriplets(trip.begin(), trip.end());
  L.rhs = Eigen::Map<Vec>(rhs.data(), static_cast<Eigen::Index>(rhs.size()));
  return L;
}

// Largest defect of the FPE step and the averaging over every cell, held-fixed ones included.
double full_residual(const Layout& L, const Vec& x) {
  double worst = 0.0;
  for (int k = 0; k < L.nt; ++k) {
    for (int j = 0; j < L.nx; ++j) {
      double d2 = 0.0;
      for_stencil(L.nx, j, [&](int i, double coef) { d2 += coef * L.m(x, k, i); });
      worst = std::max(worst, std::abs(L.w(x, k + 1, j) - L.w(x, k, j) - L.c * d2));
      if (L.bi(k, j) >= 0) {
        worst = std::max(worst, std::abs(x[L.bi(k, j)] - 0.5 * (L.w(x, k, j) + L.w(x, k + 1, j))));
      }
    }
  }
  return worst;
}

struct CostTerms {
  double kcoef;
  double p;
  double dt;
};

// F(x) = sum dt k M^p b^{1-p}.
double objective(const Layout& L, const CostTerms& ct, const Vec& x) {
  double F = 0.0;
  for (std::size_t u = 0; u < L.m_idx.size(); ++u) {
    const int im = L.m_idx[u];
    if (im < 0) continue;
    F += ct.dt * ct.kcoef * std::pow(x[im], ct.p) * std::pow(x[L.b_idx[u]], 1.0 - ct.p);
  }
  return F;
}

Vec gradient(const Layout& L, const CostTerms& ct, const Vec& x) {
  Vec g = Vec::Zero(L.n_var);
  const double s = ct.dt * ct.kcoef;
  for (std::size_t u = 0; u < L.m_idx.size(); ++u) {
    const int im = L.m_idx[u];
    if (im < 0) continue;
    const int ib = L.b_idx[u];
    const double a = x[im] / x[ib];
    g[im] = s * ct.p * std::pow(a, ct.p - 1.0);
    g[ib] = s * (1.0 - ct.p) * std::pow(a, ct.p);
  }
  return g;
}

// Newton system of the perturbed KKT conditions in variables scaled by x:
//   (X H X + diag(x lambda)) dz + (R A X)^T dy' = q1,   R A X dz = q2.
// The Hessian of F in scaled (M, b) is C [[1, -1], [-1, 1]] with C = p (p - 1) times the cell
// cost, so each 2x2 block is inverted in closed form and the system reduces to SPD normal
// equations in the rows.
class KktSystem {
 public:
  KktSystem(const Layout& L, const CostTerms& ct, const Vec& x, const Vec& lambda, double reg) : L_(L), x_(x) {
    const int N = L.n_var;
    std::vector<Trip> hinv;
    hinv.reserve(static_cast<std::size_t>(2 * N));
    std::vector<bool> paired(static_cast<std::size_t>(N), false);
    const double s = ct.dt * ct.kcoef;
    for (std::size_t u = 0; u < L.m_idx.size(); ++u) {
      const int im = L.m_idx[u];
      if (im < 0) continue;
      const int ib = L.b_idx[u];
      const double C = s * ct.p * (ct.p - 1.0) * std::pow(x[im], ct.p) * std::pow(x[ib], 1.0 - ct.p);
      const double d1 = x[im] * lambda[im];
      const double d2 = x[ib] * lambda[ib];
      const double det = d1 * d2 + C * (d1 + d2);
      hinv.emplace_back(im, im, (C + d2) / det);
      hinv.emplace_back(ib, ib, (C + d1) / det);
      hinv.emplace_back(im, ib, C / det);
      hinv.emplace_back(ib, im, C / det);
      paired[static_cast<std::size_t>(im)] = true;
      paired[static_cast<std::size_t>(ib)] = true;
    }
    for (int i = 0; i < N; ++i) {
      if (!paired[static_cast<std::size_t>(i)]) hinv.emplace_back(i, i, 1.0 / (x[i] * lambda[i]));
    }
    Hinv_.resize(N, N);
    Hinv_.setFromTriplets(hinv.begin(), hinv.end());

    As_ = L.A * x.asDiagonal();
    row_scale_ = Vec::Zero(L.n_rows);
    for (int col = 0; col < As_.outerSize(); ++col) {
      for (SpMat::InnerIterator it(As_, col); it; ++it) {
        row_scale_[it.row()] = std::max(row_scale_[it.row()], std::abs(it.value()));
      }
    }
    for (int i = 0; i < L.n_rows; ++i) row_scale_[i] = row_scale_[i] > 0.0 ? 1.0 / row_scale_[i] : 1.0;
    As_ = row_scale_.asDiagonal() * As_;
    AH_ = As_ * Hinv_;
    S_ = SpMat(AH_ * As_.transpose());
    SpMat shifted = S_;
    double dmax = 0.0;
    for (int i = 0; i < S_.rows(); ++i) dmax = std::max(dmax, S_.coeff(i, i));
    for (int i = 0; i < S_.rows(); ++i) shifted.coeffRef(i, i) += reg * dmax;
    chol_.compute(shifted);
    if (chol_.info() != Eigen::Success) {
      throw NonConvergence("solve_primal: normal equations are singular", 0, std::numeric_limits<double>::infinity());
    }
  }

  // Solves with q1 = -X r_d - r_c and q2 = -R r_p; returns (dx, dy) in original units.
  std::pair<Vec, Vec> solve(const Vec& rd, const Vec& rp, const Vec& rc) const {
    const Vec q1 = -(x_.cwiseProduct(rd)) - rc;
    const Vec q2 = -(rp.cwiseProduct(row_scale_));
    const Vec b = AH_ * q1 - q2;
    Vec ys = chol_.solve(b);
    for (int it = 0; it < 3; ++it) ys += chol_.solve(b - S_ * ys);
    const Vec dz = Hinv_ * (q1 - As_.transpose() * ys);
    return {dz.cwiseProduct(x_), ys.cwiseProduct(row_scale_)};
  }

 private:
  const Layout& L_;
  Vec x_;
  SpMat Hinv_;
  SpMat As_;
  SpMat AH_;
  SpMat S_;
  Vec row_scale_;
  Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> chol_;
};

double max_step(const Vec& v, const Vec& dv) {
  double a = std::numeric_limits<double>::infinity();
  for (int i = 0; i < v.size(); ++i) {
    if (dv[i] < 0.0) a = std::min(a, -v[i] / dv[i]);
  }
  return a;
}

struct Certificate {
  double dual = 0.0;
};

// Lagrangian bound for fixed y with every mass variable boxed by its cell's mass cap:
// min_x F(x) + y . (A x - rhs). Per active cell, with (c, d) the columns of A^T y at (M, b),
// min over M >= 0 of s M^p b^{1-p} + c M + d b is b (d - s (p - 1) (c^- / (s p))^{p/(p-1)}).
Certificate certificate(const Layout& L, const CostTerms& ct, const Vec& y) {
  const Vec lin = L.A.transpose() * y;
  const double s = ct.dt * ct.kcoef;
  const double p = ct.p;
  Certificate c;
  c.dual = -y.dot(L.rhs);
  for (std::size_t u = 0; u < L.m_idx.size(); ++u) {
    const double cap = L.mass_cap[u % static_cast<std::size_t>(L.nx)];
    if (L.m_idx[u] >= 0) {
      const double cm = std::max(0.0, -lin[L.m_idx[u]]);
      const double gamma = lin[L.b_idx[u]] - s * (p - 1.0) * std::pow(cm / (s * p), p / (p - 1.0));
      c.dual += std::min(0.0, gamma) * cap;
    }
    if (L.w_idx[u] >= 0) {
      c.dual += std::min(0.0, lin[L.w_idx[u]]) * cap;
    }
  }
  return c;
}

PrimalSolution assemble_solution(const Layout& L, const PrimalProblem& prob, const Vec& x) {
  const Grid1D& g = prob.mu.grid();
  const double h = g.h();
  const double dt = 1.0 / L.nt;
  PrimalSolution s;
  s.rho.grid = g;
  for (int k = 0; k <= L.nt; ++k) {
    s.rho.times.push_back(k * dt);
    std::vector<double> row(static_cast<std::size_t>(L.nx));
    for (int j = 0; j < L.nx; ++j) row[static_cast<std::size_t>(j)] = std::max(0.0, L.w(x, k, j));
    s.rho.slices.push_back(std::move(row));
  }
  // The rows hold to the feasibility tolerance; interior slices are rescaled to the exact mass.
  const double target = s.rho.mass(0);
  for (int k = 1; k < L.nt; ++k) {
    const double mk = s.rho.mass(k);
    if (mk > 0.0) {
      for (double& v : s.rho.slices[static_cast<std::size_t>(k)]) v *= target / mk;
    }
  }
  s.flux.grid = g;
  std::vector<std::vector<double>> a_vals;
  for (int k = 0; k < L.nt; ++k) {
    s.flux.times.push_back((k + 0.5) * dt);
    std::vector<double> m(static_cast<std::size_t>(L.nx), 0.0);
    std::vector<double> a(static_cast<std::size_t>(L.nx), 0.0);
    for (int j = 0; j < L.nx; ++j) {
      const double M = L.m(x, k, j);
      if (M <= 0.0) continue;
      m[static_cast<std::size_t>(j)] = M / h;
      a[static_cast<std::size_t>(j)] = M / (0.5 * (L.w(x, k, j) + L.w(x, k + 1, j)));
    }
    s.flux.m.push_back(std::move(m));
    a_vals.push_back(std::move(a));
  }
  s.a = DiffusionField(s.flux.times, g, std::move(a_vals));
  s.value = primal_objective(s.rho, s.flux, prob.cost);
  const double mass0 = s.rho.mass(0);
  const double mean0 = s.rho.mean(0);
  for (int k = 0; k <= L.nt; ++k) {
    s.mass_error = std::max(s.mass_error, std::abs(s.rho.mass(k) - mass0));
    s.mean_error = std::max(s.mean_error, std::abs(s.rho.mean(k) - mean0));
  }
  s.constraint_residual = full_residual(L, x);
  s.potential.grid = g;
  for (int k = 0; k < L.nt; ++k) {
    s.potential.times.push_back((k + 0.5) * dt);
    s.potential.phi.emplace_back(static_cast<std::size_t>(L.nx), 0.0);
  }
  return s;
}

bool same_measure(const DiscreteMeasure& a, const DiscreteMeasure& b) {
  for (int j = 0; j < a.size(); ++j) {
    if (a.weight(j) != b.weight(j)) return false;
  }
  return true;
}

}  // namespace

double primal_objective(const MeasureCurve& rho, const FluxField& flux, const CostSpec& cost) {
  const double h = rho.grid.h();
  double v = 0.0;
  for (std::size_t k = 0; k + 1 < rho.slices.size() && k < flux.m.size(); ++k) {
    const double dt = rho.times[k + 1] - rho.times[k];
    for (std::size_t j = 0; j < flux.m[k].size(); ++j) {
      const double wb = 0.5 * (rho.slices[k][j] + rho.slices[k + 1][j]);
      v += dt * cost.perspective(flux.m[k][j] * h, wb);
    }
  }
  return v;
}

PrimalSolution solve_primal(const PrimalProblem& prob, const PrimalOptions& opts) {
  prob.cost.validate();
  if (prob.n_t < 1) throw InvalidArgument("solve_primal: n_t must be >= 1");
  if (!(opts.tol > 0.0) || opts.max_iterations < 1) throw InvalidArgument("solve_primal: bad options");
  // Checks grids, convex order and positivity where mass must move.
  const DacMoserPlan plan = dacorogna_moser(prob.mu, prob.nu);
  const Layout L = make_layout(prob.mu, prob.nu, plan.f, prob.n_t);
  const CostTerms ct{prob.cost.coefficient(), prob.cost.p, 1.0 / prob.n_t};

  if (L.n_var == 0 || same_measure(prob.mu, prob.nu)) {
    // Nothing has to move: the stationary curve with zero flux is optimal.
    Vec x = Vec::Zero(L.n_var);
    for (int k = 1; k < L.nt; ++k) {
      for (int j = 0; j < L.nx; ++j) {
        if (L.wi(k, j) >= 0) x[L.wi(k, j)] = prob.mu.weight(j);
      }
    }
    for (std::size_t u = 0; u < L.b_idx.size(); ++u) {
      if (L.b_idx[u] >= 0) x[L.b_idx[u]] = prob.mu.weight(static_cast<int>(u % static_cast<std::size_t>(L.nx)));
    }
    PrimalSolution s = assemble_solution(L, prob, x);
    s.converged = true;
    return s;
  }

  // Dacorogna-Moser start: linear interpolation of the masses with constant flux 2 f h.
  const double h = prob.mu.grid().h();
  Vec x(L.n_var);
  for (int k = 0; k < L.nt; ++k) {
    for (int j = 0; j < L.nx; ++j) {
      if (L.wi(k + 1, j) >= 0) {
        const double t = static_cast<double>(k + 1) / L.nt;
        x[L.wi(k + 1, j)] = (1.0 - t) * prob.mu.weight(j) + t * prob.nu.weight(j);
      }
      if (L.mi(k, j) < 0) continue;
      const double tm = (k + 0.5) / L.nt;
      x[L.mi(k, j)] = 2.0 * plan.f[static_cast<std::size_t>(j)] * h;
      x[L.bi(k, j)] = (1.0 - tm) * prob.mu.weight(j) + tm * prob.nu.weight(j);
    }
  }
  const double n = L.n_var;
  // Perfectly centred start: x_i lambda_i equal for all i, however small x_i is.
  const double mu0 = std::max(objective(L, ct, x), 1e-12) / n;
  Vec lambda = (mu0 * x.cwiseInverse()).eval();
  Vec y = Vec::Zero(L.n_rows);

  std::vector<PrimalLogEntry> log;
  bool converged = false;
  int iter = 0;
  // The certificate is a valid lower bound at every iterate; keep the best one.
  Certificate best_cert{-std::numeric_limits<double>::infinity()};
  for (;; ++iter) {
    const Vec gF = gradient(L, ct, x);
    const Vec rd = gF + L.A.transpose() * y - lambda;
    const Vec rp = L.A * x - L.rhs;
    const double mu = x.dot(lambda) / n;
    const double F = objective(L, ct, x);
    const Certificate cert = certificate(L, ct, y);
    const double rp_norm = rp.lpNorm<Eigen::Infinity>();
    // At a KKT point F(x) = x . grad F = -y . rhs, so F + y . rhs estimates the gap.
    const double dual_est = -y.dot(L.rhs);
    const double gap = F - dual_est;
    if (cert.dual > best_cert.dual) best_cert = cert;
    PrimalLogEntry entry{iter, mu, F, dual_est, gap, cert.dual, rp_norm, x.cwiseProduct(rd).lpNorm<Eigen::Infinity>(), 0.0};
    const double scale = opts.tol * (1.0 + std::abs(F));
    if (std::abs(gap) <= scale && n * mu <= scale && rp_norm <= opts.feasibility_tol) {
      log.push_back(entry);
      converged = true;
      break;
    }
    // Past this point the normal equations carry no information about the complementarity.
    if (iter >= opts.max_iterations || mu <= 1e-20 * mu0) {
      log.push_back(entry);
      break;
    }

    const KktSystem kkt(L, ct, x, lambda, opts.regularization);
    auto dual_step = [&](const Vec& rc, const Vec& dx) { return ((-rc - lambda.cwiseProduct(dx)).cwiseQuotient(x)).eval(); };
    // Predictor (affine scaling) then Mehrotra's corrector with sigma = (mu_aff / mu)^3.
    const Vec rc_aff = x.cwiseProduct(lambda);
    const auto [dx_a, dy_a] = kkt.solve(rd, rp, rc_aff);
    const Vec dl_a = dual_step(rc_aff, dx_a);
    const double a_aff = std::min({1.0, max_step(x, dx_a), max_step(lambda, dl_a)});
    const double mu_aff = (x + a_aff * dx_a).dot(lambda + a_aff * dl_a) / n;
    const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3.0);
    const Vec rc = rc_aff + dx_a.cwiseProduct(dl_a) - Vec::Constant(L.n_var, sigma * mu);
    const auto [dx, dy] = kkt.solve(rd, rp, rc);
    const Vec dl = dual_step(rc, dx);
    const double alpha = std::min({1.0, 0.99 * max_step(x, dx), 0.99 * max_step(lambda, dl)});
    x += alpha * dx;
    y += alpha * dy;
    lambda += alpha * dl;
    entry.step = alpha;
    log.push_back(entry);
  }

  PrimalSolution best = assemble_solution(L, prob, x);
  best.log = std::move(log);
  best.iterations = iter;
  best.converged = converged;
  best.dual_value = -y.dot(L.rhs);
  best.gap = best.value - best.dual_value;
  best.certified_dual = best_cert.dual;
  best.certified_gap = best.value - best_cert.dual;
  for (int k = 0; k < L.nt; ++k) {
    for (int j = 0; j < L.nx; ++j) {
      const int row = L.fpe_row[L.at(k, j)];
      if (row >= 0) best.potential.phi[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] = y[row];
    }
  }

  if (!converged && !opts.allow_unconverged) {
    std::ostringstream os;
    os << "solve_primal: not converged after " << iter << " iterations (value " << best.value << ", gap "
       << best.gap << ")";
    throw NonConvergence(os.str(), iter, best.gap);
  }
  return best;
}

GeodesicReport geodesic_scaling_check(const PrimalSolution& sol, const PrimalProblem& prob, double s, double t,
                                      const PrimalOptions& opts) {
  const int nt = sol.rho.n_slices() - 1;
  if (!(s >= 0.0 && s < t && t <= 1.0)) throw InvalidArgument("geodesic_scaling_check: need 0 <= s < t <= 1");
  const double ks = s * nt;
  const double kt = t * nt;
  if (std::abs(ks - std::round(ks)) > 1e-9 || std::abs(kt - std::round(kt)) > 1e-9) {
    throw InvalidArgument("geodesic_scaling_check: s and t must be time nodes");
  }
  GeodesicReport rep;
  rep.s = s;
  rep.t = t;
  rep.total = sol.value;
  if (s == 0.0 && t == 1.0) {
    rep.sub_value = sol.value;
    return rep;
  }
  PrimalProblem sub{sol.rho.slice(static_cast<int>(std::lround(ks))), sol.rho.slice(static_cast<int>(std::lround(kt))),
                    prob.cost, prob.n_t};
  rep.sub_value = solve_primal(sub, opts).value;
  const double p = prob.cost.p;
  const double expected = (t - s) * std::pow(sol.value, 1.0 / p);
  rep.deviation = expected > 0.0 ? std::abs(std::pow(rep.sub_value, 1.0 / p) - expected) / expected
                                 : std::pow(rep.sub_value, 1.0 / p);
  return rep;
}

ContractionReport convolution_contraction_check(const PrimalProblem& prob, const DiscreteMeasure& sigma,
                                                double discretization_budget, const PrimalOptions& opts) {
  const auto base = solve_primal(prob, opts);
  PrimalProblem smoothed{convolve(prob.mu, sigma), convolve(prob.nu, sigma), prob.cost, prob.n_t};
  const auto conv = solve_primal(smoothed, opts);
  ContractionReport rep;
  rep.value = base.value;
  rep.smoothed_value = conv.value;
  auto rel = [](const PrimalSolution& s) { return s.value > 0.0 ? std::max(0.0, s.gap) / s.value : 0.0; };
  rep.budget = rel(base) + rel(conv) + discretization_budget;
  rep.holds = rep.smoothed_value <= rep.value * (1.0 + rep.budget) + 1e-12;
  return rep;
}

nlohmann::json to_json(const FluxField& f) {
  return {{"grid", to_json(f.grid)}, {"times", f.times}, {"m", f.m}};
}

nlohmann::json to_json(const PrimalSolution& s) {
  return {{"value", s.value},
          {"dual_value", s.dual_value},
          {"gap", s.gap},
          {"certified_dual", s.certified_dual},
          {"certified_gap", s.certified_gap},
          {"converged", s.converged},
          {"iterations", s.iterations},
          {"residuals",
           {{"constraint", s.constraint_residual}, {"mass", s.mass_error}, {"mean", s.mean_error}}},
          {"rho", to_json(s.rho)},
          {"flux", to_json(s.flux)},
          {"a", to_json(s.a)},
          {"potential", to_json(s.potential)}};
}

PrimalSolution primal_from_json(const nlohmann::json& j) {
  try {
    PrimalSolution s;
    s.rho = curve_from_json(j.at("rho"));
    s.a = diffusion_from_json(j.at("a"));
    s.value = j.at("value").get<double>();
    s.gap = j.value("gap", 0.0);
    s.dual_value = j.value("dual_value", s.value - s.gap);
    s.certified_dual = j.value("certified_dual", s.dual_value);
    s.certified_gap = j.value("certified_gap", s.value - s.certified_dual);
    s.converged = j.value("converged", false);
    if (j.contains("potential")) s.potential = potential_from_json(j.at("potential"));
    if (j.contains("flux")) {
      const auto& fj = j.at("flux");
      s.flux.grid = grid_from_json(fj.at("grid"));
      s.flux.times = fj.at("times").get<std::vector<double>>();
      s.flux.m = fj.at("m").get<std::vector<std::vector<double>>>();
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("primal json: ") + e.what());
  }
}

void write_log_csv(std::ostream& out, const std::vector<PrimalLogEntry>& log) {
  out << "iteration,complementarity,value,dual_value,gap,certified_dual,primal_residual,dual_residual,step\n";
  for (const auto& e : log) {
    out << e.iteration << ',' << e.complementarity << ',' << e.value << ',' << e.dual_value << ',' << e.gap << ','
        << e.certified_dual << ',' << e.primal_residual << ',' << e.dual_residual << ',' << e.step << '\n';
  }
}

}  // namespace mbb
