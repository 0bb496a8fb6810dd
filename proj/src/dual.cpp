#include "mbb/dual.hpp"

#include <algorithm>
#include <array>
#include <memory>
#include <cmath>
#include <sstream>

#include <boost/numeric/odeint.hpp>

#include "mbb/errors.hpp"

namespace mbb {

Grid1D dirichlet_grid(double r, int n_nodes) {
  if (!(r > 0.0)) throw InvalidArgument("dirichlet_grid: r must be positive");
  if (n_nodes < 3) throw InvalidArgument("dirichlet_grid: need at least 3 nodes");
  const double h = 2.0 * r / (n_nodes - 1);
  return Grid1D(-r - 0.5 * h, r + 0.5 * h, n_nodes);
}

double PMESolution::mass(int k) const {
  double s = 0.0;
  for (double v : u[static_cast<std::size_t>(k)]) s += v;
  return s * grid.h();
}

namespace {

double spow(double v, double q) { return v >= 0.0 ? std::pow(v, q) : -std::pow(-v, q); }

// Tridiagonal solve with sub/sup diagonals; all vectors have length n.
void thomas(const std::vector<double>& sub, const std::vector<double>& diag,
            const std::vector<double>& sup, std::vector<double>& rhs) {
  const std::size_t n = diag.size();
  std::vector<double> c(n);
  double beta = diag[0];
  c[0] = sup[0] / beta;
  rhs[0] /= beta;
  for (std::size_t i = 1; i < n; ++i) {
    beta = diag[i] - sub[i] * c[i - 1];
    c[i] = sup[i] / beta;
    rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / beta;
  }
  for (std::size_t i = n - 1; i-- > 0;) rhs[i] -= c[i] * rhs[i + 1];
}

// One implicit step v - c D2(v^q) = v_old on interior nodes. Returns false on failure.
bool pme_step(const std::vector<double>& v_old, double c, double q, const PmeOptions& opts,
              std::vector<double>& v, int& newton_count) {
  const std::size_t n = v_old.size();
  const std::size_t m = n - 2;
  v = v_old;
  const double scale = 1.0 + *std::max_element(v_old.begin(), v_old.end());
  auto residual = [&](const std::vector<double>& x, std::vector<double>& r) {
    r.assign(m, 0.0);
    double worst = 0.0;
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const double d2 = spow(x[i + 1], q) - 2.0 * spow(x[i], q) + spow(x[i - 1], q);
      r[i - 1] = x[i] - c * d2 - v_old[i];
      worst = std::max(worst, std::abs(r[i - 1]));
    }
    return worst;
  };
  std::vector<double> r;
  std::vector<double> trial(n, 0.0);
  std::vector<double> tr;
  double norm = residual(v, r);
  std::vector<double> sub(m), diag(m), sup(m);
  for (int it = 0; it < opts.max_newton; ++it) {
    if (norm <= opts.newton_tol * scale) return true;
    ++newton_count;
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t j = i + 1;
      diag[i] = 1.0 + 2.0 * c * q * std::pow(std::abs(v[j]), q - 1.0);
      sub[i] = i > 0 ? -c * q * std::pow(std::abs(v[j - 1]), q - 1.0) : 0.0;
      sup[i] = i + 1 < m ? -c * q * std::pow(std::abs(v[j + 1]), q - 1.0) : 0.0;
    }
    std::vector<double> delta = r;
    thomas(sub, diag, sup, delta);
    double lambda = 1.0;
    bool improved = false;
    for (int ls = 0; ls < 30; ++ls) {
      trial = v;
      for (std::size_t i = 0; i < m; ++i) trial[i + 1] -= lambda * delta[i];
      const double tn = residual(trial, tr);
      if (tn < norm || tn <= opts.newton_tol * scale) {
        v.swap(trial);
        r.swap(tr);
        norm = tn;
        improved = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!improved) return false;
  }
  return norm <= opts.newton_tol * scale;
}

bool pme_advance(const std::vector<double>& v_old, double ds, double h, double q,
                 const PmeOptions& opts, int depth, std::vector<double>& v, int& newton_count,
                 int& halvings) {
  if (pme_step(v_old, ds / (h * h), q, opts, v, newton_count)) return true;
  if (depth >= opts.max_halvings) return false;
  ++halvings;
  std::vector<double> mid;
  if (!pme_advance(v_old, 0.5 * ds, h, q, opts, depth + 1, mid, newton_count, halvings)) return false;
  return pme_advance(mid, 0.5 * ds, h, q, opts, depth + 1, v, newton_count, halvings);
}

std::vector<double> second_difference(const std::vector<double>& v, double h) {
  std::vector<double> d(v.size(), 0.0);
  for (std::size_t i = 1; i + 1 < v.size(); ++i) d[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h);
  return d;
}

}  // namespace

PMESolution solve_backward_pme(const std::vector<double>& u1, double q, double r,
                               const PmeOptions& opts) {
  if (!(q > 1.0)) throw InvalidArgument("solve_backward_pme: q must exceed 1");
  if (opts.n_steps < 1) throw InvalidArgument("solve_backward_pme: n_steps must be >= 1");
  if (!(opts.t_end > opts.t_start)) throw InvalidArgument("solve_backward_pme: empty time interval");
  const int nn = static_cast<int>(u1.size());
  PMESolution sol;
  sol.grid = dirichlet_grid(r, nn);
  sol.q = q;
  sol.r = r;
  const double umax = *std::max_element(u1.begin(), u1.end());
  for (double v : u1) {
    if (!std::isfinite(v) || v < 0.0) throw InvalidArgument("solve_backward_pme: terminal data must be finite and >= 0");
  }
  if (u1.front() > 1e-12 * std::max(umax, 1.0) || u1.back() > 1e-12 * std::max(umax, 1.0)) {
    throw InvalidArgument("solve_backward_pme: terminal data must vanish at x = +-r");
  }
  const double h = sol.grid.h();
  const double ds = (opts.t_end - opts.t_start) / opts.n_steps;

  std::vector<std::vector<double>> v;
  v.push_back(u1);
  v.front().front() = 0.0;
  v.front().back() = 0.0;
  for (int n = 0; n < opts.n_steps; ++n) {
    std::vector<double> next;
    if (!pme_advance(v.back(), ds, h, q, opts, 0, next, sol.newton_iterations, sol.step_halvings)) {
      throw NonConvergence("solve_backward_pme: Newton failed after step halving", n, ds);
    }
    for (double& x : next) x = std::max(x, 0.0);
    v.push_back(std::move(next));
  }
  for (int k = 0; k <= opts.n_steps; ++k) {
    sol.times.push_back(k == opts.n_steps ? opts.t_end : opts.t_start + k * ds);
  }
  std::reverse(v.begin(), v.end());
  sol.u = std::move(v);
  return sol;
}

double pme_scheme_residual(const PMESolution& sol, double t_max) {
  const double h = sol.grid.h();
  double worst = 0.0;
  for (int k = 0; k + 1 < sol.n_slices(); ++k) {
    if (sol.times[static_cast<std::size_t>(k)] > t_max) break;
    const double dt = sol.times[static_cast<std::size_t>(k + 1)] - sol.times[static_cast<std::size_t>(k)];
    const auto& uk = sol.u[static_cast<std::size_t>(k)];
    const auto& un = sol.u[static_cast<std::size_t>(k + 1)];
    std::vector<double> uq(uk.size());
    for (std::size_t j = 0; j < uk.size(); ++j) uq[j] = std::pow(uk[j], sol.q);
    const auto d2 = second_difference(uq, h);
    double res = 0.0;
    double size = 0.0;
    for (std::size_t j = 1; j + 1 < uk.size(); ++j) {
      const double dtu = (un[j] - uk[j]) / dt;
      res = std::max(res, std::abs(dtu + d2[j]));
      size = std::max(size, std::abs(dtu));
    }
    if (size > 0.0) worst = std::max(worst, res / size);
  }
  return worst;
}

double GiantProfile::value_at(double x) const {
  if (x <= -1.0 || x >= 1.0) return 0.0;
  const double s = (x - grid.center(0)) / grid.h();
  const int j = std::min(static_cast<int>(std::floor(s)), grid.n_cells - 2);
  const double w = s - j;
  return (1.0 - w) * g[static_cast<std::size_t>(j)] + w * g[static_cast<std::size_t>(j + 1)];
}

GiantProfile friendly_giant_profile(double q, int n_x) {
  if (!(q > 1.0)) throw InvalidArgument("friendly_giant_profile: q must exceed 1");
  GiantProfile prof;
  prof.q = q;
  prof.grid = dirichlet_grid(1.0, n_x);
  using State = std::array<double, 2>;
  const double inv_q = 1.0 / q;
  const double c = 1.0 / (q - 1.0);
  auto rhs = [&](const State& y, State& dy, double) {
    dy[0] = y[1];
    dy[1] = -c * std::pow(std::max(y[0], 0.0), inv_q);
  };
  // Nodes on [-1, 0], plus 0 itself when it is not a node.
  std::vector<double> xs;
  for (int j = 0; j < n_x; ++j) {
    const double x = prof.grid.center(j);
    if (x <= 1e-14) xs.push_back(std::min(x, 0.0));
  }
  if (xs.back() < 0.0) xs.push_back(0.0);
  namespace odeint = boost::numeric::odeint;
  auto shoot = [&](double s, std::vector<State>* out) {
    State y{0.0, s};
    auto stepper = odeint::make_dense_output(1e-14, 1e-14, odeint::runge_kutta_dopri5<State>());
    std::vector<State> states;
    odeint::integrate_times(stepper, rhs, y, xs.begin(), xs.end(), 1e-4,
                            [&](const State& st, double) { states.push_back(st); });
    if (out != nullptr) *out = states;
    return states.back()[1];
  };

  double lo = 1e-3;
  double hi = 1.0;
  while (shoot(lo, nullptr) > 0.0) {
    lo *= 0.5;
    if (lo < 1e-12) throw NonConvergence("friendly_giant_profile: no lower shooting bracket", 0, lo);
  }
  while (shoot(hi, nullptr) < 0.0) {
    hi *= 2.0;
    if (hi > 1e12) throw NonConvergence("friendly_giant_profile: no upper shooting bracket", 0, hi);
  }
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (shoot(mid, nullptr) < 0.0 ? lo : hi) = mid;
  }
  prof.slope = 0.5 * (lo + hi);
  std::vector<State> states;
  const double end_slope = shoot(prof.slope, &states);

  const double e0 = 0.5 * prof.slope * prof.slope;
  const double k = q / (q * q - 1.0);
  double defect = std::abs(end_slope) / prof.slope;
  prof.g.assign(static_cast<std::size_t>(n_x), 0.0);
  for (std::size_t i = 0; i < states.size(); ++i) {
    const double w = std::max(states[i][0], 0.0);
    const double e = 0.5 * states[i][1] * states[i][1] + k * std::pow(w, (q + 1.0) / q);
    defect = std::max(defect, std::abs(e - e0) / e0);
    if (i < static_cast<std::size_t>(n_x)) {
      const double x = xs[i];
      const int j = static_cast<int>(std::lround((x + 1.0) / prof.grid.h()));
      if (j < n_x && std::abs(prof.grid.center(j) - x) < 1e-12) {
        prof.g[static_cast<std::size_t>(j)] = std::pow(w, inv_q);
        prof.g[static_cast<std::size_t>(n_x - 1 - j)] = std::pow(w, inv_q);
      }
    }
  }
  prof.g.front() = 0.0;
  prof.g.back() = 0.0;
  prof.residual = defect;
  return prof;
}

PMESolution giant_solution(const GiantProfile& g, const std::vector<double>& times) {
  PMESolution sol;
  sol.grid = g.grid;
  sol.q = g.q;
  sol.r = 1.0;
  sol.times = times;
  for (double t : times) {
    if (!(t < 1.0)) throw InvalidArgument("giant_solution: times must be < 1");
    const double s = std::pow(1.0 - t, -1.0 / (g.q - 1.0));
    std::vector<double> row(g.g.size());
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = s * g.g[j];
    sol.u.push_back(std::move(row));
  }
  return sol;
}

DiffusionField pressure_from_u(const PMESolution& sol, PressureConvention conv) {
  const double k = (conv == PressureConvention::GradLegendre ? 2.0 : 1.0) * sol.q;
  std::vector<std::vector<double>> a;
  for (const auto& row : sol.u) {
    std::vector<double> ar(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) ar[j] = row[j] > 0.0 ? k * std::pow(row[j], sol.q - 1.0) : 0.0;
    a.push_back(std::move(ar));
  }
  return DiffusionField(sol.times, sol.grid, std::move(a));
}

double pressure_residual(const DiffusionField& a, const PMESolution& sol, double delta, double t_max) {
  const double p = sol.q / (sol.q - 1.0);
  const double h = sol.grid.h();
  auto spatial = [&](int k, std::size_t j) {
    const double am = a.value(k, static_cast<int>(j - 1));
    const double a0 = a.value(k, static_cast<int>(j));
    const double ap = a.value(k, static_cast<int>(j + 1));
    const double axx = (ap - 2.0 * a0 + am) / (h * h);
    const double ax = (ap - am) / (2.0 * h);
    return 0.5 * (a0 * axx + (p - 1.0) * ax * ax);
  };
  double res = 0.0;
  double size = 0.0;
  const auto& times = a.times();
  for (int k = 0; k + 1 < static_cast<int>(times.size()); ++k) {
    if (times[static_cast<std::size_t>(k)] > t_max) break;
    const double dt = times[static_cast<std::size_t>(k + 1)] - times[static_cast<std::size_t>(k)];
    const auto& u0 = sol.u[static_cast<std::size_t>(k)];
    const auto& u1 = sol.u[static_cast<std::size_t>(k + 1)];
    const double floor = delta * *std::max_element(u0.begin(), u0.end());
    for (std::size_t j = 1; j + 1 < u0.size(); ++j) {
      if (!(u0[j - 1] > floor && u0[j + 1] > floor && u1[j] > floor)) continue;
      const double dta = (a.value(k + 1, static_cast<int>(j)) - a.value(k, static_cast<int>(j))) / dt;
      const double r = dta + 0.5 * (spatial(k, j) + spatial(k + 1, j));
      res = std::max(res, std::abs(r));
      size = std::max(size, std::abs(dta));
    }
  }
  return size > 0.0 ? res / size : res;
}

std::vector<double> Potential::half_laplacian(int k) const {
  auto d = second_difference(phi[static_cast<std::size_t>(k)], grid.h());
  for (double& v : d) v *= 0.5;
  return d;
}

Potential potential_from_u(const PMESolution& sol) {
  Potential pot;
  pot.grid = sol.grid;
  pot.times = sol.times;
  const double h = sol.grid.h();
  const std::size_t n = static_cast<std::size_t>(sol.grid.n_cells);
  const std::size_t m = n - 2;
  for (const auto& u : sol.u) {
    std::vector<double> sub(m, 1.0), diag(m, -2.0), sup(m, 1.0), rhs(m);
    sub[0] = 0.0;
    sup[m - 1] = 0.0;
    for (std::size_t i = 0; i < m; ++i) rhs[i] = 2.0 * u[i + 1] * h * h;
    thomas(sub, diag, sup, rhs);
    std::vector<double> phi(n, 0.0);
    for (std::size_t i = 0; i < m; ++i) phi[i + 1] = rhs[i];
    pot.phi.push_back(std::move(phi));
  }
  return pot;
}

double hjb_residual(const Potential& phi, const PMESolution& sol, const CostSpec& cost) {
  double worst = 0.0;
  for (std::size_t k = 0; k + 1 < phi.times.size(); ++k) {
    const double dt = phi.times[k + 1] - phi.times[k];
    for (std::size_t j = 1; j + 1 < phi.phi[k].size(); ++j) {
      const double r = (phi.phi[k + 1][j] - phi.phi[k][j]) / dt + cost.legendre(sol.u[k][j]);
      worst = std::max(worst, std::abs(r));
    }
  }
  return worst;
}

DiffusionField optimal_a_from_phi(const Potential& phi, const CostSpec& cost) {
  std::vector<std::vector<double>> a;
  for (int k = 0; k < static_cast<int>(phi.times.size()); ++k) {
    auto u = phi.half_laplacian(k);
    for (double& v : u) v = cost.grad_legendre(v);
    a.push_back(std::move(u));
  }
  return DiffusionField(phi.times, phi.grid, std::move(a));
}

PotentialFn affine_potential(double slope, double offset) {
  return {[=](double, double x) { return slope * x + offset; }, [](double, double) { return 0.0; },
          [](double, double) { return 0.0; }};
}

PotentialFn gaussian_potential(const CostSpec& cost, double Q) {
  if (!(Q > 0.0)) throw InvalidArgument("gaussian_potential: Q must be positive");
  const double R = 2.0 * cost.coefficient() * cost.p * std::pow(Q, cost.p - 1.0);
  const double cs = cost.legendre(0.5 * R);
  return {[=](double t, double x) { return -t * cs + 0.5 * R * x * x; },
          [=](double, double) { return -cs; }, [=](double, double) { return R; }};
}

namespace {

struct SliceLocator {
  const std::vector<double>& times;
  std::size_t k0 = 0;
  double wt = 0.0;
  SliceLocator(const std::vector<double>& ts, double t) : times(ts) {
    if (t <= ts.front() || ts.size() == 1) return;
    if (t >= ts.back()) {
      k0 = ts.size() - 2;
      wt = 1.0;
      return;
    }
    k0 = static_cast<std::size_t>(std::upper_bound(ts.begin(), ts.end(), t) - ts.begin()) - 1;
    wt = (t - ts[k0]) / (ts[k0 + 1] - ts[k0]);
  }
};

double interp_row(const Grid1D& g, const std::vector<double>& row, double x) {
  const double s = (x - g.center(0)) / g.h();
  if (s <= 0.0) return row.front();
  if (s >= g.n_cells - 1) return row.back();
  const int j = static_cast<int>(std::floor(s));
  const double w = s - j;
  return (1.0 - w) * row[static_cast<std::size_t>(j)] + w * row[static_cast<std::size_t>(j + 1)];
}

}  // namespace

PotentialFn interpolate(const Potential& phi) {
  auto shared = std::make_shared<Potential>(phi);
  auto lap = std::make_shared<std::vector<std::vector<double>>>();
  for (int k = 0; k < static_cast<int>(phi.times.size()); ++k) {
    auto d = phi.half_laplacian(k);
    for (double& v : d) v *= 2.0;
    lap->push_back(std::move(d));
  }
  auto value = [shared](double t, double x) {
    const SliceLocator loc(shared->times, t);
    const double v0 = interp_row(shared->grid, shared->phi[loc.k0], x);
    if (shared->times.size() == 1) return v0;
    return (1.0 - loc.wt) * v0 + loc.wt * interp_row(shared->grid, shared->phi[loc.k0 + 1], x);
  };
  auto dt = [shared](double t, double x) {
    if (shared->times.size() == 1) return 0.0;
    const SliceLocator loc(shared->times, t);
    const double span = shared->times[loc.k0 + 1] - shared->times[loc.k0];
    return (interp_row(shared->grid, shared->phi[loc.k0 + 1], x) -
            interp_row(shared->grid, shared->phi[loc.k0], x)) / span;
  };
  auto dxx = [shared, lap](double t, double x) {
    const SliceLocator loc(shared->times, t);
    const double v0 = interp_row(shared->grid, (*lap)[loc.k0], x);
    if (shared->times.size() == 1) return v0;
    return (1.0 - loc.wt) * v0 + loc.wt * interp_row(shared->grid, (*lap)[loc.k0 + 1], x);
  };
  return {value, dt, dxx};
}

SuperSolutionReport super_solution_violation(const PotentialFn& phi, const CostSpec& cost,
                                             const Grid1D& grid, const std::vector<double>& times) {
  SuperSolutionReport rep;
  for (double t : times) {
    for (int j = 1; j + 1 < grid.n_cells; ++j) {
      const double x = grid.center(j);
      const double v = phi.phi_t(t, x) + cost.legendre(0.5 * phi.phi_xx(t, x));
      if (v > rep.max_violation) {
        rep.max_violation = v;
        rep.t = t;
        rep.x = x;
      }
    }
  }
  return rep;
}

DualityReport weak_duality_gap(const PotentialFn& phi, const MeasureCurve& rho, double primal_value,
                               const CostSpec& cost, double tol_super) {
  if (rho.n_slices() < 2) throw InvalidArgument("weak_duality_gap: curve needs two slices");
  DualityReport rep;
  rep.super = super_solution_violation(phi, cost, rho.grid, rho.times);
  if (rep.super.max_violation > tol_super) {
    std::ostringstream os;
    os << "potential is not a super-solution: d_t phi + c*(phi_xx/2) = " << rep.super.max_violation
       << " at (t, x) = (" << rep.super.t << ", " << rep.super.x << ")";
    throw NotSuperSolution(os.str(), rep.super.t, rep.super.x, rep.super.max_violation);
  }
  const double t0 = rho.times.front();
  const double t1 = rho.times.back();
  const auto& w0 = rho.slices.front();
  const auto& w1 = rho.slices.back();
  double e1 = 0.0;
  double e0 = 0.0;
  for (int j = 0; j < rho.grid.n_cells; ++j) {
    const double x = rho.grid.center(j);
    e1 += phi.phi(t1, x) * w1[static_cast<std::size_t>(j)];
    e0 += phi.phi(t0, x) * w0[static_cast<std::size_t>(j)];
  }
  rep.dual_value = e1 - e0;
  rep.primal_value = primal_value;
  rep.gap = primal_value - rep.dual_value;
  rep.mean_gap = std::abs(rho.mean(rho.n_slices() - 1) - rho.mean(0));
  return rep;
}

double curve_cost(const MeasureCurve& rho, const DiffusionFn& a, const CostSpec& cost) {
  auto slice_cost = [&](int k) {
    const double t = rho.times[static_cast<std::size_t>(k)];
    const auto& w = rho.slices[static_cast<std::size_t>(k)];
    double s = 0.0;
    for (int j = 0; j < rho.grid.n_cells; ++j) {
      const double wj = w[static_cast<std::size_t>(j)];
      if (wj > 0.0) s += cost(a(t, rho.grid.center(j))) * wj;
    }
    return s;
  };
  double total = 0.0;
  double prev = slice_cost(0);
  for (int k = 1; k < rho.n_slices(); ++k) {
    const double cur = slice_cost(k);
    total += 0.5 * (prev + cur) * (rho.times[static_cast<std::size_t>(k)] - rho.times[static_cast<std::size_t>(k - 1)]);
    prev = cur;
  }
  return total;
}

DualityReport weak_duality_gap(const PotentialFn& phi, const MeasureCurve& rho, const DiffusionFn& a,
                               const CostSpec& cost, double tol_super) {
  return weak_duality_gap(phi, rho, curve_cost(rho, a, cost), cost, tol_super);
}

GiantTerminalReport giant_terminal_check(double q, const DiscreteMeasure& mu, double t_stop,
                                         const GiantTerminalOptions& opts) {
  if (!(t_stop > 0.0 && t_stop < 1.0)) throw InvalidArgument("giant_terminal_check: t_stop must lie in (0, 1)");
  const auto [lo, hi] = mu.support_hull(1e-15);
  if (!(lo > -1.0 && hi < 1.0)) throw InvalidArgument("giant_terminal_check: mu must live inside (-1, 1)");
  const auto prof = friendly_giant_profile(q, opts.profile_nodes);
  const double k = (opts.convention == PressureConvention::GradLegendre ? 2.0 : 1.0) * q;
  auto a = [&prof, k, q](double t, double x) {
    const double g = prof.value_at(x);
    return g > 0.0 ? k * std::pow(g, q - 1.0) / (1.0 - t) : 0.0;
  };
  FpeOptions fo;
  fo.scheme = FpeScheme::Implicit;
  fo.n_steps = opts.n_steps;
  fo.t_end = t_stop;
  const auto curve = solve_fpe(mu, a, fo);
  GiantTerminalReport rep;
  const int last = curve.n_slices() - 1;
  for (int j = 0; j < curve.grid.n_cells; ++j) {
    if (std::abs(std::abs(curve.grid.center(j)) - 1.0) <= 0.1) {
      rep.mass_near_endpoints += curve.slices[static_cast<std::size_t>(last)][static_cast<std::size_t>(j)];
    }
  }
  for (int s = 0; s <= last; ++s) {
    rep.max_abs_mean = std::max(rep.max_abs_mean, std::abs(curve.mean(s)));
    rep.max_mass_error = std::max(rep.max_mass_error, std::abs(curve.mass(s) - 1.0));
  }
  rep.variance_end = curve.variance(last);
  return rep;
}

GiantTerminalReport giant_terminal_check(double q, double t_stop, const GiantTerminalOptions& opts) {
  const Grid1D g(-1.2, 1.2, opts.n_cells);
  return giant_terminal_check(q, mollify(DiscreteMeasure::dirac(g, 0.0), opts.initial_variance), t_stop, opts);
}

nlohmann::json to_json(const PMESolution& s) {
  return {{"q", s.q}, {"r", s.r}, {"grid", to_json(s.grid)}, {"times", s.times}, {"u", s.u}};
}

PMESolution pme_from_json(const nlohmann::json& j) {
  try {
    PMESolution s;
    s.q = j.at("q").get<double>();
    s.r = j.at("r").get<double>();
    s.grid = grid_from_json(j.at("grid"));
    s.times = j.at("times").get<std::vector<double>>();
    s.u = j.at("u").get<std::vector<std::vector<double>>>();
    if (s.u.size() != s.times.size()) throw InvalidArgument("pme json: size mismatch");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("pme json: ") + e.what());
  }
}

nlohmann::json to_json(const Potential& p) {
  return {{"grid", to_json(p.grid)}, {"times", p.times}, {"phi", p.phi}};
}

Potential potential_from_json(const nlohmann::json& j) {
  try {
    Potential p;
    p.grid = grid_from_json(j.at("grid"));
    p.times = j.at("times").get<std::vector<double>>();
    p.phi = j.at("phi").get<std::vector<std::vector<double>>>();
    if (p.phi.size() != p.times.size() || p.times.empty()) throw InvalidArgument("potential json: size mismatch");
    for (const auto& row : p.phi) {
      if (static_cast<int>(row.size()) != p.grid.n_cells) throw GridMismatch("potential json: row size");
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("potential json: ") + e.what());
  }
}

nlohmann::json to_json(const GiantProfile& g) {
  return {{"q", g.q}, {"grid", to_json(g.grid)}, {"g", g.g}, {"slope", g.slope}, {"residual", g.residual}};
}

nlohmann::json to_json(const DualityReport& r) {
  return {{"dual", r.dual_value},
          {"primal", r.primal_value},
          {"gap", r.gap},
          {"mean_gap", r.mean_gap},
          {"super_violation", r.super.max_violation}};
}

}  // namespace mbb
