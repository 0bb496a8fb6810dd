#include "mbb/interpolation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mbb/costs.hpp"
#include "mbb/errors.hpp"

namespace mbb {

double DacMoserPlan::density(double t, int j) const {
  const auto k = static_cast<std::size_t>(j);
  return (1.0 - t) * m[k] + t * n[k];
}

double DacMoserPlan::a(double t, int j) const {
  const double fj = f[static_cast<std::size_t>(j)];
  if (fj <= 0.0) return 0.0;
  return 2.0 * fj / density(t, j);
}

double DacMoserPlan::a_at(double t, double x) const {
  const double s = (x - grid.x_min) / grid.h() - 0.5;
  if (s <= 0.0) return a(t, 0);
  if (s >= grid.n_cells - 1) return a(t, grid.n_cells - 1);
  const int j = static_cast<int>(std::floor(s));
  const double w = s - j;
  const auto k = static_cast<std::size_t>(j);
  const double fx = (1.0 - w) * f[k] + w * f[k + 1];
  if (fx <= 0.0) return 0.0;
  const double dens = (1.0 - w) * density(t, j) + w * density(t, j + 1);
  return 2.0 * fx / dens;
}

DiffusionFn DacMoserPlan::diffusion() const {
  return [plan = *this](double t, double x) { return plan.a_at(t, x); };
}

DiscreteMeasure DacMoserPlan::rho(double t) const {
  std::vector<double> w(static_cast<std::size_t>(grid.n_cells));
  for (int j = 0; j < grid.n_cells; ++j) {
    w[static_cast<std::size_t>(j)] = (1.0 - t) * mu.weight(j) + t * nu.weight(j);
  }
  return DiscreteMeasure::normalized(grid, std::move(w));
}

MeasureCurve DacMoserPlan::curve(int n_t) const {
  if (n_t < 1) throw InvalidArgument("DacMoserPlan::curve: n_t must be >= 1");
  MeasureCurve c;
  c.grid = grid;
  for (int k = 0; k <= n_t; ++k) {
    const double t = static_cast<double>(k) / n_t;
    c.times.push_back(t);
    std::vector<double> w(static_cast<std::size_t>(grid.n_cells));
    for (int j = 0; j < grid.n_cells; ++j) {
      w[static_cast<std::size_t>(j)] = (1.0 - t) * mu.weight(j) + t * nu.weight(j);
    }
    c.slices.push_back(std::move(w));
  }
  return c;
}

DiffusionField DacMoserPlan::field(int n_t) const {
  if (n_t < 1) throw InvalidArgument("DacMoserPlan::field: n_t must be >= 1");
  std::vector<double> times;
  std::vector<std::vector<double>> values;
  for (int k = 0; k <= n_t; ++k) {
    const double t = static_cast<double>(k) / n_t;
    times.push_back(t);
    std::vector<double> row(static_cast<std::size_t>(grid.n_cells));
    for (int j = 0; j < grid.n_cells; ++j) row[static_cast<std::size_t>(j)] = a(t, j);
    values.push_back(std::move(row));
  }
  return DiffusionField(std::move(times), grid, std::move(values));
}

double DacMoserPlan::sup_diffusion(int n_t) const {
  double s = 0.0;
  for (int k = 0; k <= n_t; ++k) {
    for (int j = 0; j < grid.n_cells; ++j) s = std::max(s, a(static_cast<double>(k) / n_t, j));
  }
  return s;
}

DacMoserPlan dacorogna_moser(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  if (!(mu.grid() == nu.grid())) {
    throw GridMismatch("dacorogna_moser: mu and nu must share a grid");
  }
  const auto rep = convex_order_report(mu, nu, default_convex_order_tol(mu, nu));
  if (!rep.ordered) {
    std::ostringstream os;
    os << "dacorogna_moser: measures are not in convex order (mean gap " << rep.mean_gap
       << ", max potential excess " << rep.max_violation << " at x = " << rep.argmax_x << ")";
    throw Infeasible(os.str(), rep.argmax_x, std::max(rep.max_violation, rep.mean_gap));
  }
  const Grid1D& g = mu.grid();
  const int nc = g.n_cells;
  const double h = g.h();
  std::vector<double> w(static_cast<std::size_t>(nc));
  double left_mass = 0.0;
  for (int j = 0; j < nc; ++j) w[static_cast<std::size_t>(j)] = nu.weight(j) - mu.weight(j);

  // Summing (y - x)^+ from the right or (x - y)^+ from the left keeps f exactly 0 outside
  // the hull on each side; the two forms differ only by the (zero) mean difference.
  std::vector<double> f(static_cast<std::size_t>(nc), 0.0);
  for (int j = 0; j < nc; ++j) {
    const double x = g.center(j);
    const double mass_here = mu.weight(j) + nu.weight(j);
    const bool from_left = left_mass + 0.5 * mass_here <= 1.0;
    left_mass += mass_here;
    double s = 0.0;
    if (from_left) {
      for (int i = 0; i < j; ++i) s += (x - g.center(i)) * w[static_cast<std::size_t>(i)];
    } else {
      for (int i = j + 1; i < nc; ++i) s += (g.center(i) - x) * w[static_cast<std::size_t>(i)];
    }
    f[static_cast<std::size_t>(j)] = std::max(s, 0.0);
  }

  DacMoserPlan plan{g, mu, nu, std::move(f), mu.density(), nu.density()};
  const double fmax = *std::max_element(plan.f.begin(), plan.f.end());
  for (int j = 0; j < nc; ++j) {
    const auto k = static_cast<std::size_t>(j);
    if (plan.f[k] > 1e-14 * std::max(fmax, h) && plan.m[k] <= 0.0 && plan.n[k] <= 0.0) {
      std::ostringstream os;
      os << "dacorogna_moser: zero density at x = " << g.center(j)
         << " where f > 0; mollify the inputs first";
      throw InvalidArgument(os.str());
    }
  }
  return plan;
}

DacMoserCost dacmoser_cost(const DacMoserPlan& plan, double p) {
  if (!(p >= 1.0)) throw InvalidArgument("dacmoser_cost: p must be >= 1");
  const Grid1D& g = plan.grid;
  const int nc = g.n_cells;
  const double h = g.h();
  auto mp = [&](int j) {
    const auto k = static_cast<std::size_t>(j);
    if (p == 1.0) return 1.0;
    return m_p(p, plan.m[k], plan.n[k]);
  };

  DacMoserCost out;
  for (int j = 0; j < nc; ++j) {
    const double fj = plan.f[static_cast<std::size_t>(j)];
    if (fj > 0.0) out.value += std::pow(2.0 * fj, p) * mp(j) * h;
  }

  std::vector<double> diff(static_cast<std::size_t>(nc));
  double l1 = 0.0;
  for (int j = 0; j < nc; ++j) {
    diff[static_cast<std::size_t>(j)] = std::abs(plan.n[static_cast<std::size_t>(j)] -
                                                 plan.m[static_cast<std::size_t>(j)]);
    l1 += diff[static_cast<std::size_t>(j)] * h;
  }
  std::vector<double> mps(static_cast<std::size_t>(nc), 0.0);
  for (int j = 0; j < nc; ++j) {
    const bool needed = diff[static_cast<std::size_t>(j)] > 0.0 || plan.f[static_cast<std::size_t>(j)] > 0.0;
    if (needed && (plan.m[static_cast<std::size_t>(j)] > 0.0 || plan.n[static_cast<std::size_t>(j)] > 0.0)) {
      mps[static_cast<std::size_t>(j)] = mp(j);
    }
  }
  // Outer variable y weighted by |n - m|, inner x strictly between 0 and y.
  double integral = 0.0;
  for (int jy = 0; jy < nc; ++jy) {
    const double dy = diff[static_cast<std::size_t>(jy)];
    if (dy == 0.0) continue;
    const double y = g.center(jy);
    double inner = 0.0;
    for (int jx = 0; jx < nc; ++jx) {
      const double x = g.center(jx);
      const bool between = (y > 0.0 && x > 0.0 && x < y) || (y < 0.0 && x < 0.0 && x > y);
      if (between) inner += mps[static_cast<std::size_t>(jx)] * std::pow(std::abs(y - x), p) * h;
    }
    integral += dy * inner * h;
  }
  out.bound = std::pow(l1, p - 1.0) * integral;
  out.bound_with_factor = std::pow(2.0, p) * out.bound;
  out.within_bound = out.value <= 1.05 * out.bound;
  return out;
}

StrassenResult strassen_coupling(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                                 const StrassenOptions& opts) {
  if (!(opts.epsilon > 0.0)) throw InvalidArgument("strassen_coupling: epsilon must be positive");
  if (opts.n_paths < 1) throw InvalidArgument("strassen_coupling: n_paths must be >= 1");
  const auto rep = convex_order_report(mu, nu, default_convex_order_tol(mu, nu));
  if (!rep.ordered) {
    std::ostringstream os;
    os << "strassen_coupling: measures are not in convex order (mean gap " << rep.mean_gap
       << ", max potential excess " << rep.max_violation << " at x = " << rep.argmax_x << ")";
    throw Infeasible(os.str(), rep.argmax_x, std::max(rep.max_violation, rep.mean_gap));
  }

  // Working grid: both hulls padded by 8 standard deviations, centres on multiples of h.
  const double h = opts.fine_h > 0.0 ? opts.fine_h : opts.epsilon / 4.0;
  if (h > opts.epsilon) throw InvalidArgument("strassen_coupling: fine_h must not exceed epsilon");
  const auto [mlo, mhi] = mu.support_hull();
  const auto [nlo, nhi] = nu.support_hull();
  const double pad = 8.0 * opts.epsilon + 2.0 * h;
  const double lo = std::floor((std::min(mlo, nlo) - pad) / h) * h - 0.5 * h;
  const double hi = std::ceil((std::max(mhi, nhi) + pad) / h) * h + 0.5 * h;
  const Grid1D fine(lo, hi, static_cast<int>(std::lround((hi - lo) / h)));
  const double var = opts.epsilon * opts.epsilon;
  const auto mu_eps = mollify(resample(mu, fine), var);
  const auto nu_eps = mollify(resample(nu, fine), var);
  const auto plan = dacorogna_moser(mu_eps, nu_eps);

  SdeOptions so;
  so.n_paths = opts.n_paths;
  so.seed = opts.seed;
  so.n_records = 1;
  so.dt = 1.0 / opts.n_steps;
  so.step_length = opts.step_length > 0.0 ? opts.step_length : 2.0 * h;
  so.threads = opts.threads;
  const auto ens = simulate_sde(mu_eps, plan.diffusion(), so);

  StrassenResult out;
  const Grid1D& gs = mu.grid();
  const Grid1D& gt = nu.grid();
  MartingaleCoupling& c = out.coupling;
  c.source = gs;
  c.target = gt;
  c.pi.assign(static_cast<std::size_t>(gs.n_cells),
              std::vector<double>(static_cast<std::size_t>(gt.n_cells), 0.0));
  std::vector<double> x1_sum(static_cast<std::size_t>(gs.n_cells), 0.0);
  std::vector<int> count(static_cast<std::size_t>(gs.n_cells), 0);
  const double w = 1.0 / ens.n_paths;
  for (int p = 0; p < ens.n_paths; ++p) {
    const int i = gs.cell_of(ens.position(p, 0));
    const double x1 = ens.position(p, 1);
    c.pi[static_cast<std::size_t>(i)][static_cast<std::size_t>(gt.cell_of(x1))] += w;
    x1_sum[static_cast<std::size_t>(i)] += x1;
    count[static_cast<std::size_t>(i)] += 1;
  }
  compute_residuals(c, mu, nu);
  for (auto s : ens.substeps) out.total_substeps += s;

  std::vector<double> row(static_cast<std::size_t>(gs.n_cells), 0.0);
  std::vector<double> col(static_cast<std::size_t>(gt.n_cells), 0.0);
  for (int i = 0; i < gs.n_cells; ++i) {
    for (int j = 0; j < gt.n_cells; ++j) {
      row[static_cast<std::size_t>(i)] += c.at(i, j);
      col[static_cast<std::size_t>(j)] += c.at(i, j);
    }
  }
  out.w1_source = wasserstein1(DiscreteMeasure::normalized(gs, row), mu);
  out.w1_target = wasserstein1(DiscreteMeasure::normalized(gt, col), nu);

  out.min_bin_paths = std::max(100, opts.n_paths / 1000);
  for (int i = 0; i < gs.n_cells; ++i) {
    const int k = count[static_cast<std::size_t>(i)];
    if (k < out.min_bin_paths) continue;
    out.mean_defect =
        std::max(out.mean_defect, std::abs(x1_sum[static_cast<std::size_t>(i)] / k - gs.center(i)));
  }
  return out;
}

nlohmann::json to_json(const DacMoserPlan& plan) {
  return {{"grid", to_json(plan.grid)},
          {"mu", std::vector<double>(plan.mu.weights().begin(), plan.mu.weights().end())},
          {"nu", std::vector<double>(plan.nu.weights().begin(), plan.nu.weights().end())},
          {"f", plan.f}};
}

nlohmann::json to_json(const DacMoserCost& cost) {
  return {{"value", cost.value},
          {"bound", cost.bound},
          {"bound_with_factor", cost.bound_with_factor},
          {"within_bound", cost.within_bound}};
}

nlohmann::json to_json(const StrassenResult& r) {
  return {{"coupling", to_json(r.coupling)},
          {"w1_source", r.w1_source},
          {"w1_target", r.w1_target},
          {"mean_defect", r.mean_defect},
          {"min_bin_paths", r.min_bin_paths},
          {"total_substeps", r.total_substeps}};
}

}  // namespace mbb
