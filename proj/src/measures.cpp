#include "mbb/measures.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "mbb/errors.hpp"

namespace mbb {

namespace {

// Linear (cloud-in-cell) deposit of mass w at x onto `out`, clamped to the ends.
void deposit(const Grid1D& g, double x, double w, std::vector<double>& out) {
  const double s = (x - g.x_min) / g.h() - 0.5;
  const int n = g.n_cells;
  if (s <= 0.0) {
    out[0] += w;
    return;
  }
  if (s >= n - 1) {
    out[static_cast<std::size_t>(n - 1)] += w;
    return;
  }
  const int i = static_cast<int>(std::floor(s));
  const double frac = s - i;
  out[static_cast<std::size_t>(i)] += w * (1.0 - frac);
  out[static_cast<std::size_t>(i + 1)] += w * frac;
}

double mass_tolerance(int n) {
  return DiscreteMeasure::kMassTolerance +
         64.0 * std::numeric_limits<double>::epsilon() * n;
}

}  // namespace

Grid1D::Grid1D(double lo, double hi, int n) : x_min(lo), x_max(hi), n_cells(n) {
  if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
    throw InvalidArgument("Grid1D: require finite x_min < x_max");
  }
  if (n < 2) throw InvalidArgument("Grid1D: n_cells must be >= 2");
}

std::vector<double> Grid1D::centers() const {
  std::vector<double> c(static_cast<std::size_t>(n_cells));
  for (int i = 0; i < n_cells; ++i) c[static_cast<std::size_t>(i)] = center(i);
  return c;
}

int Grid1D::cell_of(double x) const {
  const int i = static_cast<int>(std::floor((x - x_min) / h()));
  return std::clamp(i, 0, n_cells - 1);
}

Grid1D Grid1D::symmetric(double half_width, int n_cells) {
  if (n_cells % 2 == 0) ++n_cells;
  return Grid1D(-half_width, half_width, n_cells);
}

DiscreteMeasure::DiscreteMeasure(Grid1D grid, std::vector<double> weights)
    : grid_(grid), weights_(std::move(weights)) {
  if (static_cast<int>(weights_.size()) != grid_.n_cells) {
    throw InvalidArgument("DiscreteMeasure: weight count does not match grid");
  }
  double total = 0.0;
  for (double& w : weights_) {
    if (!(w >= 0.0)) {
      if (w > -1e-15) {
        w = 0.0;
      } else {
        throw InvalidArgument("DiscreteMeasure: negative or non-finite weight");
      }
    }
    total += w;
  }
  if (std::abs(total - 1.0) > mass_tolerance(grid_.n_cells)) {
    std::ostringstream os;
    os << "DiscreteMeasure: total mass " << total << " differs from 1";
    throw InvalidArgument(os.str());
  }
}

DiscreteMeasure DiscreteMeasure::normalized(Grid1D grid, std::vector<double> weights) {
  double total = 0.0;
  for (double& w : weights) {
    if (w < 0.0 && w > -1e-14) w = 0.0;
    if (!(w >= 0.0)) throw InvalidArgument("normalized: negative or non-finite weight");
    total += w;
  }
  if (!(total > 0.0)) throw InvalidArgument("normalized: zero total mass");
  for (double& w : weights) w /= total;
  return DiscreteMeasure(grid, std::move(weights));
}

DiscreteMeasure DiscreteMeasure::dirac(const Grid1D& grid, double x) {
  std::vector<double> w(static_cast<std::size_t>(grid.n_cells), 0.0);
  deposit(grid, x, 1.0, w);
  return DiscreteMeasure(grid, std::move(w));
}

DiscreteMeasure DiscreteMeasure::atoms(const Grid1D& grid,
                                       const std::vector<std::pair<double, double>>& x_w) {
  std::vector<double> w(static_cast<std::size_t>(grid.n_cells), 0.0);
  for (const auto& [x, m] : x_w) {
    if (!(m >= 0.0)) throw InvalidArgument("atoms: negative weight");
    deposit(grid, x, m, w);
  }
  return normalized(grid, std::move(w));
}

DiscreteMeasure DiscreteMeasure::from_density(const Grid1D& grid,
                                              const std::function<double(double)>& density) {
  std::vector<double> w(static_cast<std::size_t>(grid.n_cells));
  for (int i = 0; i < grid.n_cells; ++i) {
    w[static_cast<std::size_t>(i)] = density(grid.center(i)) * grid.h();
  }
  return normalized(grid, std::move(w));
}

DiscreteMeasure DiscreteMeasure::gaussian(const Grid1D& grid, double mean, double variance) {
  if (!(variance > 0.0)) throw InvalidArgument("gaussian: variance must be positive");
  return from_density(grid, [=](double x) {
    const double z = x - mean;
    return std::exp(-z * z / (2.0 * variance));
  });
}

double DiscreteMeasure::mass() const {
  double s = 0.0;
  for (double w : weights_) s += w;
  return s;
}

double DiscreteMeasure::mean() const {
  double s = 0.0;
  for (int i = 0; i < size(); ++i) s += grid_.center(i) * weight(i);
  return s;
}

double DiscreteMeasure::variance() const {
  const double m = mean();
  double s = 0.0;
  for (int i = 0; i < size(); ++i) {
    const double d = grid_.center(i) - m;
    s += d * d * weight(i);
  }
  return s;
}

std::vector<double> DiscreteMeasure::density() const {
  std::vector<double> d(weights_);
  for (double& v : d) v /= grid_.h();
  return d;
}

std::pair<double, double> DiscreteMeasure::support_hull(double floor) const {
  int lo = 0;
  int hi = size() - 1;
  while (lo < hi && weight(lo) <= floor) ++lo;
  while (hi > lo && weight(hi) <= floor) --hi;
  return {grid_.center(lo), grid_.center(hi)};
}

double potential(const DiscreteMeasure& rho, double x) {
  double s = 0.0;
  for (int j = 0; j < rho.size(); ++j) s += std::abs(x - rho.grid().center(j)) * rho.weight(j);
  return s;
}

std::vector<double> potential(const DiscreteMeasure& rho, std::span<const double> xs) {
  // pi(x) = x (2F(x) - 1) + mean - 2 M(x) with F, M the partial mass and first moment.
  const int n = rho.size();
  std::vector<double> cum_w(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> cum_m(static_cast<std::size_t>(n) + 1, 0.0);
  for (int j = 0; j < n; ++j) {
    cum_w[j + 1] = cum_w[j] + rho.weight(j);
    cum_m[j + 1] = cum_m[j] + rho.weight(j) * rho.grid().center(j);
  }
  const double total_m = cum_m[static_cast<std::size_t>(n)];
  const double total_w = cum_w[static_cast<std::size_t>(n)];
  const Grid1D& g = rho.grid();
  std::vector<double> out;
  out.reserve(xs.size());
  for (double x : xs) {
    // number of centres <= x
    int k = static_cast<int>(std::floor((x - g.x_min) / g.h() + 0.5));
    k = std::clamp(k, 0, n);
    while (k < n && g.center(k) <= x) ++k;
    while (k > 0 && g.center(k - 1) > x) --k;
    const double f = cum_w[static_cast<std::size_t>(k)];
    const double m = cum_m[static_cast<std::size_t>(k)];
    out.push_back(x * (2.0 * f - total_w) + total_m - 2.0 * m);
  }
  return out;
}

double default_convex_order_tol(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  const double h = std::max(mu.grid().h(), nu.grid().h());
  const double tail = mu.weight(0) + mu.weight(mu.size() - 1) + nu.weight(0) +
                      nu.weight(nu.size() - 1);
  return 1e-8 + 2.0 * h * tail;
}

ConvexOrderReport convex_order_report(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                                      double tol) {
  ConvexOrderReport r;
  r.tol = tol;
  r.mean_gap = std::abs(mu.mean() - nu.mean());
  std::vector<double> xs = mu.grid().centers();
  const std::vector<double> xn = nu.grid().centers();
  xs.insert(xs.end(), xn.begin(), xn.end());
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  const auto pm = potential(mu, xs);
  const auto pn = potential(nu, xs);
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double d = pm[k] - pn[k];
    if (d > worst) {
      worst = d;
      r.argmax_x = xs[k];
    }
  }
  r.max_violation = std::max(worst, 0.0);
  r.ordered = r.mean_gap <= tol && worst <= tol;
  return r;
}

bool convex_order(const DiscreteMeasure& mu, const DiscreteMeasure& nu, double tol) {
  return convex_order_report(mu, nu, tol).ordered;
}

bool convex_order(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  return convex_order(mu, nu, default_convex_order_tol(mu, nu));
}

DiscreteMeasure convolve(const DiscreteMeasure& rho, const DiscreteMeasure& sigma) {
  const Grid1D& g = rho.grid();
  const Grid1D& gs = sigma.grid();
  if (std::abs(g.h() - gs.h()) > 1e-12 * std::max(g.h(), gs.h())) {
    throw GridMismatch("convolve: cell widths differ");
  }
  const int n = g.n_cells;
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  // c_i + c'_j lies at fractional index i + j + shift on rho's grid.
  const double shift = 0.5 + gs.x_min / g.h();
  const double base = std::floor(shift);
  const double frac = shift - base;
  const int ib = static_cast<int>(base);
  for (int j = 0; j < gs.n_cells; ++j) {
    const double ws = sigma.weight(j);
    if (ws == 0.0) continue;
    for (int i = 0; i < n; ++i) {
      const double w = rho.weight(i) * ws;
      if (w == 0.0) continue;
      const int k = i + j + ib;
      if (frac < 1e-12) {
        out[static_cast<std::size_t>(std::clamp(k, 0, n - 1))] += w;
      } else if (k < 0) {
        out[0] += w;
      } else if (k >= n - 1) {
        out[static_cast<std::size_t>(n - 1)] += w;
      } else {
        out[static_cast<std::size_t>(k)] += w * (1.0 - frac);
        out[static_cast<std::size_t>(k + 1)] += w * frac;
      }
    }
  }
  return DiscreteMeasure(g, std::move(out));
}

DiscreteMeasure mollify(const DiscreteMeasure& rho, double variance) {
  const Grid1D& g = rho.grid();
  const double h = g.h();
  if (!(variance > 0.0)) throw InvalidArgument("mollify: variance must be positive");
  if (variance < h * h) throw InvalidArgument("mollify: kernel narrower than the grid");
  const int n = g.n_cells;
  std::vector<double> kernel(static_cast<std::size_t>(2 * n - 1));
  double ksum = 0.0;
  for (int k = -(n - 1); k <= n - 1; ++k) {
    const double x = k * h;
    const double v = std::exp(-x * x / (2.0 * variance));
    kernel[static_cast<std::size_t>(k + n - 1)] = v;
    ksum += v;
  }
  for (double& v : kernel) v /= ksum;
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    const double w = rho.weight(i);
    if (w == 0.0) continue;
    for (int k = -(n - 1); k <= n - 1; ++k) {
      const double kv = kernel[static_cast<std::size_t>(k + n - 1)];
      if (kv == 0.0) continue;
      const int j = std::clamp(i + k, 0, n - 1);
      out[static_cast<std::size_t>(j)] += w * kv;
    }
  }
  return DiscreteMeasure(g, std::move(out));
}

DiscreteMeasure resample(const DiscreteMeasure& rho, const Grid1D& target) {
  std::vector<double> out(static_cast<std::size_t>(target.n_cells), 0.0);
  for (int i = 0; i < rho.size(); ++i) {
    if (rho.weight(i) != 0.0) deposit(target, rho.grid().center(i), rho.weight(i), out);
  }
  return DiscreteMeasure(target, std::move(out));
}

double absolute_moment(const DiscreteMeasure& rho, int k) {
  if (k < 1) throw InvalidArgument("absolute_moment: k must be >= 1");
  double s = 0.0;
  for (int i = 0; i < rho.size(); ++i) {
    s += std::pow(std::abs(rho.grid().center(i)), k) * rho.weight(i);
  }
  return s;
}

double raw_moment(const DiscreteMeasure& rho, int k) {
  if (k < 1) throw InvalidArgument("raw_moment: k must be >= 1");
  double s = 0.0;
  for (int i = 0; i < rho.size(); ++i) s += std::pow(rho.grid().center(i), k) * rho.weight(i);
  return s;
}

double wasserstein1(const DiscreteMeasure& a, const DiscreteMeasure& b) {
  std::vector<std::pair<double, double>> events;  // (x, signed mass)
  events.reserve(static_cast<std::size_t>(a.size() + b.size()));
  for (int i = 0; i < a.size(); ++i) {
    if (a.weight(i) != 0.0) events.emplace_back(a.grid().center(i), a.weight(i));
  }
  for (int i = 0; i < b.size(); ++i) {
    if (b.weight(i) != 0.0) events.emplace_back(b.grid().center(i), -b.weight(i));
  }
  std::sort(events.begin(), events.end(),
            [](const auto& l, const auto& r) { return l.first < r.first; });
  double cdf_diff = 0.0;
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < events.size(); ++k) {
    cdf_diff += events[k].second;
    total += std::abs(cdf_diff) * (events[k + 1].first - events[k].first);
  }
  return total;
}

nlohmann::json to_json(const Grid1D& g) {
  return {{"x_min", g.x_min}, {"x_max", g.x_max}, {"n_cells", g.n_cells}};
}

Grid1D grid_from_json(const nlohmann::json& j) {
  try {
    return Grid1D(j.at("x_min").get<double>(), j.at("x_max").get<double>(),
                  j.at("n_cells").get<int>());
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("grid json: ") + e.what());
  }
}

nlohmann::json to_json(const DiscreteMeasure& m) {
  return {{"grid", to_json(m.grid())},
          {"weights", std::vector<double>(m.weights().begin(), m.weights().end())}};
}

DiscreteMeasure measure_from_json(const nlohmann::json& j) {
  try {
    Grid1D g = grid_from_json(j.at("grid"));
    return DiscreteMeasure::normalized(g, j.at("weights").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("measure json: ") + e.what());
  }
}

DiscreteMeasure measure_from_csv(std::istream& in) {
  std::vector<double> xs;
  std::vector<double> ws;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    double x = 0.0;
    double w = 0.0;
    if (!(ls >> x >> w)) {
      if (xs.empty()) continue;  // header
      throw InvalidArgument("measure csv: malformed row '" + line + "'");
    }
    xs.push_back(x);
    ws.push_back(w);
  }
  if (xs.size() < 2) throw InvalidArgument("measure csv: need at least two rows");
  const double h = xs[1] - xs[0];
  if (!(h > 0.0)) throw InvalidArgument("measure csv: centres must increase");
  for (std::size_t k = 1; k < xs.size(); ++k) {
    if (std::abs(xs[k] - xs[k - 1] - h) > 1e-9 * std::max(1.0, std::abs(h) * xs.size())) {
      throw GridMismatch("measure csv: centres are not uniformly spaced");
    }
  }
  const auto n = static_cast<int>(xs.size());
  Grid1D g(xs.front() - 0.5 * h, xs.front() + (n - 0.5) * h, n);
  return DiscreteMeasure::normalized(g, std::move(ws));
}

void write_csv(std::ostream& out, const DiscreteMeasure& m) {
  out << "center,weight\n";
  out.precision(17);
  for (int i = 0; i < m.size(); ++i) out << m.grid().center(i) << ',' << m.weight(i) << '\n';
}

DiscreteMeasure load_measure(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open measure file " + path);
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv") return measure_from_csv(in);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("measure file " + path + ": " + e.what());
  }
  return measure_from_json(j);
}

}  // namespace mbb
