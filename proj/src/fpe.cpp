#include "mbb/fpe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "mbb/errors.hpp"

namespace mbb {

DiffusionField::DiffusionField(std::vector<double> times, Grid1D grid,
                               std::vector<std::vector<double>> values)
    : times_(std::move(times)), grid_(grid), values_(std::move(values)) {
  if (times_.empty() || times_.size() != values_.size()) {
    throw InvalidArgument("DiffusionField: need one value row per time");
  }
  for (std::size_t k = 1; k < times_.size(); ++k) {
    if (!(times_[k] > times_[k - 1])) throw InvalidArgument("DiffusionField: times must increase");
  }
  for (const auto& row : values_) {
    if (static_cast<int>(row.size()) != grid_.n_cells) {
      throw GridMismatch("DiffusionField: row length does not match grid");
    }
    for (double v : row) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw InvalidArgument("DiffusionField: values must be finite and non-negative");
      }
    }
  }
}

DiffusionField DiffusionField::constant(double value, const Grid1D& grid, int n_t) {
  std::vector<double> times;
  for (int k = 0; k <= n_t; ++k) times.push_back(static_cast<double>(k) / n_t);
  return DiffusionField(
      times, grid,
      std::vector<std::vector<double>>(times.size(),
                                       std::vector<double>(static_cast<std::size_t>(grid.n_cells), value)));
}

DiffusionField DiffusionField::sample(const DiffusionFn& a, const std::vector<double>& times,
                                      const Grid1D& grid) {
  std::vector<std::vector<double>> v(times.size(),
                                     std::vector<double>(static_cast<std::size_t>(grid.n_cells)));
  for (std::size_t k = 0; k < times.size(); ++k) {
    for (int j = 0; j < grid.n_cells; ++j) {
      v[k][static_cast<std::size_t>(j)] = std::max(0.0, a(times[k], grid.center(j)));
    }
  }
  return DiffusionField(times, grid, std::move(v));
}

double DiffusionField::max_value() const {
  double m = 0.0;
  for (const auto& row : values_) {
    for (double v : row) m = std::max(m, v);
  }
  return m;
}

double DiffusionField::at(double t, double x) const {
  // time weights
  std::size_t k0 = 0;
  double wt = 0.0;
  if (t <= times_.front()) {
    k0 = 0;
  } else if (t >= times_.back()) {
    k0 = times_.size() - 1;
  } else {
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    k0 = static_cast<std::size_t>(it - times_.begin()) - 1;
    wt = (t - times_[k0]) / (times_[k0 + 1] - times_[k0]);
  }
  const double s = (x - grid_.x_min) / grid_.h() - 0.5;
  int j0 = 0;
  double wx = 0.0;
  if (s <= 0.0) {
    j0 = 0;
  } else if (s >= grid_.n_cells - 1) {
    j0 = grid_.n_cells - 1;
  } else {
    j0 = static_cast<int>(std::floor(s));
    wx = s - j0;
  }
  auto row_value = [&](std::size_t k) {
    const auto& r = values_[k];
    const double v0 = r[static_cast<std::size_t>(j0)];
    if (wx == 0.0) return v0;
    return (1.0 - wx) * v0 + wx * r[static_cast<std::size_t>(j0 + 1)];
  };
  double v = row_value(k0);
  if (wt > 0.0) v = (1.0 - wt) * v + wt * row_value(k0 + 1);
  return std::max(v, 0.0);
}

DiffusionFn DiffusionField::as_function() const {
  return [self = *this](double t, double x) { return self.at(t, x); };
}

DiscreteMeasure MeasureCurve::slice(int k) const {
  std::vector<double> w = slices[static_cast<std::size_t>(k)];
  double total = 0.0;
  for (double& v : w) {
    if (v < 0.0 && v >= -1e-12) v = 0.0;
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw InvalidArgument("MeasureCurve: slice mass drifted from 1");
  }
  return DiscreteMeasure::normalized(grid, std::move(w));
}

double MeasureCurve::mass(int k) const {
  double s = 0.0;
  for (double v : slices[static_cast<std::size_t>(k)]) s += v;
  return s;
}

double MeasureCurve::mean(int k) const {
  double s = 0.0;
  const auto& w = slices[static_cast<std::size_t>(k)];
  for (int j = 0; j < grid.n_cells; ++j) s += grid.center(j) * w[static_cast<std::size_t>(j)];
  return s;
}

double MeasureCurve::second_moment(int k) const {
  double s = 0.0;
  const auto& w = slices[static_cast<std::size_t>(k)];
  for (int j = 0; j < grid.n_cells; ++j) {
    const double x = grid.center(j);
    s += x * x * w[static_cast<std::size_t>(j)];
  }
  return s;
}

double MeasureCurve::variance(int k) const {
  const double m = mean(k);
  return second_moment(k) - m * m;
}

namespace {

// One implicit step: (I - c L diag(a)) rho_new = rho_old, Thomas algorithm.
void implicit_step(const std::vector<double>& a, double c, const std::vector<double>& rho_old,
                   std::vector<double>& rho_new, std::vector<double>& work_c,
                   std::vector<double>& work_d) {
  const std::size_t n = a.size();
  // Row j: sub = -c a_{j-1}, diag = 1 + c a_j (#faces), sup = -c a_{j+1}.
  auto diag = [&](std::size_t j) {
    const double faces = (j == 0 || j == n - 1) ? 1.0 : 2.0;
    return 1.0 + c * faces * a[j];
  };
  work_c.resize(n);
  work_d.resize(n);
  double beta = diag(0);
  work_c[0] = -c * a[1] / beta;
  work_d[0] = rho_old[0] / beta;
  for (std::size_t j = 1; j < n; ++j) {
    const double sub = -c * a[j - 1];
    beta = diag(j) - sub * work_c[j - 1];
    work_c[j] = (j + 1 < n) ? -c * a[j + 1] / beta : 0.0;
    work_d[j] = (rho_old[j] - sub * work_d[j - 1]) / beta;
  }
  rho_new.resize(n);
  rho_new[n - 1] = work_d[n - 1];
  for (std::size_t j = n - 1; j-- > 0;) rho_new[j] = work_d[j] - work_c[j] * rho_new[j + 1];
}

void explicit_step(const std::vector<double>& a, double c, const std::vector<double>& rho_old,
                   std::vector<double>& rho_new) {
  const std::size_t n = a.size();
  rho_new.assign(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) rho_new[j] = rho_old[j];
  for (std::size_t j = 0; j + 1 < n; ++j) {
    const double flux = c * (a[j + 1] * rho_old[j + 1] - a[j] * rho_old[j]);
    rho_new[j] += flux;
    rho_new[j + 1] -= flux;
  }
}

}  // namespace

MeasureCurve solve_fpe(const DiscreteMeasure& mu0, const DiffusionFn& a, const FpeOptions& opts) {
  if (opts.n_steps < 1) throw InvalidArgument("solve_fpe: n_steps must be >= 1");
  if (!(opts.t_end > opts.t_start)) throw InvalidArgument("solve_fpe: empty time interval");
  const Grid1D& g = mu0.grid();
  const auto n = static_cast<std::size_t>(g.n_cells);
  const double h = g.h();
  const double dt = (opts.t_end - opts.t_start) / opts.n_steps;

  DiscreteMeasure start = mu0;
  if (opts.mollify_point_masses) {
    int support = 0;
    for (int j = 0; j < g.n_cells; ++j) support += mu0.weight(j) > 0.0 ? 1 : 0;
    if (support <= 2) start = mollify(mu0, 4.0 * h * h);
  }

  MeasureCurve curve;
  curve.grid = g;
  curve.times.push_back(opts.t_start);
  curve.slices.emplace_back(start.weights().begin(), start.weights().end());

  std::vector<double> av(n);
  std::vector<double> next;
  std::vector<double> tmp;
  std::vector<double> wc;
  std::vector<double> wd;
  auto fill_a = [&](double t) {
    for (std::size_t j = 0; j < n; ++j) {
      const double v = a(t, g.center(static_cast<int>(j)));
      av[j] = (std::isfinite(v) && v > 0.0) ? v : 0.0;
      if (!std::isfinite(v)) throw InvalidArgument("solve_fpe: diffusion is not finite");
    }
  };

  for (int k = 0; k < opts.n_steps; ++k) {
    const double t0 = opts.t_start + k * dt;
    const std::vector<double>& rho = curve.slices.back();
    bool ok = false;
    for (int attempt = 0; attempt <= opts.max_retries && !ok; ++attempt) {
      const int sub = 1 << attempt;
      const double ds = dt / sub;
      const double c = ds / (2.0 * h * h);
      tmp = rho;
      for (int s = 0; s < sub; ++s) {
        const double ts = t0 + s * ds;
        if (opts.scheme == FpeScheme::Explicit) {
          fill_a(ts);
          const double amax = *std::max_element(av.begin(), av.end());
          if (amax * ds / (h * h) > 1.0 + 1e-12) {
            std::ostringstream os;
            os << "explicit FPE step violates CFL: max(a) dt / h^2 = " << amax * ds / (h * h);
            throw CflViolation(os.str());
          }
          explicit_step(av, c, tmp, next);
        } else {
          fill_a(ts + ds);
          implicit_step(av, c, tmp, next, wc, wd);
        }
        tmp.swap(next);
      }
      ok = *std::min_element(tmp.begin(), tmp.end()) >= -1e-12;
    }
    if (!ok) {
      throw NonConvergence("solve_fpe: negative density persists after step refinement", k,
                           *std::min_element(tmp.begin(), tmp.end()));
    }
    curve.times.push_back(k + 1 == opts.n_steps ? opts.t_end : t0 + dt);
    curve.slices.push_back(tmp);
  }
  return curve;
}

MeasureCurve solve_fpe(const DiscreteMeasure& mu0, const DiffusionField& a, const FpeOptions& opts) {
  return solve_fpe(mu0, a.as_function(), opts);
}

TestFunction TestFunction::constant() {
  return {[](double, double) { return 1.0; }, [](double, double) { return 0.0; },
          [](double, double) { return 0.0; }};
}

TestFunction TestFunction::linear() {
  return {[](double, double x) { return x; }, [](double, double) { return 0.0; },
          [](double, double) { return 0.0; }};
}

TestFunction TestFunction::quadratic() {
  return {[](double, double x) { return x * x; }, [](double, double) { return 0.0; },
          [](double, double) { return 2.0; }};
}

TestFunction TestFunction::bump(double centre, double width) {
  const double w2 = width * width;
  return {[=](double, double x) { return std::exp(-(x - centre) * (x - centre) / (2 * w2)); },
          [](double, double) { return 0.0; },
          [=](double, double x) {
            const double z = (x - centre) * (x - centre) / w2;
            return (z - 1.0) / w2 * std::exp(-0.5 * z);
          }};
}

double weak_residual(const MeasureCurve& rho, const DiffusionFn& a, const TestFunction& phi) {
  const Grid1D& g = rho.grid;
  auto integrand = [&](int k) {
    const double t = rho.times[static_cast<std::size_t>(k)];
    const auto& w = rho.slices[static_cast<std::size_t>(k)];
    double s = 0.0;
    for (int j = 0; j < g.n_cells; ++j) {
      const double x = g.center(j);
      s += (phi.phi_t(t, x) + 0.5 * a(t, x) * phi.phi_xx(t, x)) * w[static_cast<std::size_t>(j)];
    }
    return s;
  };
  auto pairing = [&](int k) {
    const double t = rho.times[static_cast<std::size_t>(k)];
    const auto& w = rho.slices[static_cast<std::size_t>(k)];
    double s = 0.0;
    for (int j = 0; j < g.n_cells; ++j) s += phi.phi(t, g.center(j)) * w[static_cast<std::size_t>(j)];
    return s;
  };
  double lhs = 0.0;
  double prev = integrand(0);
  for (int k = 1; k < rho.n_slices(); ++k) {
    const double cur = integrand(k);
    lhs += 0.5 * (prev + cur) * (rho.times[static_cast<std::size_t>(k)] - rho.times[static_cast<std::size_t>(k - 1)]);
    prev = cur;
  }
  const double rhs = pairing(rho.n_slices() - 1) - pairing(0);
  return std::abs(lhs - rhs);
}

int PathEnsemble::record_index(double t) const {
  const auto it = std::lower_bound(record_times.begin(), record_times.end(), t);
  if (it == record_times.end()) return n_records() - 1;
  const int k = static_cast<int>(it - record_times.begin());
  if (k > 0 && std::abs(record_times[static_cast<std::size_t>(k - 1)] - t) <
                   std::abs(record_times[static_cast<std::size_t>(k)] - t)) {
    return k - 1;
  }
  return k;
}

DiffusionFn named_field(const std::string& spec) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  double v = 0.0;
  if (colon == std::string::npos) throw InvalidArgument("diffusion field '" + spec + "': expected kind:value");
  try {
    std::size_t used = 0;
    v = std::stod(spec.substr(colon + 1), &used);
    if (used != spec.size() - colon - 1) throw std::invalid_argument("trailing characters");
  } catch (const std::exception&) {
    throw InvalidArgument("diffusion field '" + spec + "': bad number");
  }
  if (kind == "sin") {
    if (!(v >= 0.0)) throw InvalidArgument("diffusion field amplitude must be >= 0");
    return [v](double, double x) {
      const double s = std::sin(x);
      return 1.0 + v * s * s;
    };
  }
  if (kind == "const") {
    if (!(v >= 0.0)) throw InvalidArgument("diffusion field value must be >= 0");
    return [v](double, double) { return v; };
  }
  throw InvalidArgument("unknown diffusion field '" + spec + "'");
}

int worker_count(int requested) {
  int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  if (n <= 0) n = 1;
  if (const char* env = std::getenv("MBB_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  return n;
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index) {
  auto splitmix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return splitmix(splitmix(seed) ^ splitmix(index + 0x632be59bd9b4e019ULL));
}

PathEnsemble simulate_sde(const DiscreteMeasure& mu0, const DiffusionFn& a, const SdeOptions& opts) {
  if (opts.n_paths < 1) throw InvalidArgument("simulate_sde: n_paths must be >= 1");
  if (opts.n_records < 1) throw InvalidArgument("simulate_sde: n_records must be >= 1");
  if (!(opts.dt > 0.0)) throw InvalidArgument("simulate_sde: dt must be positive");
  if (!(opts.t_end > opts.t_start)) throw InvalidArgument("simulate_sde: empty time interval");

  PathEnsemble ens;
  ens.seed = opts.seed;
  ens.n_paths = opts.n_paths;
  const double span = (opts.t_end - opts.t_start) / opts.n_records;
  const int steps_per_record = std::max(1, static_cast<int>(std::ceil(span / opts.dt - 1e-9)));
  ens.dt = span / steps_per_record;
  for (int r = 0; r <= opts.n_records; ++r) {
    ens.record_times.push_back(r == opts.n_records ? opts.t_end : opts.t_start + r * span);
  }
  const std::size_t n_rec = ens.record_times.size();
  ens.x.assign(static_cast<std::size_t>(opts.n_paths) * n_rec, 0.0);
  ens.qv.assign(static_cast<std::size_t>(opts.n_paths) * n_rec, 0.0);
  ens.substeps.assign(static_cast<std::size_t>(opts.n_paths), 0);

  std::vector<double> cdf(static_cast<std::size_t>(mu0.size()));
  double acc = 0.0;
  for (int j = 0; j < mu0.size(); ++j) {
    acc += mu0.weight(j);
    cdf[static_cast<std::size_t>(j)] = acc;
  }
  const Grid1D g0 = mu0.grid();
  const double step2 = opts.step_length * opts.step_length;
  auto eval_a = [&](double t, double x) {
    const double v = a(t, x);
    if (std::isnan(v)) return 0.0;
    return std::max(v, 0.0);
  };

  auto run_path = [&](int p) {
    std::mt19937_64 rng(stream_seed(opts.seed, static_cast<std::uint64_t>(p)));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double u = unif(rng) * acc;
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const int cell = std::min(static_cast<int>(it - cdf.begin()), g0.n_cells - 1);
    double x = g0.center(cell);
    std::int64_t count = 0;
    const std::size_t base = static_cast<std::size_t>(p) * n_rec;
    ens.x[base] = x;
    ens.qv[base] = eval_a(opts.t_start, x);
    for (std::size_t r = 1; r < n_rec; ++r) {
      const double t_rec0 = ens.record_times[r - 1];
      for (int s = 0; s < steps_per_record; ++s) {
        double t = t_rec0 + s * ens.dt;
        double remaining = ens.dt;
        while (remaining > 0.0) {
          const double av = eval_a(t, x);
          double h = remaining;
          if (step2 > 0.0 && av * h > step2) h = step2 / av;
          if (!std::isfinite(av)) h = 0.0;
          if (h <= 0.0 || h < remaining * 1e-300) {
            // Infinite diffusion: take a full spatial step without advancing time.
            x += opts.step_length * (normal(rng) >= 0.0 ? 1.0 : -1.0);
          } else {
            x += std::sqrt(av * h) * normal(rng);
            t += h;
            remaining -= h;
            if (remaining < 1e-15 * ens.dt) remaining = 0.0;
          }
          if (++count > opts.max_substeps_per_path) {
            throw NonConvergence("simulate_sde: path exceeded the substep cap",
                                 static_cast<int>(std::min<std::int64_t>(count, INT32_MAX)), x);
          }
        }
      }
      ens.x[base + r] = x;
      ens.qv[base + r] = eval_a(ens.record_times[r], x);
    }
    ens.substeps[static_cast<std::size_t>(p)] = count;
  };

  const int workers = std::min(worker_count(opts.threads), opts.n_paths);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  auto chunk = [&](int w) {
    try {
      for (int p = w; p < opts.n_paths; p += workers) run_path(p);
    } catch (...) {
      errors[static_cast<std::size_t>(w)] = std::current_exception();
    }
  };
  if (workers == 1) {
    chunk(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(chunk, w);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return ens;
}

PathEnsemble simulate_sde(const DiscreteMeasure& mu0, const DiffusionField& a, const SdeOptions& opts) {
  return simulate_sde(mu0, a.as_function(), opts);
}

DiscreteMeasure empirical_measure(const PathEnsemble& ens, int rec, const Grid1D& grid) {
  std::vector<double> w(static_cast<std::size_t>(grid.n_cells), 0.0);
  const double m = 1.0 / ens.n_paths;
  for (int p = 0; p < ens.n_paths; ++p) {
    w[static_cast<std::size_t>(grid.cell_of(ens.position(p, rec)))] += m;
  }
  return DiscreteMeasure::normalized(grid, std::move(w));
}

double marginal_distance(const PathEnsemble& ens, int rec, const DiscreteMeasure& rho) {
  return wasserstein1(empirical_measure(ens, rec, rho.grid()), rho);
}

nlohmann::json to_json(const DiffusionField& a) {
  return {{"times", a.times()}, {"grid", to_json(a.grid())}, {"values", a.values()}};
}

DiffusionField diffusion_from_json(const nlohmann::json& j) {
  try {
    return DiffusionField(j.at("times").get<std::vector<double>>(), grid_from_json(j.at("grid")),
                          j.at("values").get<std::vector<std::vector<double>>>());
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("diffusion json: ") + e.what());
  }
}

nlohmann::json to_json(const MeasureCurve& c) {
  return {{"times", c.times}, {"grid", to_json(c.grid)}, {"slices", c.slices}};
}

MeasureCurve curve_from_json(const nlohmann::json& j) {
  try {
    MeasureCurve c;
    c.grid = grid_from_json(j.at("grid"));
    c.times = j.at("times").get<std::vector<double>>();
    c.slices = j.at("slices").get<std::vector<std::vector<double>>>();
    if (c.times.size() != c.slices.size()) throw InvalidArgument("curve json: size mismatch");
    for (const auto& s : c.slices) {
      if (static_cast<int>(s.size()) != c.grid.n_cells) throw GridMismatch("curve json: slice size");
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("curve json: ") + e.what());
  }
}

void write_csv(std::ostream& out, const MeasureCurve& c) {
  out << "t,x,value\n";
  out.precision(12);
  for (int k = 0; k < c.n_slices(); ++k) {
    for (int j = 0; j < c.grid.n_cells; ++j) {
      out << c.times[static_cast<std::size_t>(k)] << ',' << c.grid.center(j) << ','
          << c.slices[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] << '\n';
    }
  }
}

void write_csv(std::ostream& out, const DiffusionField& a) {
  out << "t,x,value\n";
  out.precision(12);
  for (std::size_t k = 0; k < a.times().size(); ++k) {
    for (int j = 0; j < a.grid().n_cells; ++j) {
      out << a.times()[k] << ',' << a.grid().center(j) << ',' << a.value(static_cast<int>(k), j) << '\n';
    }
  }
}

}  // namespace mbb
