#include "mbb/relaxation.hpp"

#include <algorithm>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <cmath>
#include <exception>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "mbb/costs.hpp"
#include "mbb/errors.hpp"
#include "mbb/motlp.hpp"

namespace mbb {

namespace {

Estimate mean_and_se(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  Estimate e;
  if (v.empty()) return e;
  e.value = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() < 2) return e;
  double ss = 0.0;
  for (double x : v) ss += (x - e.value) * (x - e.value);
  e.se = std::sqrt(ss / (n - 1.0) / n);
  return e;
}

// d/dm |m|^{1/p} times se, or se^{1/p} when m vanishes.
double power_se(double m, double se, double p) {
  if (std::abs(m) > 0.0) return std::pow(std::abs(m), 1.0 / p - 1.0) * se / p;
  return std::pow(se, 1.0 / p);
}

std::vector<int> snap(const PathEnsemble& ens, const Partition& pi, int& moved) {
  pi.validate();
  if (ens.n_records() < 2) throw InvalidArgument("relaxation: ensemble has no records");
  std::vector<int> idx;
  moved = 0;
  for (double t : pi.times) {
    const int k = ens.record_index(t);
    if (std::abs(ens.record_times[static_cast<std::size_t>(k)] - t) > 1e-12) ++moved;
    if (!idx.empty() && k <= idx.back()) {
      throw InvalidArgument("relaxation: partition is finer than the path record grid");
    }
    idx.push_back(k);
  }
  return idx;
}

void check_mode(RelaxMode mode, double p) {
  if (mode == RelaxMode::PowerOneOverP && !(p > 0.0)) throw InvalidArgument("relaxation: p must be positive");
}

}  // namespace

Partition Partition::uniform(int n) {
  if (n < 1) throw InvalidArgument("Partition::uniform: n must be >= 1");
  Partition pi;
  for (int i = 0; i <= n; ++i) pi.times.push_back(i == n ? 1.0 : static_cast<double>(i) / n);
  return pi;
}

double Partition::mesh() const {
  double m = 0.0;
  for (std::size_t i = 1; i < times.size(); ++i) m = std::max(m, times[i] - times[i - 1]);
  return m;
}

void Partition::validate() const {
  if (times.size() < 2) throw InvalidArgument("Partition: need at least two nodes");
  if (times.front() != 0.0 || times.back() != 1.0) throw InvalidArgument("Partition: must run from 0 to 1");
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) throw InvalidArgument("Partition: times must increase strictly");
  }
}

CumulativeCost discrete_cumulative_cost(const PathEnsemble& ens, const Partition& pi, const PointCost& c,
                                        RelaxMode mode, double p) {
  check_mode(mode, p);
  CumulativeCost out;
  const std::vector<int> idx = snap(ens, pi, out.moved_nodes);
  for (int k : idx) out.snapped.times.push_back(ens.record_times[static_cast<std::size_t>(k)]);
  const int n = ens.n_paths;
  const std::size_t n_int = idx.size() - 1;
  std::vector<double> sums(static_cast<std::size_t>(n), 0.0);
  std::vector<double> term(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < n_int; ++i) {
    const double dt = out.snapped.times[i + 1] - out.snapped.times[i];
    const double scale = 1.0 / std::sqrt(dt);
    for (int q = 0; q < n; ++q) {
      const double dx = ens.position(q, idx[i + 1]) - ens.position(q, idx[i]);
      term[static_cast<std::size_t>(q)] = c(dx * scale);
      sums[static_cast<std::size_t>(q)] += term[static_cast<std::size_t>(q)] * dt;
    }
    out.terms.push_back(mean_and_se(term));
  }
  if (mode == RelaxMode::Plain) {
    const Estimate e = mean_and_se(sums);
    out.value = e.value;
    out.se = e.se;
    out.per_path = std::move(sums);
  } else {
    for (std::size_t i = 0; i < n_int; ++i) {
      const double dt = out.snapped.times[i + 1] - out.snapped.times[i];
      out.value += std::pow(std::abs(out.terms[i].value), 1.0 / p) * dt;
      // Intervals share paths; adding the errors linearly is the conservative combination.
      out.se += power_se(out.terms[i].value, out.terms[i].se, p) * dt;
    }
  }
  return out;
}

RelaxationRhs relaxation_rhs(const PathEnsemble& ens, const PointCost& c, RelaxMode mode, double p,
                             int quad_order) {
  check_mode(mode, p);
  const int n_rec = ens.n_records();
  if (n_rec < 2) throw InvalidArgument("relaxation_rhs: ensemble has no records");
  const GaussHermite& gh = gauss_hermite(quad_order);
  auto smeared = [&](double a) {
    const double s = std::sqrt(std::max(a, 0.0));
    double acc = 0.0;
    for (std::size_t k = 0; k < gh.nodes.size(); ++k) acc += gh.weights[k] * c(s * gh.nodes[k]);
    return acc;
  };
  std::vector<double> w(static_cast<std::size_t>(n_rec), 0.0);
  for (int k = 0; k + 1 < n_rec; ++k) {
    const double half = 0.5 * (ens.record_times[static_cast<std::size_t>(k + 1)] -
                               ens.record_times[static_cast<std::size_t>(k)]);
    w[static_cast<std::size_t>(k)] += half;
    w[static_cast<std::size_t>(k + 1)] += half;
  }

  RelaxationRhs out;
  const int n = ens.n_paths;
  if (mode == RelaxMode::Plain) {
    out.per_path.assign(static_cast<std::size_t>(n), 0.0);
    for (int q = 0; q < n; ++q) {
      double acc = 0.0;
      for (int k = 0; k < n_rec; ++k) acc += w[static_cast<std::size_t>(k)] * smeared(ens.diffusion(q, k));
      out.per_path[static_cast<std::size_t>(q)] = acc;
    }
    const Estimate e = mean_and_se(out.per_path);
    out.value = e.value;
    out.se = e.se;
    return out;
  }
  std::vector<double> col(static_cast<std::size_t>(n));
  for (int k = 0; k < n_rec; ++k) {
    for (int q = 0; q < n; ++q) col[static_cast<std::size_t>(q)] = smeared(ens.diffusion(q, k));
    const Estimate e = mean_and_se(col);
    out.value += w[static_cast<std::size_t>(k)] * std::pow(std::abs(e.value), 1.0 / p);
    out.se += w[static_cast<std::size_t>(k)] * power_se(e.value, e.se, p);
  }
  return out;
}

ConvergenceTable relaxation_convergence(const PathEnsemble& ens, const std::vector<double>& meshes,
                                        const PointCost& c, RelaxMode mode, double p, double tol_scheme) {
  if (meshes.empty()) throw InvalidArgument("relaxation_convergence: no meshes");
  const RelaxationRhs rhs = relaxation_rhs(ens, c, mode, p);
  ConvergenceTable table;
  table.tol_scheme = tol_scheme;
  for (double mesh : meshes) {
    const double inv = 1.0 / mesh;
    const long n = std::lround(inv);
    if (!(mesh > 0.0) || n < 1 || std::abs(inv - static_cast<double>(n)) > 1e-9 * inv) {
      throw InvalidArgument("relaxation_convergence: meshes must be 1/n");
    }
    const CumulativeCost lhs = discrete_cumulative_cost(ens, Partition::uniform(static_cast<int>(n)), c, mode, p);
    ConvergenceRow row;
    row.mesh = mesh;
    row.lhs = lhs.value;
    row.rhs = rhs.value;
    row.diff = std::abs(lhs.value - rhs.value);
    if (mode == RelaxMode::Plain) {
      std::vector<double> d(lhs.per_path.size());
      for (std::size_t q = 0; q < d.size(); ++q) d[q] = lhs.per_path[q] - rhs.per_path[q];
      row.se = mean_and_se(d).se;
    } else {
      row.se = lhs.se + rhs.se;
    }
    table.rows.push_back(row);
  }

  std::vector<ConvergenceRow> by_mesh = table.rows;
  std::sort(by_mesh.begin(), by_mesh.end(), [](const auto& a, const auto& b) { return a.mesh > b.mesh; });
  const ConvergenceRow& finest = by_mesh.back();
  table.finest_within_tolerance = finest.diff <= std::max(3.0 * finest.se, tol_scheme);
  table.non_increasing = true;
  for (std::size_t i = 1; i < by_mesh.size(); ++i) {
    const double band = 2.0 * std::max(by_mesh[i].se, by_mesh[i - 1].se);
    if (by_mesh[i].diff > by_mesh[i - 1].diff + band) table.non_increasing = false;
  }
  return table;
}

MartingaleTest martingale_test(const PathEnsemble& ens, const Partition& pi, int n_bins, int min_count) {
  if (n_bins < 1) throw InvalidArgument("martingale_test: n_bins must be >= 1");
  int moved = 0;
  const std::vector<int> idx = snap(ens, pi, moved);
  MartingaleTest out;
  const int n = ens.n_paths;
  std::vector<int> order(static_cast<std::size_t>(n));
  std::vector<double> inc;
  for (std::size_t i = 0; i + 1 < idx.size(); ++i) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return ens.position(a, idx[i]) < ens.position(b, idx[i]); });
    for (int b = 0; b < n_bins; ++b) {
      const int lo = static_cast<int>(static_cast<long>(n) * b / n_bins);
      const int hi = static_cast<int>(static_cast<long>(n) * (b + 1) / n_bins);
      if (hi - lo < min_count) continue;
      inc.clear();
      for (int k = lo; k < hi; ++k) {
        const int q = order[static_cast<std::size_t>(k)];
        inc.push_back(ens.position(q, idx[i + 1]) - ens.position(q, idx[i]));
      }
      const Estimate e = mean_and_se(inc);
      ++out.bins_tested;
      if (e.se > 0.0) {
        out.max_ratio = std::max(out.max_ratio, std::abs(e.value) / e.se);
      } else if (e.value != 0.0) {
        out.max_ratio = std::numeric_limits<double>::infinity();
      }
    }
  }
  return out;
}

double time_change(double t, double r) {
  if (!(r > 0.0)) throw InvalidArgument("time_change: r must be positive");
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return std::numeric_limits<double>::infinity();
  return std::pow(t / (1.0 - t), 1.0 / r);
}

double time_change_inverse(double s, double r) {
  if (!(r > 0.0)) throw InvalidArgument("time_change_inverse: r must be positive");
  if (s <= 0.0) return 0.0;
  const double u = std::pow(s, r);
  return u / (1.0 + u);
}

double time_changed_record_integral(double tau, double r, double k) {
  if (!(r > 0.0) || !(k > 0.0)) throw InvalidArgument("time_changed_record_integral: r and k must be positive");
  if (!(tau > 0.0)) return 0.0;
  const double u = std::pow(tau, r);
  const double T = u / (1.0 + u);
  const double one_minus_T = 1.0 / (1.0 + u);
  // beta'_t = t^{1/r - 1} (1 - t)^{-1/r - 1} / r; the complement argument keeps 1 - t accurate near T.
  auto integrand = [&](double t, double tc) {
    const double omt = t <= 0.5 * T ? 1.0 - t : one_minus_T + tc;
    if (t <= 0.0) return 0.0;
    const double log_b = (1.0 / r - 1.0) * std::log(t) - (1.0 / r + 1.0) * std::log(omt) - std::log(r);
    return std::exp(k * log_b);
  };
  boost::math::quadrature::tanh_sinh<double> ts;
  return ts.integrate(integrand, 0.0, T);
}

EmbeddingRun skorokhod_time_change(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                                   const EmbeddingOptions& opts) {
  if (!(opts.p > 1.0)) throw InvalidArgument("skorokhod_time_change: p must exceed 1");
  if (!(opts.q_mom > 2.0 * opts.p)) throw InvalidArgument("skorokhod_time_change: need q_mom > 2p");
  const double r_max = (opts.q_mom - 2.0 * opts.p) / (2.0 * opts.p - 2.0);
  const double r = opts.r > 0.0 ? opts.r : r_max;
  if (!(r > 0.0) || r > r_max * (1.0 + 1e-12)) {
    std::ostringstream os;
    os << "skorokhod_time_change: r = " << r << " outside (0, " << r_max << "]";
    throw InvalidArgument(os.str());
  }
  if (opts.n_paths < 2) throw InvalidArgument("skorokhod_time_change: n_paths must be >= 2");
  if (opts.lattice_refinement < 1) throw InvalidArgument("skorokhod_time_change: lattice_refinement must be >= 1");
  if (!(mu.grid() == nu.grid())) throw GridMismatch("skorokhod_time_change: mu and nu must share a grid");
  const ConvexOrderReport rep = convex_order_report(mu, nu, default_convex_order_tol(mu, nu));
  if (!rep.ordered) {
    std::ostringstream os;
    os << "skorokhod_time_change: mu and nu are not in convex order (violation " << rep.max_violation << " at x = "
       << rep.argmax_x << ")";
    throw Infeasible(os.str(), rep.argmax_x, std::max(rep.max_violation, rep.mean_gap));
  }

  const Grid1D& g = nu.grid();
  const int nx = g.n_cells;
  const int m = opts.lattice_refinement;
  const double delta = g.h() / m;

  // Target kernel per source cell: nu itself for a point start, otherwise a martingale coupling.
  std::vector<int> sources;
  for (int i = 0; i < nx; ++i) {
    if (mu.weight(i) > 0.0) sources.push_back(i);
  }
  std::vector<std::vector<double>> kernel(static_cast<std::size_t>(nx));
  if (sources.size() == 1) {
    kernel[static_cast<std::size_t>(sources[0])].assign(nu.weights().begin(), nu.weights().end());
  } else {
    const auto coupling = solve_mot_lp(mu, nu, [](double x, double y) { return (y - x) * (y - x); });
    for (int i : sources) kernel[static_cast<std::size_t>(i)] = coupling.pi[static_cast<std::size_t>(i)];
  }

  // Azema-Yor data per source: atoms y_i in increasing order and the barycentres
  // psi_i = E[Y | Y >= y_i]. While the running maximum lies in [psi_i, psi_{i+1}) the path
  // stops on reaching y_i, so the run is a chain of exits from (y_i, psi_{i+1}) started at psi_i.
  struct Barrier {
    std::vector<double> y;
    std::vector<double> psi;
  };
  std::vector<Barrier> barrier(static_cast<std::size_t>(nx));
  for (int i : sources) {
    const auto& k = kernel[static_cast<std::size_t>(i)];
    const double total = std::accumulate(k.begin(), k.end(), 0.0);
    Barrier b;
    std::vector<double> w;
    for (int j = 0; j < nx; ++j) {
      if (k[static_cast<std::size_t>(j)] > 1e-14 * total) {
        b.y.push_back(g.center(j));
        w.push_back(k[static_cast<std::size_t>(j)]);
      }
    }
    b.psi.assign(w.size(), 0.0);
    double mass = 0.0;
    double moment = 0.0;
    for (std::size_t a = w.size(); a-- > 0;) {
      mass += w[a];
      moment += w[a] * b.y[a];
      b.psi[a] = moment / mass;
    }
    barrier[static_cast<std::size_t>(i)] = std::move(b);
  }

  std::vector<double> cdf;
  double acc = 0.0;
  for (int i : sources) {
    acc += mu.weight(i);
    cdf.push_back(acc);
  }

  EmbeddingRun run;
  run.nu = nu;
  run.r = r;
  run.p = opts.p;
  const auto n = static_cast<std::size_t>(opts.n_paths);
  run.start.assign(n, 0.0);
  run.tau.assign(n, 0.0);
  run.stopped.assign(n, 0.0);
  run.cost.assign(n, 0.0);

  auto run_path = [&](int path) {
    std::mt19937_64 rng(stream_seed(opts.seed, static_cast<std::uint64_t>(path)));
    const double u = std::uniform_real_distribution<double>(0.0, acc)(rng);
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const int src = sources[std::min(static_cast<std::size_t>(it - cdf.begin()), sources.size() - 1)];
    const Barrier& b = barrier[static_cast<std::size_t>(src)];
    std::int64_t steps_total = 0;
    double tau = 0.0;
    std::uint64_t bits = 0;
    int left = 0;
    auto step = [&]() {
      if (left == 0) {
        bits = rng();
        left = 64;
      }
      const bool up = (bits & 1U) != 0;
      bits >>= 1U;
      --left;
      return up ? 1 : -1;
    };
    std::size_t seg = 0;
    // Segment seg: walk on a lattice from y_seg to psi_{seg+1} started next to psi_seg. The start
    // is randomised between the two neighbouring nodes with mean psi_seg, which keeps the exit
    // probabilities, linear in the start, exact.
    while (seg + 1 < b.y.size() && b.psi[seg] > b.y[seg]) {
      const double lo = b.y[seg];
      const double hi = b.psi[seg + 1];
      const long n_nodes = std::max<long>(2, static_cast<long>(std::ceil((hi - lo) / delta)));
      const double d = (hi - lo) / static_cast<double>(n_nodes);
      const double s = std::clamp((b.psi[seg] - lo) / d, 0.0, static_cast<double>(n_nodes));
      long k = static_cast<long>(std::floor(s));
      if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < s - static_cast<double>(k)) ++k;
      std::int64_t steps = 0;
      while (k > 0 && k < n_nodes) {
        k += step();
        if (++steps_total > opts.max_steps_per_path) {
          throw NonConvergence("skorokhod_time_change: path exceeded the step cap",
                               static_cast<int>(std::min<std::int64_t>(steps_total, INT32_MAX)), lo + k * d);
        }
        ++steps;
      }
      tau += static_cast<double>(steps) * d * d;
      if (k == 0) break;
      ++seg;
    }
    const auto q = static_cast<std::size_t>(path);
    run.start[q] = g.center(src);
    run.stopped[q] = b.y[seg];
    run.tau[q] = tau;
    run.cost[q] = time_changed_record_integral(run.tau[q], r, opts.p);
  };

  const int workers = std::min(worker_count(opts.threads), opts.n_paths);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  auto chunk = [&](int w) {
    try {
      for (int q = w; q < opts.n_paths; q += workers) run_path(q);
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

  run.expected_tau = mean_and_se(run.tau);
  run.expected_cost = mean_and_se(run.cost);
  const std::vector<double> half(run.cost.begin(), run.cost.begin() + static_cast<std::ptrdiff_t>(n / 2));
  run.first_half_cost = mean_and_se(half).value;
  run.stability_ratio = run.first_half_cost > 0.0 ? run.expected_cost.value / run.first_half_cost : 1.0;
  std::vector<double> hist(static_cast<std::size_t>(nx), 0.0);
  for (double x : run.stopped) hist[static_cast<std::size_t>(g.cell_of(x))] += 1.0;
  run.stopped_w1 = wasserstein1(DiscreteMeasure::normalized(g, std::move(hist)), nu);
  for (int j = 0; j < nx; ++j) run.q_moment += nu.weight(j) * std::pow(std::abs(g.center(j)), opts.q_mom);
  for (double t : run.tau) run.latest_time = std::max(run.latest_time, time_change_inverse(t, r));
  return run;
}

nlohmann::json to_json(const ConvergenceTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows) {
    rows.push_back({{"mesh", r.mesh}, {"lhs", r.lhs}, {"rhs", r.rhs}, {"diff", r.diff}, {"se", r.se}});
  }
  return {{"rows", rows},
          {"tol_scheme", t.tol_scheme},
          {"finest_within_tolerance", t.finest_within_tolerance},
          {"non_increasing", t.non_increasing}};
}

void write_csv(std::ostream& out, const ConvergenceTable& t) {
  out << "mesh,lhs,rhs,diff,se\n";
  out.precision(17);
  for (const auto& r : t.rows) out << r.mesh << ',' << r.lhs << ',' << r.rhs << ',' << r.diff << ',' << r.se << '\n';
}

nlohmann::json to_json(const EmbeddingRun& run) {
  return {{"r", run.r},
          {"p", run.p},
          {"n_paths", run.tau.size()},
          {"expected_tau", {{"value", run.expected_tau.value}, {"se", run.expected_tau.se}}},
          {"expected_cost", {{"value", run.expected_cost.value}, {"se", run.expected_cost.se}}},
          {"first_half_cost", run.first_half_cost},
          {"stability_ratio", run.stability_ratio},
          {"stopped_w1", run.stopped_w1},
          {"q_moment", run.q_moment},
          {"latest_time", run.latest_time}};
}

}  // namespace mbb
