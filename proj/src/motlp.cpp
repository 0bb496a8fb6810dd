#include "mbb/motlp.hpp"

#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>

#include "mbb/errors.hpp"

namespace mbb {

namespace {
constexpr double kSupportFloor = 1e-14;
}

void compute_residuals(MartingaleCoupling& c, const DiscreteMeasure& mu,
                       const DiscreteMeasure& nu) {
  c.row_residual = 0.0;
  c.column_residual = 0.0;
  c.martingale_residual = 0.0;
  std::vector<double> col(static_cast<std::size_t>(nu.size()), 0.0);
  for (int i = 0; i < mu.size(); ++i) {
    double row = 0.0;
    double drift = 0.0;
    const double x = mu.grid().center(i);
    for (int j = 0; j < nu.size(); ++j) {
      const double w = c.at(i, j);
      row += w;
      drift += w * (nu.grid().center(j) - x);
      col[static_cast<std::size_t>(j)] += w;
    }
    c.row_residual = std::max(c.row_residual, std::abs(row - mu.weight(i)));
    c.martingale_residual = std::max(c.martingale_residual, std::abs(drift));
  }
  for (int j = 0; j < nu.size(); ++j) {
    c.column_residual =
        std::max(c.column_residual, std::abs(col[static_cast<std::size_t>(j)] - nu.weight(j)));
  }
}

MartingaleCoupling solve_mot_lp(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                                const PairCost& cost, const LpOptions& opts) {
  std::vector<int> src;
  std::vector<int> tgt;
  for (int i = 0; i < mu.size(); ++i) {
    if (mu.weight(i) > kSupportFloor) src.push_back(i);
  }
  for (int j = 0; j < nu.size(); ++j) {
    if (nu.weight(j) > kSupportFloor) tgt.push_back(j);
  }
  const int ns = static_cast<int>(src.size());
  const int nt = static_cast<int>(tgt.size());
  // Rows: [0, ns) source marginals, [ns, 2ns) martingale, [2ns, 2ns+nt) target marginals.
  SparseColumns A;
  A.n_rows = 2 * ns + nt;
  std::vector<double> b(static_cast<std::size_t>(A.n_rows), 0.0);
  for (int a = 0; a < ns; ++a) b[static_cast<std::size_t>(a)] = mu.weight(src[static_cast<std::size_t>(a)]);
  for (int k = 0; k < nt; ++k) b[static_cast<std::size_t>(2 * ns + k)] = nu.weight(tgt[static_cast<std::size_t>(k)]);
  std::vector<double> c;
  c.reserve(static_cast<std::size_t>(ns) * static_cast<std::size_t>(nt));
  A.cols.reserve(static_cast<std::size_t>(ns) * static_cast<std::size_t>(nt));
  for (int a = 0; a < ns; ++a) {
    const double x = mu.grid().center(src[static_cast<std::size_t>(a)]);
    for (int k = 0; k < nt; ++k) {
      const double y = nu.grid().center(tgt[static_cast<std::size_t>(k)]);
      std::vector<int> rows{a, 2 * ns + k};
      std::vector<double> vals{1.0, 1.0};
      if (y != x) {
        rows.insert(rows.begin() + 1, ns + a);
        vals.insert(vals.begin() + 1, y - x);
      }
      A.add_column(std::move(rows), std::move(vals));
      c.push_back(cost(x, y));
    }
  }

  const bool interior =
      opts.method == LpMethod::InteriorPoint ||
      (opts.method == LpMethod::Auto && A.n_cols() > opts.simplex_max_columns);
  if (interior) {
    // The interior-point path cannot certify infeasibility, so certify feasibility first.
    const auto rep = convex_order_report(mu, nu, default_convex_order_tol(mu, nu));
    if (!rep.ordered) {
      std::ostringstream os;
      os << "martingale transport infeasible: measures are not in convex order (mean gap "
         << rep.mean_gap << ", max potential excess " << rep.max_violation << " at x = "
         << rep.argmax_x << ")";
      throw Infeasible(os.str(), rep.argmax_x, std::max(rep.max_violation, rep.mean_gap));
    }
  }
  const LpResult lp = solve_lp(A, b, c, opts);
  if (lp.status == LpStatus::Infeasible) {
    const auto rep = convex_order_report(mu, nu, 0.0);
    std::ostringstream os;
    os << "martingale transport infeasible: measures are not in convex order (mean gap "
       << rep.mean_gap << ", max potential excess " << rep.max_violation << " at x = "
       << rep.argmax_x << ")";
    throw Infeasible(os.str(), rep.argmax_x, std::max(rep.max_violation, rep.mean_gap));
  }
  if (lp.status != LpStatus::Optimal) {
    throw NonConvergence("martingale transport LP did not reach optimality", lp.iterations,
                         lp.phase1_infeasibility);
  }

  MartingaleCoupling out;
  out.source = mu.grid();
  out.target = nu.grid();
  out.pi.assign(static_cast<std::size_t>(mu.size()),
                std::vector<double>(static_cast<std::size_t>(nu.size()), 0.0));
  for (int a = 0; a < ns; ++a) {
    for (int k = 0; k < nt; ++k) {
      out.pi[static_cast<std::size_t>(src[static_cast<std::size_t>(a)])]
            [static_cast<std::size_t>(tgt[static_cast<std::size_t>(k)])] =
          lp.x[static_cast<std::size_t>(a) * static_cast<std::size_t>(nt) + static_cast<std::size_t>(k)];
    }
  }
  out.value = lp.objective;
  out.dual_value = lp.dual_objective;
  out.iterations = lp.iterations;
  compute_residuals(out, mu, nu);
  return out;
}

double rescaled_cumulative_cost(const std::vector<DiscreteMeasure>& marginals,
                                const std::vector<double>& partition,
                                const std::function<double(double)>& c_point) {
  if (marginals.size() != partition.size() || partition.size() < 2) {
    throw InvalidArgument("rescaled_cumulative_cost: need one marginal per partition node");
  }
  double total = 0.0;
  for (std::size_t i = 1; i < partition.size(); ++i) {
    const double dt = partition[i] - partition[i - 1];
    if (!(dt > 0.0)) throw InvalidArgument("rescaled_cumulative_cost: partition must increase");
    const double scale = 1.0 / std::sqrt(dt);
    const auto coupling = solve_mot_lp(marginals[i - 1], marginals[i], [&](double x, double y) {
      return c_point((y - x) * scale);
    });
    total += coupling.value * dt;
  }
  return total;
}

PairCost pair_cost(const std::string& spec, const Grid1D& source, const Grid1D& target) {
  if (spec == "abs") return [](double x, double y) { return std::abs(y - x); };
  if (spec.size() >= 4 && spec.substr(spec.size() - 4) == ".csv") {
    std::ifstream in(spec);
    if (!in) throw InvalidArgument("cannot open cost table " + spec);
    auto table = std::make_shared<std::vector<std::vector<double>>>();
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<double> row;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) {
        try {
          row.push_back(std::stod(cell));
        } catch (const std::exception&) {
          throw InvalidArgument("cost table " + spec + ": bad entry '" + cell + "'");
        }
      }
      table->push_back(std::move(row));
    }
    if (static_cast<int>(table->size()) != source.n_cells) {
      throw InvalidArgument("cost table " + spec + ": need one row per source cell");
    }
    for (const auto& row : *table) {
      if (static_cast<int>(row.size()) != target.n_cells) {
        throw InvalidArgument("cost table " + spec + ": need one column per target cell");
      }
    }
    return [table, source, target](double x, double y) {
      return (*table)[static_cast<std::size_t>(source.cell_of(x))][static_cast<std::size_t>(target.cell_of(y))];
    };
  }
  if (spec.rfind("power", 0) == 0) {
    double k = 0.0;
    try {
      std::size_t used = 0;
      k = std::stod(spec.substr(5), &used);
      if (used != spec.size() - 5) k = 0.0;
    } catch (const std::exception&) {
      k = 0.0;
    }
    if (!(k > 0.0)) throw InvalidArgument("pair cost '" + spec + "': exponent must be positive");
    if (k == 2.0) return [](double x, double y) { return (y - x) * (y - x); };
    return [k](double x, double y) { return std::pow(std::abs(y - x), k); };
  }
  throw InvalidArgument("unknown pair cost '" + spec + "'");
}

nlohmann::json to_json(const MartingaleCoupling& c) {
  return {{"source", to_json(c.source)},
          {"target", to_json(c.target)},
          {"pi", c.pi},
          {"value", c.value},
          {"dual_value", c.dual_value},
          {"residuals",
           {{"row", c.row_residual},
            {"column", c.column_residual},
            {"martingale", c.martingale_residual}}},
          {"iterations", c.iterations}};
}

}  // namespace mbb
