// Acceptance gate: one line per criterion, non-zero exit when any is red.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mbb/costs.hpp"
#include "mbb/dual.hpp"
#include "mbb/errors.hpp"
#include "mbb/experiment.hpp"
#include "mbb/fpe.hpp"
#include "mbb/measures.hpp"
#include "mbb/motlp.hpp"

using nlohmann::json;
using namespace mbb;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

RunManifest run(const std::string& name, json params, std::uint64_t seed = 1) {
  return run_experiment(parse_config({{"experiment", name}, {"seed", seed}, {"params", std::move(params)}}));
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

// Failed checks of a manifest, or "" when it passed.
std::string failures(const RunManifest& m) {
  std::string out;
  for (const auto& c : m.checks) {
    if (!c.passed) out += " [" + m.experiment + " failed: " + c.name + " = " + fmt(c.value) + "]";
  }
  return out;
}

Outcome gaussian_exactness() {
  Outcome o{true, ""};
  for (double p : {2.0, 3.0}) {
    const auto m = run("gaussian", {{"p", p}, {"property_checks", false}});
    o.passed = o.passed && m.passed();
    const auto& r = m.results["primal"];
    const double value = r["value"].get<double>();
    const double gap = r["closed_form_gap"].get<double>() / value;
    if (!o.detail.empty()) o.detail += "; ";
    o.detail += "p=" + fmt(p, 2) + ": value " + fmt(value, 6) + " (tol " + (p == 2.0 ? "5%" : "7%") +
                "), closed-form gap " + fmt(100 * gap, 3) + "% (<= 7%)";
    o.detail += failures(m);
  }
  return o;
}

Outcome relaxation_limit() {
  const auto m = run("relax", {{"embed_paths", 100000}}, 7);
  const auto& t = m.results["convergence"]["rows"];
  std::string d = "x^4 |LHS-RHS| by mesh:";
  for (const auto& row : t) d += " " + fmt(row["mesh"].get<double>(), 3) + "->" + fmt(row["diff"].get<double>(), 3) +
                                 "(se " + fmt(row["se"].get<double>(), 2) + ")";
  const auto& q = m.results["quadratic"]["rows"][0];
  d += "; x^2 diff " + fmt(q["diff"].get<double>(), 3) + " se " + fmt(q["se"].get<double>(), 3);
  d += "; embedding E[tau] " + fmt(m.results["embedding"]["expected_tau"]["value"].get<double>(), 5) + ", W1 " +
       fmt(m.results["embedding"]["stopped_w1"].get<double>(), 3);
  return {m.passed(), d + failures(m)};
}

Outcome dacorogna_moser() {
  const auto m = run("dacmoser", json::object());
  const auto& r = m.results;
  double worst = 0.0;
  for (const auto& [k, v] : r["weak_residuals"].items()) worst = std::max(worst, v.get<double>());
  const std::string d = "f(0) " + fmt(r["f0"].get<double>(), 6) + " vs " + fmt(r["f0_oracle"].get<double>(), 6) +
                        " (+-0.002); worst weak residual " + fmt(worst, 3) + " (<= 1e-3); cost/bound " +
                        fmt(r["cost"]["value"].get<double>() / r["cost"]["bound"].get<double>(), 4) +
                        "; M_p(3,1,2) " + fmt(r["m_p"][0]["m_p"].get<double>(), 12);
  return {m.passed(), d + failures(m)};
}

Outcome friendly_giant() {
  const auto m = run("giant", json::object());
  const auto& r = m.results;
  std::string d = "profile residual " + fmt(r["profile_residual"].get<double>(), 3) + " (<= 1e-8); scheme residual " +
                  fmt(r["scheme_residual"].get<double>(), 3) + " (<= 1e-2)";
  for (const auto& [k, v] : r["terminal"].items()) {
    d += "; a = " + k + ": endpoint mass " + fmt(v["mass_near_endpoints"].get<double>(), 4) + ", |mean| " +
         fmt(v["max_abs_mean"].get<double>(), 2);
  }
  return {m.passed(), d + failures(m)};
}

Outcome strassen() {
  const auto m = run("strassen", json::object());
  const auto& s = m.results["strassen"];
  const auto& lp = m.results["lp"];
  const std::string d = "W1 source " + fmt(s["w1_source"].get<double>(), 3) + ", target " +
                        fmt(s["w1_target"].get<double>(), 3) + " (<= 0.1); mean defect " +
                        fmt(s["mean_defect"].get<double>(), 3) + " (<= 0.05); LP value " +
                        fmt(lp["value"].get<double>(), 12) + ", pi(0,+-1) " + fmt(lp["pi"][1][0].get<double>(), 12) +
                        "/" + fmt(lp["pi"][1][2].get<double>(), 12);
  return {m.passed(), d + failures(m)};
}

bool fenchel_young(std::string& d) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> pdist(1.1, 4.0), ldist(0.2, 3.0), adist(0.0, 5.0), udist(-5.0, 5.0);
  double worst_neg = 0.0;
  double worst_eq = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const CostSpec c = i % 5 == 0 ? CostSpec::pme_dual_from_q(1.0 + pdist(rng)) : CostSpec::power(pdist(rng), ldist(rng));
    const double a = adist(rng);
    const double u = udist(rng);
    worst_neg = std::min(worst_neg, c(a) + c.legendre(u) - a * u);
    const double ag = c.grad_legendre(u);
    worst_eq = std::max(worst_eq, std::abs(c(ag) + c.legendre(u) - ag * u) / std::max(1.0, std::abs(ag * u)));
  }
  d += "Fenchel-Young min gap " + fmt(worst_neg, 2) + ", max gap at grad " + fmt(worst_eq, 2);
  return worst_neg >= -1e-9 && worst_eq <= 1e-9;
}

bool convex_order_lp(std::string& d) {
  std::mt19937_64 rng(17);
  const Grid1D g(-4.5, 4.5, 9);
  auto random_measure = [&] {
    std::uniform_int_distribution<int> cell(2, g.n_cells - 3);
    std::uniform_real_distribution<double> w(0.1, 1.0);
    std::vector<double> ws(static_cast<std::size_t>(g.n_cells), 0.0);
    for (int k = 0; k < 3; ++k) ws[static_cast<std::size_t>(cell(rng))] += w(rng);
    return DiscreteMeasure::normalized(g, ws);
  };
  int agree = 0;
  int feasible = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto mu = random_measure();
    auto nu = random_measure();
    if (trial % 2 == 0) nu = convolve(mu, DiscreteMeasure::atoms(g, {{-1.0, 0.5}, {1.0, 0.5}}));
    const bool ordered = convex_order(mu, nu, 1e-10);
    bool lp_feasible = true;
    try {
      solve_mot_lp(mu, nu, [](double x, double y) { return (y - x) * (y - x); });
    } catch (const Infeasible&) {
      lp_feasible = false;
    }
    agree += ordered == lp_feasible ? 1 : 0;
    feasible += lp_feasible ? 1 : 0;
  }
  d += "; convex order = LP feasibility on " + std::to_string(agree) + "/50 pairs (" + std::to_string(feasible) +
       " feasible)";
  return agree == 50;
}

bool pme_principles(std::string& d) {
  const Grid1D g = dirichlet_grid(2.0, 201);
  auto bump = [&](double height, double r) {
    std::vector<double> u(static_cast<std::size_t>(g.n_cells));
    for (int j = 0; j < g.n_cells; ++j) {
      const double x = g.center(j) / r;
      u[static_cast<std::size_t>(j)] = std::max(0.0, height * (1.0 - x * x));
    }
    u.front() = 0.0;
    u.back() = 0.0;
    return u;
  };
  const auto low = bump(1.0, 1.5);
  const auto high = bump(2.0, 1.8);
  PmeOptions o;
  o.n_steps = 100;
  double max_excess = -1.0;
  double order_excess = -1.0;
  for (double q : {1.5, 2.0, 3.0}) {
    const auto a = solve_backward_pme(low, q, 2.0, o);
    const auto b = solve_backward_pme(high, q, 2.0, o);
    for (int k = 0; k < a.n_slices(); ++k) {
      for (std::size_t j = 0; j < low.size(); ++j) {
        max_excess = std::max(max_excess, a.u[k][j] - 1.0);
        max_excess = std::max(max_excess, -a.u[k][j]);
        order_excess = std::max(order_excess, a.u[k][j] - b.u[k][j]);
      }
    }
  }
  d += "; PME max(u - sup u1, -u) " + fmt(max_excess, 2) + ", max(u_low - u_high) " + fmt(order_excess, 2);
  return max_excess <= 1e-12 && order_excess <= 1e-12;
}

bool fpe_conservation(std::string& d) {
  const Grid1D g(-8.0, 8.0, 320);
  const auto mu = mollify(DiscreteMeasure::atoms(g, {{-1.0, 0.3}, {0.5, 0.7}}), 0.2);
  FpeOptions o;
  o.n_steps = 200;
  const auto c = solve_fpe(mu, named_field("sin:0.5"), o);
  double mass = 0.0;
  double mean = 0.0;
  for (int k = 0; k < c.n_slices(); ++k) {
    mass = std::max(mass, std::abs(c.mass(k) - 1.0));
    mean = std::max(mean, std::abs(c.mean(k) - c.mean(0)));
  }
  d += "; FPE mass error " + fmt(mass, 2) + ", mean drift " + fmt(mean, 2);
  return mass <= 1e-12 && mean <= 1e-8;
}

Outcome property_suites() {
  Outcome o{true, ""};
  o.passed = fenchel_young(o.detail) && o.passed;
  o.passed = convex_order_lp(o.detail) && o.passed;

  const auto sweep = run("duality-sweep", json::object());
  const auto gauss = run("gaussian", {{"p", 2.0}, {"property_checks", true}});
  o.passed = sweep.passed() && gauss.passed() && o.passed;
  int weak = 0;
  for (const auto& c : sweep.checks) weak += c.name.find("minus") != std::string::npos && c.passed ? 1 : 0;
  o.detail += "; weak duality holds on " + std::to_string(weak) + " bound checks";
  for (const auto& g : gauss.results["geodesic"]) {
    o.detail += "; geodesic [" + fmt(g["s"].get<double>(), 2) + "," + fmt(g["t"].get<double>(), 2) + "] deviation " +
                fmt(g["deviation"].get<double>(), 3);
  }
  const auto& con = gauss.results["contraction"];
  o.detail += "; contraction " + fmt(con["smoothed_value"].get<double>(), 5) + " <= " +
              fmt(con["value"].get<double>(), 5) + " (budget " + fmt(con["budget"].get<double>(), 2) + ")";
  o.detail += failures(sweep) + failures(gauss);

  o.passed = pme_principles(o.detail) && o.passed;
  o.passed = fpe_conservation(o.detail) && o.passed;

  bool identical = true;
  for (const auto& [name, params] :
       std::vector<std::pair<std::string, json>>{{"relax", {{"n_paths", 5000}, {"embed_paths", 5000}}},
                                                 {"strassen", {{"n_paths", 5000}}},
                                                 {"dacmoser", json::object()}}) {
    const auto a = to_json(run(name, params, 3), false).dump();
    const auto b = to_json(run(name, params, 3), false).dump();
    identical = identical && a == b;
  }
  o.detail += std::string("; re-run manifests ") + (identical ? "bitwise identical" : "DIFFER");
  o.passed = identical && o.passed;
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double budget_seconds;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"1 Gaussian transport exactness", 120.0, gaussian_exactness},
      {"2 Relaxation limit", 300.0, relaxation_limit},
      {"3 Dacorogna-Moser", 60.0, dacorogna_moser},
      {"4 Friendly giant", 180.0, friendly_giant},
      {"5 Strassen construction", 120.0, strassen},
      {"6 Property suites", 600.0, property_suites},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_seconds;
    const bool ok = o.passed && in_time;
    failed += ok ? 0 : 1;
    std::cout << (ok ? "PASS " : "FAIL ") << c.name << " (" << fmt(secs, 3) << " s, budget " << c.budget_seconds
              << " s" << (in_time ? "" : ", OVER BUDGET") << "): " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
