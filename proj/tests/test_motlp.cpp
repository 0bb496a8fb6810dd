#include <cmath>
#include <random>

#include "doctest.h"
#include "mbb/errors.hpp"
#include "mbb/motlp.hpp"

using namespace mbb;

namespace {

const Grid1D kUnit(-3.5, 3.5, 7);  // centres at the integers -3..3

DiscreteMeasure atoms(std::vector<std::pair<double, double>> xw) {
  return DiscreteMeasure::atoms(kUnit, xw);
}

double sq(double x, double y) { return (y - x) * (y - x); }

DiscreteMeasure random_measure(const Grid1D& g, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> cell(2, g.n_cells - 3);
  std::uniform_real_distribution<double> w(0.1, 1.0);
  std::vector<double> ws(static_cast<std::size_t>(g.n_cells), 0.0);
  for (int k = 0; k < 3; ++k) ws[static_cast<std::size_t>(cell(rng))] += w(rng);
  return DiscreteMeasure::normalized(g, ws);
}

}  // namespace

TEST_CASE("dirac to two points") {
  const auto mu = atoms({{0.0, 1.0}});
  const auto nu = atoms({{-1.0, 0.5}, {1.0, 0.5}});
  const auto c = solve_mot_lp(mu, nu, sq);
  CHECK(c.value == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(c.at(3, 2) == doctest::Approx(0.5));
  CHECK(c.at(3, 4) == doctest::Approx(0.5));
  CHECK(c.dual_value == doctest::Approx(c.value).epsilon(1e-9));
}

TEST_CASE("two points to two points") {
  const auto mu = atoms({{-1.0, 0.5}, {1.0, 0.5}});
  const auto nu = atoms({{-2.0, 0.5}, {2.0, 0.5}});
  const auto c = solve_mot_lp(mu, nu, sq);
  CHECK(c.value == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(c.at(2, 1) == doctest::Approx(3.0 / 8));
  CHECK(c.at(2, 5) == doctest::Approx(1.0 / 8));
  CHECK(c.at(4, 5) == doctest::Approx(3.0 / 8));
  CHECK(c.at(4, 1) == doctest::Approx(1.0 / 8));
  CHECK(c.row_residual <= 1e-9);
  CHECK(c.column_residual <= 1e-9);
  CHECK(c.martingale_residual <= 1e-8);
}

TEST_CASE("means differ is infeasible") {
  const auto mu = atoms({{1.0, 1.0}});
  const auto nu = atoms({{0.0, 1.0}});
  CHECK_THROWS_AS(solve_mot_lp(mu, nu, sq), Infeasible);
  const auto wide = atoms({{-2.0, 0.5}, {2.0, 0.5}});
  const auto narrow = atoms({{-1.0, 0.5}, {1.0, 0.5}});
  try {
    solve_mot_lp(wide, narrow, sq);
    FAIL("expected Infeasible");
  } catch (const Infeasible& e) {
    CHECK(std::abs(e.crossing_x()) <= 1.0);
    CHECK(e.violation() > 0.0);
  }
}

TEST_CASE("adding separable terms shifts the optimum") {
  const Grid1D g(-4.5, 4.5, 9);
  const auto mu = DiscreteMeasure::atoms(g, {{-1.0, 0.3}, {0.0, 0.4}, {1.0, 0.3}});
  const auto nu =
      DiscreteMeasure::atoms(g, {{-3.0, 0.1}, {-1.0, 0.3}, {0.0, 0.2}, {1.0, 0.3}, {3.0, 0.1}});
  REQUIRE(convex_order(mu, nu));
  auto cost = [](double x, double y) { return std::abs(y - x) + 0.3 * std::pow(y - x, 4) - x * y; };
  auto f = [](double x) { return std::sin(x); };
  auto h = [](double y) { return y * y * 0.5 - 1.0; };
  const auto base = solve_mot_lp(mu, nu, cost);
  const auto shifted =
      solve_mot_lp(mu, nu, [&](double x, double y) { return cost(x, y) + f(x) + h(y); });
  double ef = 0.0;
  double eh = 0.0;
  for (int i = 0; i < g.n_cells; ++i) {
    ef += f(g.center(i)) * mu.weight(i);
    eh += h(g.center(i)) * nu.weight(i);
  }
  CHECK(std::abs(shifted.value - base.value - ef - eh) <= 1e-8);
  CHECK(std::abs(base.value - base.dual_value) <= 1e-7);
  CHECK(std::abs(shifted.value - shifted.dual_value) <= 1e-7);
}

TEST_CASE("feasibility matches convex order on random pairs") {
  std::mt19937_64 rng(99);
  const Grid1D g(-4.5, 4.5, 9);
  int feasible = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const auto mu = random_measure(g, rng);
    auto nu = random_measure(g, rng);
    if (trial % 2 == 0) {
      // Force equal means so that ordered pairs occur: nu = mu * centred two-point.
      nu = convolve(mu, DiscreteMeasure::atoms(g, {{-1.0, 0.5}, {1.0, 0.5}}));
    }
    const bool ordered = convex_order(mu, nu, 1e-10);
    bool lp_feasible = true;
    try {
      const auto c = solve_mot_lp(mu, nu, sq);
      CHECK(c.martingale_residual <= 1e-8);
      CHECK(std::abs(c.value - c.dual_value) <= 1e-7);
    } catch (const Infeasible&) {
      lp_feasible = false;
    }
    CHECK(ordered == lp_feasible);
    feasible += lp_feasible ? 1 : 0;
  }
  CHECK(feasible >= 20);
}

TEST_CASE("cumulative cost along a constant curve vanishes") {
  const Grid1D g(-3.0, 3.0, 30);
  const auto rho = DiscreteMeasure::gaussian(g, 0.0, 0.5);
  const std::vector<DiscreteMeasure> curve(5, rho);
  const std::vector<double> times{0.0, 0.25, 0.5, 0.75, 1.0};
  CHECK(std::abs(rescaled_cumulative_cost(curve, times, [](double x) { return x * x; })) <= 1e-10);
  CHECK(std::abs(rescaled_cumulative_cost(curve, times, [](double x) { return std::abs(x); })) <= 1e-10);
}

TEST_CASE("cumulative cost is non-negative for non-negative costs") {
  const Grid1D g(-4.5, 4.5, 9);
  const std::vector<DiscreteMeasure> curve{
      DiscreteMeasure::dirac(g, 0.0), DiscreteMeasure::atoms(g, {{-1.0, 0.5}, {1.0, 0.5}}),
      DiscreteMeasure::atoms(g, {{-2.0, 0.5}, {2.0, 0.5}})};
  const std::vector<double> times{0.0, 0.5, 1.0};
  CHECK(rescaled_cumulative_cost(curve, times, [](double x) { return std::abs(x); }) >= 0.0);
  CHECK(rescaled_cumulative_cost(curve, times, [](double x) { return x * x; }) ==
        doctest::Approx(4.0));
  CHECK_THROWS_AS(rescaled_cumulative_cost(curve, {0.0, 1.0}, [](double x) { return x; }),
                  InvalidArgument);
}

TEST_CASE("cumulative cost along a Gaussian curve") {
  const Grid1D g(-8.0, 8.0, 200);
  for (int n : {4, 8, 16}) {
    std::vector<DiscreteMeasure> curve;
    std::vector<double> times;
    for (int i = 0; i <= n; ++i) {
      const double t = static_cast<double>(i) / n;
      times.push_back(t);
      curve.push_back(DiscreteMeasure::gaussian(g, 0.0, 1.0 + t));
    }
    const double v = rescaled_cumulative_cost(curve, times, [](double x) { return x * x; });
    CHECK(std::abs(v - 1.0) <= 0.05);
  }
}
