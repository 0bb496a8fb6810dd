#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "mbb/costs.hpp"
#include "mbb/errors.hpp"
#include "mbb/relaxation.hpp"

using namespace mbb;

namespace {

PathEnsemble brownian(int n_paths, std::uint64_t seed = 3) {
  SdeOptions o;
  o.n_paths = n_paths;
  o.dt = 1.0 / 512;
  o.n_records = 64;
  o.seed = seed;
  return simulate_sde(DiscreteMeasure::dirac(Grid1D::symmetric(1.0, 21), 0.0), [](double, double) { return 1.0; },
                      o);
}

double sin_field(double, double x) {
  const double s = std::sin(x);
  return 1.0 + 0.5 * s * s;
}

const PathEnsemble& sin_ensemble() {
  static const PathEnsemble ens = [] {
    SdeOptions o;
    o.n_paths = 20000;
    o.dt = 1e-3;
    o.n_records = 128;
    o.seed = 11;
    return simulate_sde(DiscreteMeasure::dirac(Grid1D::symmetric(1.0, 21), 0.0), sin_field, o);
  }();
  return ens;
}

// Centres at multiples of 0.1, so +-1 and +-0.5 are atoms.
const Grid1D kTenths(-2.05, 2.05, 41);

}  // namespace

TEST_CASE("brownian increments give the gaussian moments") {
  const auto ens = brownian(20000);
  const auto pi = Partition::uniform(8);
  const auto q2 = discrete_cumulative_cost(ens, pi, point_cost("pow2"));
  const auto q3 = discrete_cumulative_cost(ens, pi, point_cost("pow3"));
  const auto q4 = discrete_cumulative_cost(ens, pi, point_cost("pow4"));
  CHECK(std::abs(q2.value - 1.0) <= 4.0 * q2.se);
  CHECK(std::abs(q3.value) <= 4.0 * q3.se);
  CHECK(std::abs(q4.value - 3.0) <= 4.0 * q4.se);
  CHECK(q2.terms.size() == 8);
  CHECK(q2.moved_nodes == 0);
  CHECK(q2.per_path.size() == 20000);

  const auto p4 = discrete_cumulative_cost(ens, pi, point_cost("pow4"), RelaxMode::PowerOneOverP, 2.0);
  CHECK(std::abs(p4.value - std::sqrt(3.0)) <= 4.0 * p4.se);
  CHECK(p4.per_path.empty());
}

TEST_CASE("nodes off the record grid are snapped") {
  const auto ens = brownian(200);
  const Partition pi{{0.0, 0.3, 1.0}};
  const auto out = discrete_cumulative_cost(ens, pi, point_cost("pow2"));
  CHECK(out.moved_nodes == 1);
  CHECK(out.snapped.times[1] == doctest::Approx(19.0 / 64.0));
}

TEST_CASE("right-hand side for a constant field is exact") {
  SdeOptions o;
  o.n_paths = 50;
  o.n_records = 16;
  const double Q = 0.7;
  const auto ens = simulate_sde(DiscreteMeasure::dirac(Grid1D::symmetric(1.0, 21), 0.0),
                                [Q](double, double) { return Q; }, o);
  const auto r2 = relaxation_rhs(ens, point_cost("pow2"));
  CHECK(r2.value == doctest::Approx(Q).epsilon(1e-12));
  CHECK(r2.se <= 1e-14);
  CHECK(relaxation_rhs(ens, point_cost("pow4")).value == doctest::Approx(3.0 * Q * Q).epsilon(1e-12));
  CHECK(relaxation_rhs(ens, point_cost("pow4"), RelaxMode::PowerOneOverP, 2.0).value ==
        doctest::Approx(std::sqrt(3.0) * Q).epsilon(1e-12));
}

TEST_CASE("quadratic right-hand side is the trapezoid average of the recorded field") {
  const auto& ens = sin_ensemble();
  const int nr = ens.n_records();
  double total = 0.0;
  for (int q = 0; q < ens.n_paths; ++q) {
    for (int k = 0; k + 1 < nr; ++k) {
      const double h = ens.record_times[k + 1] - ens.record_times[k];
      total += 0.5 * h * (ens.diffusion(q, k) + ens.diffusion(q, k + 1));
    }
  }
  CHECK(relaxation_rhs(ens, point_cost("pow2")).value == doctest::Approx(total / ens.n_paths).epsilon(1e-10));
}

TEST_CASE("discrete costs converge to the smeared integral") {
  const auto& ens = sin_ensemble();
  const std::vector<double> meshes{0.25, 1.0 / 16, 1.0 / 64};
  for (const char* name : {"pow2", "pow4"}) {
    CAPTURE(name);
    const auto tab = relaxation_convergence(ens, meshes, point_cost(name));
    CHECK(tab.passed());
    REQUIRE(tab.rows.size() == 3);
    CHECK(tab.rows[0].mesh == 0.25);
    for (const auto& r : tab.rows) CHECK(r.diff == doctest::Approx(std::abs(r.lhs - r.rhs)));
  }
  const auto pw = relaxation_convergence(ens, meshes, point_cost("pow4"), RelaxMode::PowerOneOverP, 2.0);
  CHECK(pw.passed());

  // The quadratic cost telescopes: both sides estimate E <X>_1 from the same paths.
  const auto q = relaxation_convergence(ens, {1.0 / 64}, point_cost("pow2"));
  CHECK(q.rows[0].diff <= 3.0 * q.rows[0].se + 0.01);
}

TEST_CASE("table serializes") {
  const auto tab = relaxation_convergence(brownian(500), {0.5, 0.25}, point_cost("pow2"));
  const auto j = to_json(tab);
  CHECK(j["rows"].size() == 2);
  CHECK(j["tol_scheme"] == 0.02);
  std::ostringstream csv;
  write_csv(csv, tab);
  const std::string text = csv.str();
  CHECK(text.rfind("mesh,lhs,rhs,diff,se\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}

TEST_CASE("invalid partitions and meshes are rejected") {
  const auto ens = brownian(100);
  const auto c = point_cost("pow2");
  CHECK_THROWS_AS(discrete_cumulative_cost(ens, Partition{{0.0, 0.5, 0.4, 1.0}}, c), InvalidArgument);
  CHECK_THROWS_AS(discrete_cumulative_cost(ens, Partition{{0.1, 1.0}}, c), InvalidArgument);
  CHECK_THROWS_AS(discrete_cumulative_cost(ens, Partition{{0.0}}, c), InvalidArgument);
  CHECK_THROWS_AS(discrete_cumulative_cost(ens, Partition::uniform(1000), c), InvalidArgument);
  CHECK_THROWS_AS(Partition::uniform(0), InvalidArgument);
  CHECK_THROWS_AS(relaxation_convergence(ens, {0.3}, c), InvalidArgument);
  CHECK_THROWS_AS(relaxation_convergence(ens, {}, c), InvalidArgument);
  CHECK_THROWS_AS(discrete_cumulative_cost(ens, Partition::uniform(4), c, RelaxMode::PowerOneOverP, 0.0),
                  InvalidArgument);
  CHECK(Partition::uniform(4).mesh() == 0.25);
}

TEST_CASE("martingale test separates martingales from drifting paths") {
  const auto mt = martingale_test(sin_ensemble(), Partition::uniform(4));
  CHECK(mt.bins_tested == 20);
  CHECK(mt.max_ratio < 4.5);

  PathEnsemble drift;
  drift.n_paths = 1000;
  drift.record_times = {0.0, 0.5, 1.0};
  for (int q = 0; q < drift.n_paths; ++q) {
    const double z = 0.001 * q;
    for (double t : drift.record_times) drift.x.push_back(z + t + 0.01 * std::sin(37.0 * q * (t + 1.0)));
  }
  CHECK(martingale_test(drift, Partition::uniform(2)).max_ratio > 10.0);
  CHECK_THROWS_AS(martingale_test(drift, Partition::uniform(2), 0), InvalidArgument);
}

TEST_CASE("time change identities") {
  for (double r : {0.5, 1.0, 2.5}) {
    for (double t : {0.1, 0.5, 0.9}) CHECK(time_change_inverse(time_change(t, r), r) == doctest::Approx(t));
    for (double tau : {0.01, 1.0, 7.0}) {
      CAPTURE(r);
      CAPTURE(tau);
      CHECK(time_changed_record_integral(tau, r, 1.0) == doctest::Approx(tau).epsilon(1e-10));
    }
  }
  // r = 1: beta' = (1 - t)^{-2}, so the integral up to T = tau / (1 + tau) is elementary.
  for (double p : {2.0, 3.0}) {
    for (double tau : {0.2, 1.0, 4.0}) {
      const double one_minus_T = 1.0 / (1.0 + tau);
      const double expected = (std::pow(one_minus_T, 1.0 - 2.0 * p) - 1.0) / (2.0 * p - 1.0);
      CHECK(time_changed_record_integral(tau, 1.0, p) == doctest::Approx(expected).epsilon(1e-10));
    }
  }
  CHECK(time_change(0.0, 1.0) == 0.0);
  CHECK(std::isinf(time_change(1.0, 1.0)));
  CHECK(time_changed_record_integral(0.0, 1.0, 2.0) == 0.0);
  CHECK_THROWS_AS(time_change(0.5, 0.0), InvalidArgument);
  CHECK_THROWS_AS(time_changed_record_integral(1.0, 1.0, 0.0), InvalidArgument);
}

TEST_CASE("embedding of a two-point law from the origin") {
  const auto nu = DiscreteMeasure::atoms(kTenths, {{-1.0, 0.5}, {1.0, 0.5}});
  EmbeddingOptions opts;
  opts.n_paths = 20000;
  const auto run = skorokhod_time_change(DiscreteMeasure::dirac(kTenths, 0.0), nu, opts);
  CHECK(run.r == doctest::Approx(0.5));
  CHECK(std::abs(run.expected_tau.value - 1.0) <= 3.0 * run.expected_tau.se);
  CHECK(run.stopped_w1 <= 0.02);
  CHECK(run.stability_ratio >= 0.8);
  CHECK(run.stability_ratio <= 1.25);
  CHECK(run.latest_time < 1.0);
  CHECK(run.q_moment == doctest::Approx(1.0));
  std::set<double> values(run.stopped.begin(), run.stopped.end());
  CHECK(values.size() == 2);
  for (std::size_t q = 0; q < run.tau.size(); ++q) {
    // Jensen on [0, T] with T < 1.
    CHECK(run.cost[q] >= std::pow(run.tau[q], opts.p) * (1.0 - 1e-9));
    CHECK(run.start[q] == kTenths.center(20));
  }
  const auto j = to_json(run);
  CHECK(j["n_paths"] == 20000);
  CHECK(j.contains("stability_ratio"));
}

TEST_CASE("embedding from a spread initial law uses a martingale coupling") {
  const auto mu = DiscreteMeasure::atoms(kTenths, {{-0.5, 0.5}, {0.5, 0.5}});
  const auto nu = DiscreteMeasure::atoms(kTenths, {{-1.5, 0.25}, {-0.5, 0.25}, {0.5, 0.25}, {1.5, 0.25}});
  EmbeddingOptions opts;
  opts.n_paths = 20000;
  const auto run = skorokhod_time_change(mu, nu, opts);
  // E tau = Var(nu) - Var(mu).
  CHECK(std::abs(run.expected_tau.value - 1.0) <= 3.0 * run.expected_tau.se + 0.005);
  CHECK(run.stopped_w1 <= 0.02);
  for (std::size_t q = 0; q < run.tau.size(); ++q) CHECK(std::abs(run.start[q]) == doctest::Approx(0.5));
}

TEST_CASE("embedding is reproducible across thread counts") {
  const auto nu = DiscreteMeasure::atoms(kTenths, {{-1.0, 0.25}, {0.0, 0.25}, {1.0, 0.5}});
  const auto mu = DiscreteMeasure::dirac(kTenths, 0.25);
  EmbeddingOptions opts;
  opts.n_paths = 2000;
  opts.threads = 1;
  const auto a = skorokhod_time_change(mu, nu, opts);
  opts.threads = 3;
  const auto b = skorokhod_time_change(mu, nu, opts);
  CHECK(a.tau == b.tau);
  CHECK(a.stopped == b.stopped);
  opts.seed = 2;
  CHECK(skorokhod_time_change(mu, nu, opts).tau != a.tau);
}

TEST_CASE("embedding rejects inadmissible parameters") {
  const auto mu = DiscreteMeasure::dirac(kTenths, 0.0);
  const auto nu = DiscreteMeasure::atoms(kTenths, {{-1.0, 0.5}, {1.0, 0.5}});
  EmbeddingOptions opts;
  opts.n_paths = 10;
  opts.r = 0.6;
  CHECK_THROWS_AS(skorokhod_time_change(mu, nu, opts), InvalidArgument);
  opts.r = 0.0;
  opts.p = 1.0;
  CHECK_THROWS_AS(skorokhod_time_change(mu, nu, opts), InvalidArgument);
  opts.p = 2.0;
  opts.q_mom = 4.0;
  CHECK_THROWS_AS(skorokhod_time_change(mu, nu, opts), InvalidArgument);
  opts.q_mom = 5.0;
  CHECK_THROWS_AS(skorokhod_time_change(nu, mu, opts), Infeasible);
  CHECK_THROWS_AS(skorokhod_time_change(DiscreteMeasure::dirac(Grid1D::symmetric(2.0, 41), 0.0), nu, opts),
                  GridMismatch);
}
