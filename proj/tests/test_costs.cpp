#include <cmath>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "doctest.h"
#include "mbb/costs.hpp"
#include "mbb/errors.hpp"

using namespace mbb;

namespace {

// Brute-force sup_a (a u - c(a)) over a fine grid of a >= 0.
double brute_legendre(const CostSpec& c, double u) {
  double best = 0.0;
  for (int k = 0; k <= 400000; ++k) {
    const double a = 1e-4 * k;
    best = std::max(best, a * u - c(a));
  }
  return best;
}

double quad_m_p(double p, double u, double v) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      [&](double t) { return std::pow((1 - t) * u + t * v, 1 - p); }, 0.0, 1.0, 15, 1e-14);
}

}  // namespace

TEST_CASE("legendre examples") {
  const auto sq = CostSpec::power(2.0);
  CHECK(legendre(sq, 2.0) == doctest::Approx(1.0));
  CHECK(legendre(sq, 0.0) == 0.0);
  CHECK(legendre(sq, -3.0) == 0.0);
  CHECK(legendre(CostSpec::power(3.0, 0.7), 0.0) == 0.0);

  const auto pme = CostSpec::pme_dual_from_q(2.0);
  CHECK(pme.p == doctest::Approx(2.0));
  CHECK(pme(2.0) == doctest::Approx(0.5));  // a^2 / 8
  for (double u : {0.3, 1.0, 2.0}) {
    CHECK(pme.legendre(u) == doctest::Approx(2 * u * u).epsilon(1e-12));
    CHECK(brute_legendre(pme, u) == doctest::Approx(2 * u * u).epsilon(1e-6));
  }
  const auto pme3 = CostSpec::pme_dual_from_q(3.0);
  CHECK(pme3.legendre(1.7) == doctest::Approx(2 * std::pow(1.7, 3.0)).epsilon(1e-12));
  CHECK(pme3.grad_legendre(1.7) == doctest::Approx(6 * 1.7 * 1.7).epsilon(1e-12));
}

TEST_CASE("grad_legendre examples") {
  const auto sq = CostSpec::power(2.0);
  CHECK(grad_legendre(sq, 2.0) == doctest::Approx(1.0));
  CHECK(grad_legendre(sq, -1.0) == 0.0);
  CHECK(grad_legendre(sq, 0.0) == 0.0);
  for (const auto& c : {sq, CostSpec::power(3.0, 2.0), CostSpec::power(1.5, 0.5),
                        CostSpec::pme_dual_from_q(2.5)}) {
    const double d = 1e-5;
    const double fd = (c.legendre(3.0 + d) - c.legendre(3.0 - d)) / (2 * d);
    CHECK(std::abs(fd - c.grad_legendre(3.0)) <= 1e-6 * std::max(1.0, std::abs(fd)));
    const double fd2 = (c.grad_legendre(3.0 + d) - c.grad_legendre(3.0 - d)) / (2 * d);
    CHECK(std::abs(fd2 - c.hess_legendre(3.0)) <= 1e-5 * std::max(1.0, std::abs(fd2)));
  }
}

TEST_CASE("Fenchel-Young gap is non-negative and tight at the gradient") {
  for (const auto& c : {CostSpec::power(2.0), CostSpec::power(3.0, 0.5), CostSpec::power(1.5, 2.0),
                        CostSpec::pme_dual_from_q(2.0)}) {
    for (int i = 0; i < 100; ++i) {
      const double a = 0.05 * i;
      for (int k = 0; k < 100; ++k) {
        const double u = -1.0 + 0.05 * k;
        CHECK(c(a) + c.legendre(u) - a * u >= -1e-12);
      }
    }
    for (int k = 0; k < 100; ++k) {
      const double u = -1.0 + 0.05 * k;
      const double a = c.grad_legendre(u);
      const double gap = c(a) + c.legendre(u) - a * u;
      CHECK(std::abs(gap) <= 1e-9 * std::max(1.0, std::abs(a * u)));
    }
  }
}

TEST_CASE("grad_legendre is monotone") {
  const auto c = CostSpec::power(2.5, 1.3);
  double prev = -1.0;
  for (int k = 0; k < 1000; ++k) {
    const double g = c.grad_legendre(-2.0 + 0.01 * k);
    CHECK(g >= prev);
    prev = g;
  }
}

TEST_CASE("perspective") {
  const auto c = CostSpec::power(2.0);
  CHECK(c.perspective(0.0, 0.0) == 0.0);
  CHECK(std::isinf(c.perspective(1.0, 0.0)));
  CHECK(c.perspective(2.0, 4.0) == doctest::Approx(4.0 * c(0.5)));
}

TEST_CASE("smeared cost") {
  auto sq = [](double x) { return x * x; };
  auto quart = [](double x) { return x * x * x * x; };
  auto cube = [](double x) { return x * x * x; };
  CHECK(smeared_cost(sq, 2.7) == doctest::Approx(2.7).epsilon(1e-13));
  CHECK(smeared_cost(quart, 1.0) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(smeared_cost(cube, 1.3) == 0.0);
  CHECK(smeared_cost(cube, 0.0) == 0.0);
  CHECK(smeared_cost([](double x) { return std::pow(std::abs(x), 6); }, 2.0) ==
        doctest::Approx(15.0 * 8.0).epsilon(1e-12));
  // |x|^{2p} for p = 1, 2
  CHECK(smeared_cost([](double x) { return std::abs(x) * std::abs(x); }, 0.4) ==
        doctest::Approx(0.4).epsilon(1e-13));
  CHECK(smeared_cost([](double x) { return std::pow(std::abs(x), 4); }, 0.4) ==
        doctest::Approx(3 * 0.16).epsilon(1e-12));
  CHECK_THROWS_AS(smeared_cost(sq, -1.0), InvalidArgument);
  const auto& gh = gauss_hermite(40);
  double w = 0.0;
  for (double v : gh.weights) w += v;
  CHECK(w == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("m_p examples") {
  CHECK(m_p(1.0, 0.3, 4.0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(m_p(2.0, 1.0, 1.0) == doctest::Approx(1.0));
  CHECK(m_p(3.0, 1.0, 2.0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(m_p(2.0, 0.5, 3.0) == doctest::Approx(std::log(6.0) / 2.5).epsilon(1e-14));
  CHECK(m_p(3.0, 2.0, 2.0) == doctest::Approx(0.25));
  CHECK(m_p(2.5, 1.0, 1.0 + 1e-13) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(m_p(2.0, 0.0, 1.0), InvalidArgument);
  CHECK_THROWS_AS(m_p(2.0, 1.0, -1.0), InvalidArgument);
}

TEST_CASE("m_p agrees with adaptive quadrature") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> P(1.0, 4.0);
  std::uniform_real_distribution<double> U(0.05, 5.0);
  for (int k = 0; k < 200; ++k) {
    const double p = P(rng);
    const double u = U(rng);
    const double v = U(rng);
    const double ref = quad_m_p(p, u, v);
    CHECK(std::abs(m_p(p, u, v) - ref) <= 1e-10 * std::max(1.0, ref));
  }
}

TEST_CASE("cost json") {
  const auto c = CostSpec::power(3.0, 0.25);
  const auto back = cost_from_json(to_json(c));
  CHECK(back.p == 3.0);
  CHECK(back.lambda == 0.25);
  CHECK(cost_from_json(nlohmann::json{{"kind", "pme-dual"}, {"q", 2.0}}).legendre(1.0) ==
        doctest::Approx(2.0));
  CHECK_THROWS_AS(cost_from_json(nlohmann::json{{"kind", "power"}, {"p", 0.5}}), InvalidArgument);
  CHECK_THROWS_AS(cost_from_json(nlohmann::json{{"kind", "power"}, {"p", 2}, {"x", 1}}),
                  InvalidArgument);
  CHECK_THROWS_AS(cost_from_json(nlohmann::json{{"kind", "cubic"}, {"p", 2}}), InvalidArgument);
}

TEST_CASE("point costs") {
  CHECK(point_cost("pow4")(-2.0) == 16.0);
  CHECK(point_cost("pow3")(-2.0) == -8.0);
  CHECK(point_cost("abs")(-2.0) == 2.0);
  CHECK(point_cost("pow1.5")(4.0) == doctest::Approx(8.0));
  CHECK_THROWS_AS(point_cost("sin"), InvalidArgument);
}
