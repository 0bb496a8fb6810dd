#pragma once

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

namespace mbb {

enum class CostKind { Power, PmeDual };

// Spatially homogeneous cost c(a) on a >= 0.
//   Power:   c(a) = lambda a^p
//   PmeDual: c(a) = a^p / (p (2q)^{p/q}), q = p/(p-1), whose conjugate is 2 (u+)^q
struct CostSpec {
  CostKind kind = CostKind::Power;
  double p = 2.0;
  double lambda = 1.0;

  static CostSpec power(double p, double lambda = 1.0);
  static CostSpec pme_dual_from_q(double q);

  // Conjugate exponent p/(p-1).
  double q() const { return p / (p - 1.0); }
  // Coefficient k with c(a) = k a^p. Both coercivity constants equal it.
  double coefficient() const;

  double operator()(double a) const;  // c(a), +inf for a < 0
  double legendre(double u) const;    // c*(u)
  double grad_legendre(double u) const;
  // Derivative of grad_legendre, used by Newton solvers.
  double hess_legendre(double u) const;
  // Perspective rho c(m / rho) with 0 at (0, 0) and +inf at (m > 0, 0).
  double perspective(double m, double rho) const;

  void validate() const;
};

double legendre(const CostSpec& c, double u);
double grad_legendre(const CostSpec& c, double u);

nlohmann::json to_json(const CostSpec& c);
CostSpec cost_from_json(const nlohmann::json& j);

// Probabilists' Gauss-Hermite rule: sum w_k f(z_k) approximates E[f(Z)].
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;
};
const GaussHermite& gauss_hermite(int order);

// E[c_point(sqrt(a) Z)] for standard normal Z.
double smeared_cost(const std::function<double(double)>& c_point, double a, int quad_order = 40);

// int_0^1 ((1-t) u + t v)^{1-p} dt
double m_p(double p, double u, double v);

// Named scalar costs used on increments: pow2, pow3, pow4, abs, or powK for real K.
std::function<double(double)> point_cost(const std::string& name);

}  // namespace mbb
