#include "mbb/costs.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <mutex>

#include <Eigen/Dense>

#include "mbb/errors.hpp"

namespace mbb {

CostSpec CostSpec::power(double p, double lambda) {
  CostSpec c{CostKind::Power, p, lambda};
  c.validate();
  return c;
}

CostSpec CostSpec::pme_dual_from_q(double q) {
  if (!(q > 1.0)) throw InvalidArgument("pme-dual cost: q must exceed 1");
  CostSpec c{CostKind::PmeDual, q / (q - 1.0), 1.0};
  c.validate();
  return c;
}

void CostSpec::validate() const {
  if (!(p > 1.0) || !std::isfinite(p)) throw InvalidArgument("cost: p must exceed 1");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw InvalidArgument("cost: lambda must be positive");
  }
}

double CostSpec::coefficient() const {
  if (kind == CostKind::Power) return lambda;
  const double qq = q();
  return 1.0 / (p * std::pow(2.0 * qq, p / qq));
}

double CostSpec::operator()(double a) const {
  if (a < 0.0) return std::numeric_limits<double>::infinity();
  return coefficient() * std::pow(a, p);
}

double CostSpec::legendre(double u) const {
  if (u <= 0.0) return 0.0;
  const double k = coefficient();
  return (p - 1.0) * k * std::pow(u / (p * k), q());
}

double CostSpec::grad_legendre(double u) const {
  if (u <= 0.0) return 0.0;
  return std::pow(u / (p * coefficient()), q() - 1.0);
}

double CostSpec::hess_legendre(double u) const {
  if (u <= 0.0) return 0.0;
  const double pk = p * coefficient();
  return (q() - 1.0) / pk * std::pow(u / pk, q() - 2.0);
}

double CostSpec::perspective(double m, double rho) const {
  if (m <= 0.0) return 0.0;
  if (rho <= 0.0) return std::numeric_limits<double>::infinity();
  return coefficient() * std::pow(m, p) / std::pow(rho, p - 1.0);
}

double legendre(const CostSpec& c, double u) { return c.legendre(u); }
double grad_legendre(const CostSpec& c, double u) { return c.grad_legendre(u); }

nlohmann::json to_json(const CostSpec& c) {
  return {{"kind", c.kind == CostKind::Power ? "power" : "pme-dual"},
          {"p", c.p},
          {"lambda", c.lambda}};
}

CostSpec cost_from_json(const nlohmann::json& j) {
  try {
    const std::string kind = j.value("kind", std::string("power"));
    for (const auto& [key, _] : j.items()) {
      if (key != "kind" && key != "p" && key != "lambda" && key != "q") {
        throw InvalidArgument("cost json: unknown key '" + key + "'");
      }
    }
    if (kind == "power") return CostSpec::power(j.at("p").get<double>(), j.value("lambda", 1.0));
    if (kind == "pme-dual") {
      if (j.contains("q")) return CostSpec::pme_dual_from_q(j.at("q").get<double>());
      const double p = j.at("p").get<double>();
      if (!(p > 1.0)) throw InvalidArgument("cost: p must exceed 1");
      return CostSpec::pme_dual_from_q(p / (p - 1.0));
    }
    throw InvalidArgument("cost json: unknown kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("cost json: ") + e.what());
  }
}

const GaussHermite& gauss_hermite(int order) {
  if (order < 1 || order > 200) throw InvalidArgument("gauss_hermite: order out of range");
  static std::mutex mu;
  static std::map<int, GaussHermite> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(order);
  if (it != cache.end()) return it->second;
  // Golub-Welsch on the Jacobi matrix of He_n.
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(order, order);
  for (int k = 1; k < order; ++k) {
    J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  GaussHermite gh;
  gh.nodes.resize(static_cast<std::size_t>(order));
  gh.weights.resize(static_cast<std::size_t>(order));
  for (int k = 0; k < order; ++k) {
    gh.nodes[static_cast<std::size_t>(k)] = es.eigenvalues()(k);
    const double v = es.eigenvectors()(0, k);
    gh.weights[static_cast<std::size_t>(k)] = v * v;
  }
  // Symmetrise so odd integrands vanish to rounding.
  for (int k = 0; k < order / 2; ++k) {
    auto lo = static_cast<std::size_t>(k);
    auto hi = static_cast<std::size_t>(order - 1 - k);
    const double z = 0.5 * (gh.nodes[hi] - gh.nodes[lo]);
    const double w = 0.5 * (gh.weights[hi] + gh.weights[lo]);
    gh.nodes[lo] = -z;
    gh.nodes[hi] = z;
    gh.weights[lo] = gh.weights[hi] = w;
  }
  if (order % 2 == 1) gh.nodes[static_cast<std::size_t>(order / 2)] = 0.0;
  return cache.emplace(order, std::move(gh)).first->second;
}

double smeared_cost(const std::function<double(double)>& c_point, double a, int quad_order) {
  if (!(a >= 0.0)) throw InvalidArgument("smeared_cost: a must be non-negative");
  const GaussHermite& gh = gauss_hermite(quad_order);
  const double s = std::sqrt(a);
  // Pair symmetric nodes so odd costs cancel exactly.
  double total = 0.0;
  const std::size_t n = gh.nodes.size();
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double z = gh.nodes[n - 1 - k];
    total += gh.weights[k] * (c_point(-s * z) + c_point(s * z));
  }
  if (n % 2 == 1) total += gh.weights[n / 2] * c_point(0.0);
  return total;
}

double m_p(double p, double u, double v) {
  if (!(u > 0.0) || !(v > 0.0)) throw InvalidArgument("m_p: arguments must be positive");
  // u^{1-p} int_0^1 (1 + t e)^{1-p} dt with e = v/u - 1
  //   = u^{1-p} expm1((2-p) log1p(e)) / ((2-p) e)
  const double e = v / u - 1.0;
  const double k = 2.0 - p;
  const double scale = std::pow(u, 1.0 - p);
  if (e == 0.0) return scale;
  const double l = std::log1p(e);
  if (k == 0.0) return scale * l / e;
  return scale * std::expm1(k * l) / (k * e);
}

std::function<double(double)> point_cost(const std::string& name) {
  if (name == "abs") return [](double x) { return std::abs(x); };
  if (name == "pow2") return [](double x) { return x * x; };
  if (name == "pow3") return [](double x) { return x * x * x; };
  if (name == "pow4") return [](double x) { return x * x * x * x; };
  if (name.rfind("pow", 0) == 0) {
    double k = 0.0;
    try {
      k = std::stod(name.substr(3));
    } catch (const std::exception&) {
      throw InvalidArgument("unknown point cost '" + name + "'");
    }
    if (!(k > 0.0)) throw InvalidArgument("point cost exponent must be positive");
    return [k](double x) { return std::pow(std::abs(x), k); };
  }
  throw InvalidArgument("unknown point cost '" + name + "'");
}

}  // namespace mbb
