#pragma once

#include <functional>
#include <vector>

#include "json.hpp"
#include "mbb/costs.hpp"
#include "mbb/fpe.hpp"
#include "mbb/measures.hpp"

namespace mbb {

// Node grid on [-r, r]: Grid1D(-r - h/2, r + h/2, n_nodes) so that the cell centres
// are the nodes and the first and last centres sit on the Dirichlet boundary.
Grid1D dirichlet_grid(double r, int n_nodes);

// u(t_k, x_j) for the backward equation d_t u = -d_xx u^q on [0, 1] x [-r, r].
struct PMESolution {
  Grid1D grid;
  double q = 2.0;
  double r = 1.0;
  std::vector<double> times;               // ascending
  std::vector<std::vector<double>> u;      // u[k][j]
  int newton_iterations = 0;
  int step_halvings = 0;

  int n_slices() const { return static_cast<int>(times.size()); }
  double mass(int k) const;  // h sum_j u[k][j]
};

struct PmeOptions {
  int n_steps = 200;
  double t_start = 0.0;
  double t_end = 1.0;  // time at which u1 is imposed
  double newton_tol = 1e-12;
  int max_newton = 50;
  int max_halvings = 8;
};

// Implicit Euler in s = t_end - t for d_s v = d_xx v^q with v = 0 at x = +-r.
PMESolution solve_backward_pme(const std::vector<double>& u1, double q, double r,
                               const PmeOptions& opts = {});

// Scheme residual of the slices as given: max_j |(u_{k+1} - u_k)/dt + D2(u_k^q)/h^2|
// divided by max_j |(u_{k+1} - u_k)/dt|, maximised over k with t_k <= t_max.
double pme_scheme_residual(const PMESolution& sol, double t_max);

// Positive solution g of (g^q)'' + g / (q - 1) = 0 on [-1, 1], g(+-1) = 0.
struct GiantProfile {
  double q = 2.0;
  Grid1D grid;  // dirichlet_grid(1, n_x)
  std::vector<double> g;
  double slope = 0.0;      // (g^q)'(-1) found by shooting
  // max over nodes of the relative defect in the first integral
  // (w')^2 / 2 + q / (q^2 - 1) w^{(q+1)/q}, w = g^q.
  double residual = 0.0;
  double value_at(double x) const;  // linear interpolation, 0 outside [-1, 1]
};

GiantProfile friendly_giant_profile(double q, int n_x);

// u_t = (1 - t)^{-1/(q-1)} g on the given times (all < 1).
PMESolution giant_solution(const GiantProfile& g, const std::vector<double>& times);

enum class PressureConvention {
  GradLegendre,  // a = d/du 2 u^q = 2 q u^{q-1}
  Literal,       // a = q u^{q-1}
};

DiffusionField pressure_from_u(const PMESolution& sol,
                               PressureConvention conv = PressureConvention::GradLegendre);

// max over interior nodes with u > delta max_j u_k and t_k <= t_max of
// |d_t a + (a a_xx + (p - 1) a_x^2) / 2|, divided by max |d_t a| over the same set.
double pressure_residual(const DiffusionField& a, const PMESolution& sol, double delta, double t_max);

// phi(t_k, x_j) with phi(t, +-r) = 0.
struct Potential {
  Grid1D grid;
  std::vector<double> times;
  std::vector<std::vector<double>> phi;

  // Half the discrete Laplacian at slice k; 0 on the boundary nodes.
  std::vector<double> half_laplacian(int k) const;
};

// Per slice, solves (1/2) D2 phi / h^2 = u with phi = 0 on the boundary.
Potential potential_from_u(const PMESolution& sol);

// max over interior nodes and k < last of |(phi_{k+1} - phi_k)/dt + c*(u_k)|.
double hjb_residual(const Potential& phi, const PMESolution& sol, const CostSpec& cost);

// a = grad c*(phi_xx / 2) slice by slice.
DiffusionField optimal_a_from_phi(const Potential& phi, const CostSpec& cost);

// Closed-form or interpolated potential with the derivatives the dual needs.
struct PotentialFn {
  std::function<double(double, double)> phi;
  std::function<double(double, double)> phi_t;
  std::function<double(double, double)> phi_xx;
};

PotentialFn affine_potential(double slope, double offset);
// phi = -t c*(R/2) + R x^2 / 2 with R = 2 c'(Q): the exact potential for Gaussian smoothing.
PotentialFn gaussian_potential(const CostSpec& cost, double Q);
// Bilinear in (t, x); phi_t by slice differences, phi_xx by the discrete Laplacian.
PotentialFn interpolate(const Potential& phi);

struct SuperSolutionReport {
  double max_violation = 0.0;  // max of phi_t + c*(phi_xx / 2), >= 0 part
  double t = 0.0;
  double x = 0.0;
};

SuperSolutionReport super_solution_violation(const PotentialFn& phi, const CostSpec& cost,
                                             const Grid1D& grid, const std::vector<double>& times);

struct DualityReport {
  double dual_value = 0.0;    // int phi(1) d rho_1 - int phi(0) d rho_0
  double primal_value = 0.0;
  double gap = 0.0;           // primal - dual
  double mean_gap = 0.0;      // |mean(rho_1) - mean(rho_0)|
  SuperSolutionReport super;
};

// Throws NotSuperSolution when the violation exceeds tol_super.
DualityReport weak_duality_gap(const PotentialFn& phi, const MeasureCurve& rho, double primal_value,
                               const CostSpec& cost, double tol_super);
// Primal value = int_0^1 sum_j c(a(t, x_j)) rho_t(x_j) dt, trapezoid over the curve's nodes.
DualityReport weak_duality_gap(const PotentialFn& phi, const MeasureCurve& rho, const DiffusionFn& a,
                               const CostSpec& cost, double tol_super);
double curve_cost(const MeasureCurve& rho, const DiffusionFn& a, const CostSpec& cost);

struct GiantTerminalOptions {
  int n_cells = 1201;  // FPE grid on [-1.2, 1.2]
  int n_steps = 2000;
  int profile_nodes = 2001;
  double initial_variance = 0.01;
  PressureConvention convention = PressureConvention::GradLegendre;
};

struct GiantTerminalReport {
  double mass_near_endpoints = 0.0;  // mass within 0.1 of {-1, 1} at t_stop
  double max_abs_mean = 0.0;         // over all slices
  double variance_end = 0.0;
  double max_mass_error = 0.0;
};

GiantTerminalReport giant_terminal_check(double q, double t_stop, const GiantTerminalOptions& opts = {});
GiantTerminalReport giant_terminal_check(double q, const DiscreteMeasure& mu, double t_stop,
                                         const GiantTerminalOptions& opts = {});

nlohmann::json to_json(const PMESolution& s);
PMESolution pme_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Potential& p);
Potential potential_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GiantProfile& g);
nlohmann::json to_json(const DualityReport& r);

}  // namespace mbb
