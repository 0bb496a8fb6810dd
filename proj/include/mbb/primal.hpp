#pragma once

#include <iosfwd>
#include <vector>

#include "json.hpp"
#include "mbb/costs.hpp"
#include "mbb/dual.hpp"
#include "mbb/fpe.hpp"
#include "mbb/measures.hpp"

namespace mbb {

// Discretized dynamic problem on mu's grid with n_t uniform time steps.
struct PrimalProblem {
  DiscreteMeasure mu;
  DiscreteMeasure nu;
  CostSpec cost;
  int n_t = 100;
};

struct PrimalOptions {
  double tol = 1e-6;  // on the gap estimate and n mu, relative to 1 + |value|
  double feasibility_tol = 1e-9;  // on the FPE and averaging rows, in mass units
  int max_iterations = 200;
  double regularization = 1e-14;  // relative diagonal shift of the normal equations
  // Return the last iterate with converged = false instead of throwing NonConvergence.
  bool allow_unconverged = false;
};

// m at the half steps (k + 1/2) dt, in density units so that a = m / rho.
struct FluxField {
  Grid1D grid;
  std::vector<double> times;
  std::vector<std::vector<double>> m;
};

struct PrimalLogEntry {
  int iteration = 0;
  double complementarity = 0.0;  // mean x_i lambda_i
  double value = 0.0;
  double dual_value = 0.0;  // -y . rhs, equal to the value at a KKT point
  double gap = 0.0;
  double certified_dual = 0.0;  // best rigorous lower bound so far
  double primal_residual = 0.0;
  double dual_residual = 0.0;  // max_i |x_i (grad F + A^T y - lambda)_i|
  double step = 0.0;
};

struct PrimalSolution {
  MeasureCurve rho;  // n_t + 1 slices of cell masses
  FluxField flux;
  DiffusionField a = DiffusionField::constant(0.0, Grid1D());  // m / rho_bar at the half steps
  Potential potential;  // equality multipliers, one slice per half step
  double value = 0.0;
  double dual_value = 0.0;
  double gap = 0.0;   // value - dual_value, the interior-point gap estimate
  // Lagrangian lower bound from the multipliers with cell masses boxed by convex-order caps;
  // valid for any iterate, converged or not.
  double certified_dual = 0.0;
  double certified_gap = 0.0;
  double constraint_residual = 0.0;  // max |w^{k+1} - w^k - c D2 M| over all rows
  double mass_error = 0.0;
  double mean_error = 0.0;
  bool converged = false;
  int iterations = 0;
  std::vector<PrimalLogEntry> log;
};

// Primal-dual interior-point method (Mehrotra predictor-corrector) started from the
// Dacorogna-Moser plan.
PrimalSolution solve_primal(const PrimalProblem& prob, const PrimalOptions& opts = {});

// Sum over slabs of dt c(m / rho_bar) rho_bar, rho_bar the average of the adjacent slices.
double primal_objective(const MeasureCurve& rho, const FluxField& flux, const CostSpec& cost);

struct GeodesicReport {
  double s = 0.0;
  double t = 1.0;
  double total = 0.0;
  double sub_value = 0.0;
  double deviation = 0.0;  // |sub^{1/p} - (t - s) total^{1/p}| / ((t - s) total^{1/p})
};

// Re-solves between the slices at s and t with the time axis rescaled to [0, 1].
GeodesicReport geodesic_scaling_check(const PrimalSolution& sol, const PrimalProblem& prob, double s,
                                      double t, const PrimalOptions& opts = {});

struct ContractionReport {
  double value = 0.0;
  double smoothed_value = 0.0;
  double budget = 0.0;  // relative: gaps of both solves plus discretization_budget
  bool holds = false;   // smoothed_value <= value (1 + budget)
};

ContractionReport convolution_contraction_check(const PrimalProblem& prob, const DiscreteMeasure& sigma,
                                                double discretization_budget = 0.05,
                                                const PrimalOptions& opts = {});

nlohmann::json to_json(const FluxField& f);
nlohmann::json to_json(const PrimalSolution& s);
// Reads back rho, a, value and gap; the log and potential are optional.
PrimalSolution primal_from_json(const nlohmann::json& j);
void write_log_csv(std::ostream& out, const std::vector<PrimalLogEntry>& log);

}  // namespace mbb
