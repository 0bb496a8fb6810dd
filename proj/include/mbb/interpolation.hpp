#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "mbb/fpe.hpp"
#include "mbb/measures.hpp"
#include "mbb/motlp.hpp"

namespace mbb {

// Affine curve rho_t = (1-t) mu + t nu driven by a_t = 2 f / ((1-t) m + t n),
// with f(x) = int (y - x)^+ d(nu - mu)(y).
struct DacMoserPlan {
  Grid1D grid;
  DiscreteMeasure mu;
  DiscreteMeasure nu;
  std::vector<double> f;  // at cell centres
  std::vector<double> m;  // density of mu
  std::vector<double> n;  // density of nu

  double density(double t, int j) const;
  // a_t at centre j; 0 where f vanishes.
  double a(double t, int j) const;
  // Linear interpolation of f and both densities between centres.
  double a_at(double t, double x) const;
  DiffusionFn diffusion() const;
  DiscreteMeasure rho(double t) const;
  // rho_t sampled on n_t + 1 uniform nodes.
  MeasureCurve curve(int n_t) const;
  DiffusionField field(int n_t) const;
  // Largest a_t over centres and n_t + 1 time nodes.
  double sup_diffusion(int n_t) const;
};

// Requires a common grid, convex order (Infeasible otherwise) and positive
// densities wherever f > 0 (InvalidArgument otherwise).
DacMoserPlan dacorogna_moser(const DiscreteMeasure& mu, const DiscreteMeasure& nu);

struct DacMoserCost {
  double value = 0.0;  // int_0^1 int |a_t|^p d rho_t dt, exact in time
  // ||n-m||^{p-1} int |n-m|(y) int_{0}^{y} M_p(m, n)(x) |y-x|^p dx dy
  double bound = 0.0;
  // The same expression with the factor 2^p carried by a_t = 2 f / rho.
  double bound_with_factor = 0.0;
  bool within_bound = false;  // value <= 1.05 bound
};

DacMoserCost dacmoser_cost(const DacMoserPlan& plan, double p);

struct StrassenOptions {
  double epsilon = 0.05;  // standard deviation of the Gaussian mollifier
  int n_paths = 100000;
  std::uint64_t seed = 1;
  int n_steps = 200;
  // Spatial resolution of the working grid; 0 picks epsilon / 4.
  double fine_h = 0.0;
  // Cap on spatial Euler increments; 0 uses twice the working grid's cell width.
  double step_length = 0.0;
  int threads = 0;
};

struct StrassenResult {
  MartingaleCoupling coupling;  // binned on mu's grid x nu's grid
  double w1_source = 0.0;       // W1(binned X_0, mu)
  double w1_target = 0.0;       // W1(binned X_1, nu)
  // max over well-populated source cells of |E[X_1 | X_0 in cell] - centre|
  double mean_defect = 0.0;
  // Bins entering mean_defect hold at least this many paths.
  int min_bin_paths = 0;
  std::int64_t total_substeps = 0;
};

StrassenResult strassen_coupling(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                                 const StrassenOptions& opts = {});

nlohmann::json to_json(const DacMoserPlan& plan);
nlohmann::json to_json(const DacMoserCost& cost);
nlohmann::json to_json(const StrassenResult& r);

}  // namespace mbb
