#pragma once

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mbb/lp.hpp"
#include "mbb/measures.hpp"

namespace mbb {

// Joint law of (X0, X1) on source x target cells.
struct MartingaleCoupling {
  Grid1D source;
  Grid1D target;
  std::vector<std::vector<double>> pi;  // pi[i][j]
  double value = 0.0;
  double dual_value = 0.0;
  double row_residual = 0.0;         // max_i |sum_j pi_ij - mu_i|
  double column_residual = 0.0;      // max_j |sum_i pi_ij - nu_j|
  double martingale_residual = 0.0;  // max_i |sum_j pi_ij (y_j - x_i)|
  int iterations = 0;

  double at(int i, int j) const {
    return pi[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
};

using PairCost = std::function<double(double, double)>;

// "abs" gives |y - x|, "powerK" |y - x|^K; a path ending in .csv names a table with one row per
// source cell of `source` and one column per target cell of `target`.
PairCost pair_cost(const std::string& spec, const Grid1D& source, const Grid1D& target);

// Residual norms of `pi` against the given marginals; fills the residual fields.
void compute_residuals(MartingaleCoupling& c, const DiscreteMeasure& mu,
                       const DiscreteMeasure& nu);

// min sum c(x_i, y_j) pi_ij over martingale couplings of mu and nu.
// Throws Infeasible (with the potential crossing point) or NonConvergence.
MartingaleCoupling solve_mot_lp(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                                const PairCost& cost, const LpOptions& opts = {});

// sum_i MOT^i(rho_{t_{i-1}}, rho_{t_i}) (t_i - t_{i-1}) with
// c^i(x, y) = c_point((y - x) / sqrt(t_i - t_{i-1})), along the supplied curve.
double rescaled_cumulative_cost(const std::vector<DiscreteMeasure>& marginals,
                                const std::vector<double>& partition,
                                const std::function<double(double)>& c_point);

nlohmann::json to_json(const MartingaleCoupling& c);

}  // namespace mbb
