#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace mbb {

// Uniform cell-centred discretisation of an interval.
struct Grid1D {
  double x_min = -1.0;
  double x_max = 1.0;
  int n_cells = 2;

  Grid1D() = default;
  Grid1D(double lo, double hi, int n);

  double h() const { return (x_max - x_min) / n_cells; }
  double center(int i) const { return x_min + (i + 0.5) * h(); }
  std::vector<double> centers() const;
  // Index of the cell containing x, clamped to [0, n_cells).
  int cell_of(double x) const;

  // Grid whose centres are symmetric about 0 and include 0 (odd cell count).
  static Grid1D symmetric(double half_width, int n_cells);

  bool operator==(const Grid1D& o) const {
    return x_min == o.x_min && x_max == o.x_max && n_cells == o.n_cells;
  }
};

// Probability measure stored as cell masses on a Grid1D. Immutable.
class DiscreteMeasure {
 public:
  static constexpr double kMassTolerance = 1e-12;

  DiscreteMeasure(Grid1D grid, std::vector<double> weights);

  // Renormalises `weights` to unit mass (rejects negative or all-zero input).
  static DiscreteMeasure normalized(Grid1D grid, std::vector<double> weights);
  // Point mass at x, deposited linearly on the two nearest centres so that
  // mass and mean are exact.
  static DiscreteMeasure dirac(const Grid1D& grid, double x);
  static DiscreteMeasure atoms(const Grid1D& grid,
                               const std::vector<std::pair<double, double>>& x_w);
  // Midpoint quadrature of a density, then renormalised.
  static DiscreteMeasure from_density(const Grid1D& grid,
                                      const std::function<double(double)>& density);
  static DiscreteMeasure gaussian(const Grid1D& grid, double mean, double variance);

  const Grid1D& grid() const { return grid_; }
  std::span<const double> weights() const { return weights_; }
  double weight(int i) const { return weights_[static_cast<std::size_t>(i)]; }
  int size() const { return grid_.n_cells; }

  double mass() const;
  double mean() const;
  double variance() const;
  // weights / h
  std::vector<double> density() const;
  // Smallest and largest centre carrying mass above `floor`.
  std::pair<double, double> support_hull(double floor = 0.0) const;

 private:
  Grid1D grid_;
  std::vector<double> weights_;
};

// pi_rho(x) = sum_j |x - y_j| w_j
double potential(const DiscreteMeasure& rho, double x);
std::vector<double> potential(const DiscreteMeasure& rho, std::span<const double> xs);

struct ConvexOrderReport {
  bool ordered = false;
  double mean_gap = 0.0;       // |mean(mu) - mean(nu)|
  double max_violation = 0.0;  // max over test points of pi_mu - pi_nu (0 if none)
  double argmax_x = 0.0;       // where the violation is largest
  double tol = 0.0;
};

// Default tolerance: 1e-8 plus 2h times the mass sitting in the boundary cells.
double default_convex_order_tol(const DiscreteMeasure& mu, const DiscreteMeasure& nu);

// Potential-function criterion, evaluated on the union of both grids' centres.
// Potentials are piecewise linear with kinks only at atoms, so this is exact.
ConvexOrderReport convex_order_report(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                                      double tol);
bool convex_order(const DiscreteMeasure& mu, const DiscreteMeasure& nu, double tol);
bool convex_order(const DiscreteMeasure& mu, const DiscreteMeasure& nu);

// Result lives on rho's grid. Requires equal cell widths.
DiscreteMeasure convolve(const DiscreteMeasure& rho, const DiscreteMeasure& sigma);
// Convolution with a gridded centred Gaussian of the given variance.
DiscreteMeasure mollify(const DiscreteMeasure& rho, double variance);
// Mass-conserving linear redistribution onto another grid.
DiscreteMeasure resample(const DiscreteMeasure& rho, const Grid1D& target);

double absolute_moment(const DiscreteMeasure& rho, int k);
double raw_moment(const DiscreteMeasure& rho, int k);

// 1-Wasserstein distance via CDF differences on the union of atoms.
double wasserstein1(const DiscreteMeasure& a, const DiscreteMeasure& b);

nlohmann::json to_json(const Grid1D& g);
Grid1D grid_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DiscreteMeasure& m);
DiscreteMeasure measure_from_json(const nlohmann::json& j);
// Two columns: centre, weight. The grid is inferred from the centres.
DiscreteMeasure measure_from_csv(std::istream& in);
void write_csv(std::ostream& out, const DiscreteMeasure& m);

// Reads a measure from a .json or .csv file.
DiscreteMeasure load_measure(const std::string& path);

}  // namespace mbb
