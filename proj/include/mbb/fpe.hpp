#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "mbb/measures.hpp"

namespace mbb {

// a(t, x) >= 0, the squared diffusion rate.
using DiffusionFn = std::function<double(double, double)>;

// Diffusion coefficient tabulated at (times[k], grid centre j).
class DiffusionField {
 public:
  DiffusionField(std::vector<double> times, Grid1D grid, std::vector<std::vector<double>> values);
  static DiffusionField constant(double value, const Grid1D& grid, int n_t = 1);
  static DiffusionField sample(const DiffusionFn& a, const std::vector<double>& times,
                               const Grid1D& grid);

  const std::vector<double>& times() const { return times_; }
  const Grid1D& grid() const { return grid_; }
  const std::vector<std::vector<double>>& values() const { return values_; }
  double value(int k, int j) const {
    return values_[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
  }
  double max_value() const;

  // Bilinear interpolation, constant extrapolation, clamped to >= 0.
  double at(double t, double x) const;
  DiffusionFn as_function() const;

 private:
  std::vector<double> times_;
  Grid1D grid_;
  std::vector<std::vector<double>> values_;
};

// Densities along a time grid; slices are raw cell masses on one Grid1D.
struct MeasureCurve {
  Grid1D grid;
  std::vector<double> times;
  std::vector<std::vector<double>> slices;

  int n_slices() const { return static_cast<int>(slices.size()); }
  DiscreteMeasure slice(int k) const;
  double mass(int k) const;
  double mean(int k) const;
  double second_moment(int k) const;
  double variance(int k) const;
};

enum class FpeScheme { Explicit, Implicit };

struct FpeOptions {
  FpeScheme scheme = FpeScheme::Implicit;
  int n_steps = 100;
  double t_start = 0.0;
  double t_end = 1.0;
  // Initial data supported on at most two cells is smoothed with variance 4h^2.
  bool mollify_point_masses = true;
  // Halvings of the step allowed when a slice goes negative.
  int max_retries = 6;
};

// Conservative scheme for d_t rho = 1/2 d_xx (a rho): the flux (a rho)_{j+1} - (a rho)_j
// through interior faces, zero flux through the two outer faces.
MeasureCurve solve_fpe(const DiscreteMeasure& mu0, const DiffusionFn& a, const FpeOptions& opts);
MeasureCurve solve_fpe(const DiscreteMeasure& mu0, const DiffusionField& a, const FpeOptions& opts);

// Smooth test function with the derivatives the weak form needs.
struct TestFunction {
  std::function<double(double, double)> phi;
  std::function<double(double, double)> phi_t;
  std::function<double(double, double)> phi_xx;

  static TestFunction constant();
  static TestFunction linear();
  static TestFunction quadratic();
  // exp(-(x - c)^2 / (2 w^2)), time independent.
  static TestFunction bump(double centre, double width);
};

// | int_0^1 sum_j (phi_t + a phi_xx / 2) rho_t dt - (sum phi(1) rho_1 - sum phi(0) rho_0) |
// with the trapezoid rule over the curve's time nodes.
double weak_residual(const MeasureCurve& rho, const DiffusionFn& a, const TestFunction& phi);

// Monte-Carlo martingale paths dX = sqrt(a(t, X)) dW with records at a fixed stride.
struct PathEnsemble {
  std::uint64_t seed = 0;
  double dt = 0.0;
  int n_paths = 0;
  std::vector<double> record_times;
  // Row-major [path][record].
  std::vector<double> x;
  std::vector<double> qv;  // a(t, X_t) at the record times
  std::vector<std::int64_t> substeps;  // per path, total Euler steps taken

  int n_records() const { return static_cast<int>(record_times.size()); }
  double position(int path, int rec) const {
    return x[static_cast<std::size_t>(path) * record_times.size() + static_cast<std::size_t>(rec)];
  }
  double diffusion(int path, int rec) const {
    return qv[static_cast<std::size_t>(path) * record_times.size() + static_cast<std::size_t>(rec)];
  }
  // Index of the record nearest to t.
  int record_index(double t) const;
};

struct SdeOptions {
  int n_paths = 10000;
  double dt = 1e-3;
  std::uint64_t seed = 1;
  int n_records = 64;
  double t_start = 0.0;
  double t_end = 1.0;
  // When positive, each Euler step is shortened so that a dt <= step_length^2.
  // Increments stay conditionally centred, so paths remain martingales.
  double step_length = 0.0;
  std::int64_t max_substeps_per_path = 50'000'000;
  int threads = 0;  // 0: hardware concurrency, capped by MBB_THREADS
};

PathEnsemble simulate_sde(const DiscreteMeasure& mu0, const DiffusionFn& a, const SdeOptions& opts);
PathEnsemble simulate_sde(const DiscreteMeasure& mu0, const DiffusionField& a, const SdeOptions& opts);

// "sin:A" gives 1 + A sin^2(x), "const:v" the constant v.
DiffusionFn named_field(const std::string& spec);

// Worker count honouring MBB_THREADS.
int worker_count(int requested);
// Independent 64-bit seed for stream `index` of `seed`.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index);

// Nearest-cell histogram of the record at `rec` on `grid` (clamped at the ends).
DiscreteMeasure empirical_measure(const PathEnsemble& ens, int rec, const Grid1D& grid);
// W1 between the binned empirical law and rho.
double marginal_distance(const PathEnsemble& ens, int rec, const DiscreteMeasure& rho);

nlohmann::json to_json(const DiffusionField& a);
DiffusionField diffusion_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MeasureCurve& c);
MeasureCurve curve_from_json(const nlohmann::json& j);
// (t, x, value) triples.
void write_csv(std::ostream& out, const MeasureCurve& c);
void write_csv(std::ostream& out, const DiffusionField& a);

}  // namespace mbb
