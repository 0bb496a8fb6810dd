#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "json.hpp"
#include "mbb/fpe.hpp"
#include "mbb/measures.hpp"

namespace mbb {

using PointCost = std::function<double(double)>;

// 0 = t_0 < ... < t_n = 1.
struct Partition {
  std::vector<double> times;

  static Partition uniform(int n);
  double mesh() const;
  void validate() const;
};

enum class RelaxMode {
  Plain,          // sum E[c(dX / sqrt(dt))] dt
  PowerOneOverP,  // sum |E[c(dX / sqrt(dt))]|^{1/p} dt
};

struct Estimate {
  double value = 0.0;
  double se = 0.0;
};

struct CumulativeCost {
  double value = 0.0;
  double se = 0.0;
  std::vector<Estimate> terms;  // E[c(dX / sqrt(dt))] per interval
  Partition snapped;            // the partition actually used, on record times
  int moved_nodes = 0;          // nodes that had to be snapped to a record time
  std::vector<double> per_path;  // plain mode only: the per-path sums
};

// Partition nodes are snapped to the nearest record time; two nodes landing on the same
// record (a partition finer than the path grid) is an InvalidArgument.
CumulativeCost discrete_cumulative_cost(const PathEnsemble& ens, const Partition& pi, const PointCost& c,
                                        RelaxMode mode = RelaxMode::Plain, double p = 2.0);

struct RelaxationRhs {
  double value = 0.0;
  double se = 0.0;
  std::vector<double> per_path;  // plain mode only
};

// int_0^1 E[c(sqrt(a_t) Z)] dt with Z integrated by Gauss-Hermite and the time integral by the
// trapezoid rule over the record times; in power mode the 1/p power is taken of the path
// average at each record time.
RelaxationRhs relaxation_rhs(const PathEnsemble& ens, const PointCost& c, RelaxMode mode = RelaxMode::Plain,
                             double p = 2.0, int quad_order = 40);

struct ConvergenceRow {
  double mesh = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  double diff = 0.0;  // |lhs - rhs|
  double se = 0.0;    // standard error of lhs - rhs
};

struct ConvergenceTable {
  std::vector<ConvergenceRow> rows;  // in the order the meshes were given
  double tol_scheme = 0.02;
  bool finest_within_tolerance = false;  // diff <= max(3 se, tol_scheme) at the smallest mesh
  bool non_increasing = false;  // diff(finer) <= diff(coarser) + 2 max(se) for consecutive meshes
  bool passed() const { return finest_within_tolerance && non_increasing; }
};

// meshes are interval lengths 1/n with n an integer.
ConvergenceTable relaxation_convergence(const PathEnsemble& ens, const std::vector<double>& meshes,
                                        const PointCost& c, RelaxMode mode = RelaxMode::Plain, double p = 2.0,
                                        double tol_scheme = 0.02);

struct MartingaleTest {
  double max_ratio = 0.0;  // max over nodes and bins of |mean increment| / se
  int bins_tested = 0;
};

// Bins X_{t_i} into quantile bins and compares the mean of X_{t_{i+1}} - X_{t_i} with its
// standard error in each bin holding at least min_count paths.
MartingaleTest martingale_test(const PathEnsemble& ens, const Partition& pi, int n_bins = 5, int min_count = 100);

struct EmbeddingOptions {
  double p = 2.0;
  double q_mom = 5.0;
  double r = 0.0;  // 0: the largest admissible value (q_mom - 2p) / (2p - 2)
  int n_paths = 100000;
  std::uint64_t seed = 1;
  // Random-walk step is at most h / lattice_refinement, h the grid spacing; a step of
  // length d takes d^2 time units.
  int lattice_refinement = 5;
  std::int64_t max_steps_per_path = 100'000'000;
  int threads = 0;
};

struct EmbeddingRun {
  DiscreteMeasure nu = DiscreteMeasure::dirac(Grid1D(), 0.0);
  double r = 0.0;
  double p = 2.0;
  std::vector<double> start;    // B_0 per path
  std::vector<double> tau;      // stopping time per path
  std::vector<double> stopped;  // B_tau per path
  std::vector<double> cost;     // int_0^1 (<X>'_t)^p dt per path
  Estimate expected_tau;
  Estimate expected_cost;
  double first_half_cost = 0.0;  // mean cost over the first n_paths / 2 paths
  double stability_ratio = 0.0;  // expected_cost / first_half_cost
  double stopped_w1 = 0.0;       // W1 between the law of B_tau and nu
  double q_moment = 0.0;         // E_nu |Y|^q_mom
  double latest_time = 0.0;      // max over paths of the time in [0, 1) at which X freezes
};

// beta_t = (t / (1 - t))^{1/r}
double time_change(double t, double r);
// Solves beta_t = s for t.
double time_change_inverse(double s, double r);
// int_0^1 (chi_{beta_t <= tau} beta'_t)^k dt; k = 1 gives tau back.
double time_changed_record_integral(double tau, double r, double k);

// Embeds nu into Brownian motion started from mu by the Azema-Yor rule, simulated as a chain of
// random-walk interval exits so that the stopped law is exact; a non-degenerate mu is split into
// the kernels of a martingale coupling from solve_mot_lp. X_t = B_{tau ^ beta_t}.
EmbeddingRun skorokhod_time_change(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                                   const EmbeddingOptions& opts = {});

nlohmann::json to_json(const ConvergenceTable& t);
void write_csv(std::ostream& out, const ConvergenceTable& t);
// Summary only; the per-path arrays are omitted.
nlohmann::json to_json(const EmbeddingRun& run);

}  // namespace mbb
