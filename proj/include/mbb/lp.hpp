#pragma once

#include <vector>

namespace mbb {

// Column-major sparse matrix for equality-form LPs.
struct SparseColumns {
  int n_rows = 0;
  struct Column {
    std::vector<int> rows;
    std::vector<double> vals;
  };
  std::vector<Column> cols;

  int n_cols() const { return static_cast<int>(cols.size()); }
  void add_column(std::vector<int> rows, std::vector<double> vals);
};

enum class LpStatus { Optimal, Infeasible, Unbounded, IterationLimit };

enum class LpMethod { Auto, Simplex, InteriorPoint };

struct LpOptions {
  LpMethod method = LpMethod::Auto;
  // Auto uses the simplex up to this many columns and the interior point above.
  int simplex_max_columns = 2000;
  int max_iterations = 200000;
  int max_ipm_iterations = 200;
  double ipm_tol = 1e-11;
  double feasibility_tol = 1e-9;
  double optimality_tol = 1e-11;
  double pivot_tol = 1e-10;
  int refactor_every = 64;
  // Consecutive degenerate pivots before switching from Dantzig to Bland pricing.
  int degenerate_switch = 50;
};

struct LpResult {
  LpStatus status = LpStatus::IterationLimit;
  std::vector<double> x;
  std::vector<double> y;  // equality multipliers, in the caller's row signs
  double objective = 0.0;
  double dual_objective = 0.0;  // b . y
  double phase1_infeasibility = 0.0;
  int iterations = 0;
};

// min c.x  s.t.  A x = b, x >= 0. Redundant rows are tolerated by both methods.
LpResult solve_lp(const SparseColumns& A, const std::vector<double>& b,
                  const std::vector<double>& c, const LpOptions& opts = {});

// Two-phase revised simplex with an explicit basis inverse. Pricing is Dantzig with
// lowest-index ties, falling back to Bland's rule on stalls; the ratio test breaks
// ties on the lowest basic index. Returns a vertex and detects infeasibility.
LpResult solve_lp_simplex(const SparseColumns& A, const std::vector<double>& b,
                          const std::vector<double>& c, const LpOptions& opts = {});

// Mehrotra predictor-corrector on the dense normal equations. Reports Infeasible
// only heuristically (diverging iterates); callers should certify feasibility first.
LpResult solve_lp_interior(const SparseColumns& A, const std::vector<double>& b,
                           const std::vector<double>& c, const LpOptions& opts = {});

}  // namespace mbb
