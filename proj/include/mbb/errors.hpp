#pragma once

#include <stdexcept>
#include <string>

namespace mbb {

// Base for every toolkit failure. CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Malformed or unknown experiment configuration.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class GridMismatch : public Error {
 public:
  using Error::Error;
};

// Convex-order failure. `crossing_x` is the location of max(pi_mu - pi_nu).
class Infeasible : public Error {
 public:
  Infeasible(const std::string& what, double crossing_x, double violation)
      : Error(what), crossing_x_(crossing_x), violation_(violation) {}
  double crossing_x() const { return crossing_x_; }
  double violation() const { return violation_; }

 private:
  double crossing_x_;
  double violation_;
};

class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, int iterations, double residual)
      : Error(what), iterations_(iterations), residual_(residual) {}
  int iterations() const { return iterations_; }
  double residual() const { return residual_; }

 private:
  int iterations_;
  double residual_;
};

class CflViolation : public Error {
 public:
  using Error::Error;
};

class NotSuperSolution : public Error {
 public:
  NotSuperSolution(const std::string& what, double t, double x, double violation)
      : Error(what), t_(t), x_(x), violation_(violation) {}
  double t() const { return t_; }
  double x() const { return x_; }
  double violation() const { return violation_; }

 private:
  double t_;
  double x_;
  double violation_;
};

}  // namespace mbb
