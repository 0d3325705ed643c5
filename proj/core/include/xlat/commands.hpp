#pragma once
// Batch command-line surface tying the modules together: corpus generation
// and statistics, the enumeration-based verification suites, gradient
// checking, training, translation, evaluation, and parameter-growth figures.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace xlat::cli {

// One row of a verification table: an oriented check value, the threshold it
// was held against, and whether it passed.
struct CheckRow {
  std::string name;
  double value = 0.0;      // residual (|.|) or signed worst-case bound gap
  double threshold = 0.0;  // tolerance the value was compared against
  bool pass = false;
};

// Exact-identity checks on seeded enumerable models. Residuals must stay
// below `tol`.
std::vector<CheckRow> run_identity_suite(uint64_t seed, int cases, double tol);

// Bound-direction checks on the same seeded models: every inequality must
// hold with gap >= -tol, the analytic gap decompositions must match to tol,
// and an inference family equal to the exact posterior must close the
// evidence gap to tol_tight.
std::vector<CheckRow> run_bound_suite(uint64_t seed, int cases, double lambda,
                                      double tol, double tol_tight);

// Central-difference gradient checks: one row per differentiable tensor op,
// the Gaussian divergence closed forms, and probes of the complete training
// loss on a two-language micro model.
std::vector<CheckRow> run_gradient_suite(uint64_t seed, double tol_ops,
                                         double tol_loss);

// Runs one subcommand (no program name in `args`) and returns the process
// exit code: 0 success, 2 bad usage or configuration, 3 verification
// failure, 4 I/O or parse failure.
int run(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace xlat::cli
