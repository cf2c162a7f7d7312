#pragma once
// Newton-Raphson AC power flow in rectangular coordinates: one slack bus,
// every other bus PQ. Used to produce ground-truth voltages for the dataset.

#include <optional>

#include "dsse/grid.hpp"

namespace dsse {

struct PowerFlowOptions {
  int max_iterations = 50;
  double tolerance = 1e-10;  // infinity norm over stacked Re/Im mismatches, p.u.
  Complex slack_voltage{1.0, 0.0};
  /// Warm start; flat start (slack_voltage everywhere) when empty.
  std::optional<ComplexVec> initial_guess;
};

struct PowerFlowSolution {
  ComplexVec v;
  ComplexVec s;  // the specified PQ injections plus the back-computed slack entry
  int iterations = 0;
  double final_mismatch = 0.0;
};

/// Solves for the voltages that realise `injections` at all PQ buses; the
/// slack entry of `injections` is ignored. Throws ConvergenceError when the
/// mismatch stays above tolerance and NumericalError on a singular Jacobian.
PowerFlowSolution solve_power_flow(const GridModel& grid, const ComplexVec& injections,
                                   const PowerFlowOptions& opts = {});

/// Mismatch vector F(v) = [Re, Im](s - p(v)) over the PQ buses, interleaved.
Eigen::VectorXd pf_mismatch(const GridModel& grid, const ComplexVec& injections, const ComplexVec& v);

/// dF/dx where x holds the interleaved rectangular voltages of the PQ buses
/// (slack row and column removed): 2(N-1) x 2(N-1).
Eigen::MatrixXd pf_jacobian(const GridModel& grid, const ComplexVec& v);

}  // namespace dsse
