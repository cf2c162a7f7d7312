#pragma once
// Weighted-least-squares baseline: missing powers are filled with their last
// known values, each bus's residual is weighted by the inverse spread of its
// recent power history, and the weighted power-flow residual is minimized by
// Levenberg-Marquardt over rectangular voltages.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dsse/data_pipeline.hpp"
#include "dsse/grid.hpp"

namespace dsse {

/// Missing entries come from s_prev, observed ones from the partial frame.
/// `partial_s` lists the observed powers in bus order.
ComplexVec persistence_complete(const ComplexVec& s_prev, const ComplexVec& partial_s,
                                const ObservabilityMask& mask);

/// W_i = 1 / max(std Re s_i + std Im s_i, 1e-6) over the history frames
/// (population std).
std::vector<double> compute_weights(const std::vector<ComplexVec>& history_s);

inline constexpr double kWeightFloor = 1e-6;

/// F = 1/2 sum_i W_i |s_i - v_i conj((Y v)_i)|^2
double wls_objective(const GridModel& grid, const ComplexVec& v, const ComplexVec& s,
                     std::span<const double> weights);

struct LmOptions {
  int max_iterations = 200;
  double gradient_tolerance = 1e-10;  // on ||J^T W r||_inf
  double step_tolerance = 1e-12;      // relative step size
  double initial_damping_factor = 1e-3;
  double max_damping = 1e16;
};

struct LmResult {
  Eigen::VectorXd x;
  int iterations = 0;  // loop passes, accepted or not
  int accepted_steps = 0;
  double initial_objective = 0.0;
  double objective = 0.0;
  double gradient_norm = 0.0;
  bool converged = false;
  std::string stop_reason;
};

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using JacobianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

/// Minimizes 1/2 r(x)^T diag(w) r(x) with Nielsen's damping update. Returns
/// after convergence or max_iterations (converged = false); throws
/// ConvergenceError when the damped normal matrix stays singular.
LmResult levenberg_marquardt(const ResidualFn& residual, const JacobianFn& jacobian,
                             const Eigen::VectorXd& x0, std::span<const double> row_weights,
                             const LmOptions& opts = {});

struct WlsResult {
  ComplexVec v;
  ComplexVec s_hat;  // persistence-completed powers
  std::vector<double> weights;
  LmResult lm;
};

/// Real residual rows [Re f_0, Im f_0, ...] of f = s - diag(v) conj(Y v) and
/// their Jacobian with respect to the interleaved rectangular voltages.
Eigen::VectorXd wls_residual(const GridModel& grid, const ComplexVec& s, const ComplexVec& v);
Eigen::MatrixXd wls_jacobian(const GridModel& grid, const ComplexVec& v);

/// Estimates v(t) from a sequence: persistence completion, weights from the
/// history, LM from v(t-1). The PFE are invariant to a common phase rotation,
/// so the imaginary part of the slack voltage is held at its initial value
/// and the remaining 2N-1 rectangular components are free.
WlsResult wls_estimate(const SfseSequence& sequence, const GridModel& grid,
                       const ObservabilityMask& mask, const LmOptions& opts = {});

}  // namespace dsse
