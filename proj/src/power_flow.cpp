#include "dsse/power_flow.hpp"

#include <cmath>
#include <string>

#include "dsse/error.hpp"

namespace dsse {
namespace {

// Positions of the PQ buses inside the reduced unknown vector.
std::vector<std::size_t> pq_buses(const GridModel& grid) {
  std::vector<std::size_t> pq;
  pq.reserve(grid.n_buses - 1);
  for (std::size_t i = 0; i < grid.n_buses; ++i) {
    if (i != grid.slack_index) pq.push_back(i);
  }
  return pq;
}

}  // namespace

Eigen::VectorXd pf_mismatch(const GridModel& grid, const ComplexVec& injections,
                            const ComplexVec& v) {
  const ComplexVec f = pfe_residual(grid, injections, v);
  const auto pq = pq_buses(grid);
  Eigen::VectorXd out(static_cast<Eigen::Index>(2 * pq.size()));
  for (std::size_t r = 0; r < pq.size(); ++r) {
    out(static_cast<Eigen::Index>(2 * r)) = f[pq[r]].real();
    out(static_cast<Eigen::Index>(2 * r + 1)) = f[pq[r]].imag();
  }
  return out;
}

Eigen::MatrixXd pf_jacobian(const GridModel& grid, const ComplexVec& v) {
  const Eigen::MatrixXd full = injection_jacobian(grid, v);
  const auto pq = pq_buses(grid);
  const auto m = static_cast<Eigen::Index>(2 * pq.size());
  Eigen::MatrixXd jac(m, m);
  for (std::size_t r = 0; r < pq.size(); ++r) {
    for (std::size_t c = 0; c < pq.size(); ++c) {
      const auto fr = static_cast<Eigen::Index>(2 * pq[r]);
      const auto fc = static_cast<Eigen::Index>(2 * pq[c]);
      jac.block<2, 2>(static_cast<Eigen::Index>(2 * r), static_cast<Eigen::Index>(2 * c)) =
          -full.block<2, 2>(fr, fc);
    }
  }
  return jac;
}

PowerFlowSolution solve_power_flow(const GridModel& grid, const ComplexVec& injections,
                                   const PowerFlowOptions& opts) {
  if (opts.max_iterations < 1) throw InvalidInput("power flow: max_iterations must be >= 1");
  if (!(opts.tolerance > 0.0)) throw InvalidInput("power flow: tolerance must be positive");
  check_phasors(injections, grid.n_buses, "power flow injections");

  ComplexVec v;
  if (opts.initial_guess) {
    check_phasors(*opts.initial_guess, grid.n_buses, "power flow initial guess");
    v = *opts.initial_guess;
  } else {
    v.assign(grid.n_buses, opts.slack_voltage);
  }
  v[grid.slack_index] = opts.slack_voltage;

  const auto pq = pq_buses(grid);
  PowerFlowSolution sol;
  Eigen::VectorXd mismatch = pf_mismatch(grid, injections, v);
  double norm = mismatch.size() ? mismatch.lpNorm<Eigen::Infinity>() : 0.0;
  int it = 0;
  while (norm > opts.tolerance) {
    if (it == opts.max_iterations) {
      throw ConvergenceError("power flow did not converge in " + std::to_string(it) +
                                 " iterations (mismatch " + std::to_string(norm) + ")",
                             it, norm);
    }
    const Eigen::MatrixXd jac = pf_jacobian(grid, v);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
    if (!(lu.rcond() > 1e-14)) throw NumericalError("power flow: singular Jacobian");
    const Eigen::VectorXd dx = lu.solve(-mismatch);
    for (std::size_t r = 0; r < pq.size(); ++r) {
      v[pq[r]] += Complex{dx(static_cast<Eigen::Index>(2 * r)),
                          dx(static_cast<Eigen::Index>(2 * r + 1))};
    }
    ++it;
    mismatch = pf_mismatch(grid, injections, v);
    norm = mismatch.lpNorm<Eigen::Infinity>();
    if (!std::isfinite(norm)) throw NumericalError("power flow: mismatch became non-finite");
  }

  sol.s = injections;
  sol.s[grid.slack_index] = pfe_injections(grid, v)[grid.slack_index];
  sol.v = std::move(v);
  sol.iterations = it;
  sol.final_mismatch = norm;
  return sol;
}

}  // namespace dsse
