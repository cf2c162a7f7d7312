#include "dsse/wls_estimator.hpp"

#include <algorithm>
#include <cmath>

#include "dsse/error.hpp"

namespace dsse {

ComplexVec persistence_complete(const ComplexVec& s_prev, const ComplexVec& partial_s,
                                const ObservabilityMask& mask) {
  if (s_prev.empty()) throw InvalidInput("persistence_complete: empty history");
  if (s_prev.size() != mask.n_buses()) throw InvalidInput("persistence_complete: mask size");
  if (partial_s.size() != mask.n_s()) {
    throw InvalidInput("persistence_complete: partial frame has " +
                       std::to_string(partial_s.size()) + " powers, mask expects " +
                       std::to_string(mask.n_s()));
  }
  ComplexVec out = s_prev;
  std::size_t k = 0;
  for (std::size_t b = 0; b < out.size(); ++b) {
    if (mask.power_observed[b]) out[b] = partial_s[k++];
  }
  return out;
}

std::vector<double> compute_weights(const std::vector<ComplexVec>& history_s) {
  if (history_s.size() < 2) throw InvalidInput("compute_weights: need at least two frames");
  const std::size_t n = history_s.front().size();
  const double m = static_cast<double>(history_s.size());
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mr = 0.0, mi = 0.0;
    for (const auto& f : history_s) {
      if (f.size() != n) throw InvalidInput("compute_weights: ragged history");
      mr += f[i].real();
      mi += f[i].imag();
    }
    mr /= m;
    mi /= m;
    double vr = 0.0, vi = 0.0;
    for (const auto& f : history_s) {
      vr += (f[i].real() - mr) * (f[i].real() - mr);
      vi += (f[i].imag() - mi) * (f[i].imag() - mi);
    }
    const double denom = std::sqrt(vr / m) + std::sqrt(vi / m);
    w[i] = 1.0 / std::max(denom, kWeightFloor);
  }
  return w;
}

double wls_objective(const GridModel& grid, const ComplexVec& v, const ComplexVec& s,
                     std::span<const double> weights) {
  if (weights.size() != grid.n_buses) throw InvalidInput("wls_objective: weight count");
  const auto f = pfe_residual(grid, s, v);
  double F = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) F += weights[i] * std::norm(f[i]);
  return 0.5 * F;
}

Eigen::VectorXd wls_residual(const GridModel& grid, const ComplexVec& s, const ComplexVec& v) {
  const auto f = pfe_residual(grid, s, v);
  Eigen::VectorXd r(2 * static_cast<Eigen::Index>(f.size()));
  for (std::size_t i = 0; i < f.size(); ++i) {
    r(2 * static_cast<Eigen::Index>(i)) = f[i].real();
    r(2 * static_cast<Eigen::Index>(i) + 1) = f[i].imag();
  }
  return r;
}

Eigen::MatrixXd wls_jacobian(const GridModel& grid, const ComplexVec& v) {
  return -injection_jacobian(grid, v);
}

namespace {

double weighted_half_sq(const Eigen::VectorXd& r, const Eigen::VectorXd& w) {
  return 0.5 * (w.array() * r.array().square()).sum();
}

}  // namespace

LmResult levenberg_marquardt(const ResidualFn& residual, const JacobianFn& jacobian,
                             const Eigen::VectorXd& x0, std::span<const double> row_weights,
                             const LmOptions& opts) {
  const Eigen::Map<const Eigen::VectorXd> w(row_weights.data(),
                                           static_cast<Eigen::Index>(row_weights.size()));
  LmResult res;
  res.x = x0;
  Eigen::VectorXd r = residual(res.x);
  if (r.size() != w.size()) throw InvalidInput("levenberg_marquardt: weight/residual size mismatch");
  Eigen::MatrixXd J = jacobian(res.x);
  if (J.rows() != r.size() || J.cols() != x0.size()) {
    throw InvalidInput("levenberg_marquardt: Jacobian shape mismatch");
  }
  double F = weighted_half_sq(r, w);
  if (!std::isfinite(F)) throw NumericalError("levenberg_marquardt: non-finite initial objective");
  res.initial_objective = F;

  Eigen::MatrixXd A = J.transpose() * w.asDiagonal() * J;
  Eigen::VectorXd g = J.transpose() * (w.array() * r.array()).matrix();
  res.gradient_norm = g.lpNorm<Eigen::Infinity>();
  double mu = opts.initial_damping_factor * A.diagonal().maxCoeff();
  if (!(mu > 0.0)) mu = opts.initial_damping_factor;
  double nu = 2.0;

  if (res.gradient_norm <= opts.gradient_tolerance) {
    res.objective = F;
    res.converged = true;
    res.stop_reason = "gradient tolerance";
    return res;
  }

  const auto n = x0.size();
  while (res.iterations < opts.max_iterations) {
    ++res.iterations;
    Eigen::MatrixXd M = A;
    M.diagonal().array() += mu;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
    Eigen::VectorXd delta;
    bool solved = ldlt.info() == Eigen::Success && ldlt.isPositive();
    if (solved) {
      delta = ldlt.solve(-g);
      solved = delta.allFinite();
    }
    if (!solved) {
      mu *= nu;
      nu *= 2.0;
      if (mu > opts.max_damping) {
        throw ConvergenceError("levenberg_marquardt: damped normal matrix singular at mu=" +
                                   std::to_string(mu) + " (n=" + std::to_string(n) + ")",
                               res.iterations, res.gradient_norm);
      }
      continue;
    }
    if (delta.norm() <= opts.step_tolerance * (res.x.norm() + opts.step_tolerance)) {
      res.converged = true;
      res.stop_reason = "step tolerance";
      break;
    }
    const Eigen::VectorXd x_new = res.x + delta;
    const Eigen::VectorXd r_new = residual(x_new);
    const double F_new = weighted_half_sq(r_new, w);
    const double predicted = 0.5 * delta.dot(mu * delta - g);
    const double rho = predicted > 0.0 ? (F - F_new) / predicted : -1.0;
    if (std::isfinite(F_new) && F_new <= F && rho > 0.0) {
      res.x = x_new;
      r = r_new;
      F = F_new;
      ++res.accepted_steps;
      J = jacobian(res.x);
      A = J.transpose() * w.asDiagonal() * J;
      g = J.transpose() * (w.array() * r.array()).matrix();
      res.gradient_norm = g.lpNorm<Eigen::Infinity>();
      const double t = 2.0 * rho - 1.0;
      mu *= std::max(1.0 / 3.0, 1.0 - t * t * t);
      nu = 2.0;
      if (res.gradient_norm <= opts.gradient_tolerance) {
        res.converged = true;
        res.stop_reason = "gradient tolerance";
        break;
      }
    } else {
      mu *= nu;
      nu *= 2.0;
      if (mu > opts.max_damping) {
        // No descent is left at machine precision.
        res.stop_reason = "damping limit";
        break;
      }
    }
  }
  if (res.stop_reason.empty()) res.stop_reason = "max iterations";
  res.objective = F;
  return res;
}

WlsResult wls_estimate(const SfseSequence& seq, const GridModel& grid,
                       const ObservabilityMask& mask, const LmOptions& opts) {
  const std::size_t n = grid.n_buses;
  if (seq.history_s.empty() || seq.history_v.empty()) {
    throw InvalidInput("wls_estimate: sequence has no history");
  }
  if (mask.n_buses() != n) throw InvalidInput("wls_estimate: mask size");
  WlsResult out;
  out.s_hat = persistence_complete(seq.history_s.back(), seq.partial_s, mask);
  out.weights = compute_weights(seq.history_s);
  const ComplexVec& v0 = seq.history_v.back();
  check_phasors(v0, n, "wls_estimate v(t-1)");

  // x holds all 2N rectangular components except Im v_slack.
  const auto pinned = static_cast<Eigen::Index>(2 * grid.slack_index + 1);
  const double pinned_value = v0[grid.slack_index].imag();
  const auto N2 = static_cast<Eigen::Index>(2 * n);
  auto to_v = [&](const Eigen::VectorXd& x) {
    ComplexVec v(n);
    Eigen::Index k = 0;
    for (Eigen::Index c = 0; c < N2; ++c) {
      const double val = c == pinned ? pinned_value : x(k++);
      if (c % 2 == 0) v[static_cast<std::size_t>(c / 2)].real(val);
      else v[static_cast<std::size_t>(c / 2)].imag(val);
    }
    return v;
  };
  Eigen::VectorXd x0(N2 - 1);
  {
    const auto flat = flatten(v0);
    Eigen::Index k = 0;
    for (Eigen::Index c = 0; c < N2; ++c) {
      if (c != pinned) x0(k++) = flat[static_cast<std::size_t>(c)];
    }
  }
  std::vector<double> row_w(2 * n);
  for (std::size_t i = 0; i < n; ++i) row_w[2 * i] = row_w[2 * i + 1] = out.weights[i];

  auto residual = [&](const Eigen::VectorXd& x) { return wls_residual(grid, out.s_hat, to_v(x)); };
  auto jacobian = [&](const Eigen::VectorXd& x) {
    const Eigen::MatrixXd full = wls_jacobian(grid, to_v(x));
    Eigen::MatrixXd J(N2, N2 - 1);
    J.leftCols(pinned) = full.leftCols(pinned);
    J.rightCols(N2 - 1 - pinned) = full.rightCols(N2 - 1 - pinned);
    return J;
  };
  out.lm = levenberg_marquardt(residual, jacobian, x0, row_w, opts);
  out.v = to_v(out.lm.x);
  return out;
}

}  // namespace dsse
