#pragma once
// Shared fixtures for the unit tests.

#include <complex>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dsse/grid.hpp"

namespace test {

using dsse::Complex;
using dsse::ComplexVec;
using dsse::GridModel;

inline std::string data_path(const std::string& name) { return std::string(DSSE_DATA_DIR) + "/" + name; }

/// Grid with an explicit admittance matrix (no branch list, not validated).
inline GridModel grid_from_y(const Eigen::MatrixXcd& y, std::size_t slack = 0) {
  GridModel g;
  g.n_buses = static_cast<std::size_t>(y.rows());
  g.slack_index = slack;
  g.y = y;
  return g;
}

/// Random radial feeder: bus k > 0 hangs off a random earlier bus.
inline GridModel random_radial(std::mt19937_64& rng, std::size_t n, bool shunts = false) {
  std::uniform_real_distribution<double> r(5.0, 50.0), x(5.0, 80.0), b(0.0, 0.05);
  dsse::BranchList br;
  for (std::size_t k = 1; k < n; ++k) {
    std::uniform_int_distribution<std::size_t> parent(0, k - 1);
    dsse::Branch e;
    e.from = parent(rng);
    e.to = k;
    e.series = {r(rng), -x(rng)};
    if (shunts) e.shunt_half = {0.0, b(rng)};
    br.push_back(e);
  }
  return dsse::make_grid(br, n, 0, 4.8, 2.5);
}

inline ComplexVec random_voltages(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> mag(0.9, 1.1), ang(-0.2, 0.2);
  ComplexVec v(n);
  for (auto& z : v) z = std::polar(mag(rng), ang(rng));
  return v;
}

/// Central-difference Jacobian of f: R^n -> R^m.
inline Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = 1e-5) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd J(f0.size(), x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::VectorXd xp = x, xm = x;
    xp(k) += h;
    xm(k) -= h;
    J.col(k) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return J;
}

/// Max over entries of |a - ref| / max(|ref|, 1).
inline double rel_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& ref) {
  return ((a - ref).cwiseAbs().array() / ref.cwiseAbs().array().max(1.0)).maxCoeff();
}

inline Eigen::VectorXd to_eigen(const std::vector<double>& x) {
  return Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
}

}  // namespace test
