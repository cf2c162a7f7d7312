#pragma once
// Phasor arithmetic, bus admittance model and the AC power-flow equations.
//
// Conventions used throughout the library:
//  * buses are 0-based; reports print them 1-based;
//  * all physics is per-unit;
//  * s is the net complex power injection, s = diag(v) conj(Y) conj(v);
//  * a ComplexVec flattens to interleaved [Re z0, Im z0, Re z1, Im z1, ...].

#include <complex>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dsse {

using Complex = std::complex<double>;
using ComplexVec = std::vector<Complex>;

struct Branch {
  std::size_t from = 0;
  std::size_t to = 0;
  Complex series{0.0, 0.0};      // series admittance, p.u.
  Complex shunt_half{0.0, 0.0};  // shunt admittance placed at each end, p.u.
};

using BranchList = std::vector<Branch>;

struct GridModel {
  std::size_t n_buses = 0;
  std::size_t slack_index = 0;
  Eigen::MatrixXcd y;
  double base_kv = 1.0;
  double base_mva = 1.0;
  BranchList branches;
};

/// Which quantities a bus reports at the partially observable step.
struct ObservabilityMask {
  std::vector<bool> power_observed;
  std::vector<bool> voltage_observed;

  std::size_t n_buses() const { return power_observed.size(); }
  std::size_t n_s() const;
  std::size_t n_v() const;

  /// Buses lose reporting from the highest index down towards bus 0, so the
  /// first n_s buses report power and the first n_v report voltage.
  static ObservabilityMask from_counts(std::size_t n_buses, std::size_t n_s, std::size_t n_v);
  static ObservabilityMask full(std::size_t n_buses) { return from_counts(n_buses, n_buses, n_buses); }
};

/// Bus admittance matrix. Parallel branches are summed. Throws InvalidInput on
/// out-of-range indices, self-loops or a disconnected network.
Eigen::MatrixXcd build_admittance(const BranchList& branches, std::size_t n_buses);

GridModel make_grid(BranchList branches, std::size_t n_buses, std::size_t slack_index,
                    double base_kv, double base_mva);

/// s_i = v_i * conj((Y v)_i)
ComplexVec pfe_injections(const GridModel& grid, const ComplexVec& v);

/// f = s_target - pfe_injections(grid, v)
ComplexVec pfe_residual(const GridModel& grid, const ComplexVec& s_target, const ComplexVec& v);

/// Max over buses of max(|Re f_i|, |Im f_i|).
double residual_inf_norm(const ComplexVec& f);

/// Degree of observability (n_s + n_v) / (2 n_buses).
double observability(std::size_t n_s, std::size_t n_v, std::size_t n_buses);

/// Real 2N x 2N Jacobian of the injections p(v) = diag(v) conj(Y v) with
/// respect to the interleaved rectangular voltages. Rows are interleaved
/// (Re p_i, Im p_i), columns (Re v_k, Im v_k).
Eigen::MatrixXd injection_jacobian(const GridModel& grid, const ComplexVec& v);

std::vector<double> flatten(const ComplexVec& z);
ComplexVec unflatten(std::span<const double> x);

/// Throws InvalidInput if any entry is NaN/Inf or the length is wrong.
void check_phasors(const ComplexVec& z, std::size_t expected_size, const char* what);

// Per-unit conversions at the report boundary. Voltage base is line-to-line kV.
double voltage_pu_to_kv(const GridModel& grid, double v_pu);
double voltage_kv_to_pu(const GridModel& grid, double v_kv);
double power_pu_to_mva(const GridModel& grid, double s_pu);
double power_mva_to_pu(const GridModel& grid, double s_mva);
double impedance_base_ohm(const GridModel& grid);

/// Loads a JSON case file: n_buses, slack_index, base_kv, base_mva and
/// branches [{from, to, g, b, shunt_b}] where (g, b) is the series admittance
/// and shunt_b the total line-charging susceptance, all per-unit.
GridModel load_case(const std::filesystem::path& path);
GridModel parse_case(const std::string& json_text, const std::string& source_name = "<memory>");
/// Inverse of parse_case (branch shunts must be purely susceptive).
std::string case_to_json(const GridModel& grid);

}  // namespace dsse
