#include "dsse/grid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dsse/error.hpp"

namespace dsse {

std::size_t ObservabilityMask::n_s() const {
  return static_cast<std::size_t>(std::count(power_observed.begin(), power_observed.end(), true));
}

std::size_t ObservabilityMask::n_v() const {
  return static_cast<std::size_t>(
      std::count(voltage_observed.begin(), voltage_observed.end(), true));
}

ObservabilityMask ObservabilityMask::from_counts(std::size_t n_buses, std::size_t n_s,
                                                 std::size_t n_v) {
  if (n_s > n_buses || n_v > n_buses) {
    throw InvalidInput("observability counts exceed the number of buses");
  }
  ObservabilityMask m;
  m.power_observed.assign(n_buses, false);
  m.voltage_observed.assign(n_buses, false);
  for (std::size_t i = 0; i < n_s; ++i) m.power_observed[i] = true;
  for (std::size_t i = 0; i < n_v; ++i) m.voltage_observed[i] = true;
  return m;
}

Eigen::MatrixXcd build_admittance(const BranchList& branches, std::size_t n_buses) {
  if (n_buses == 0) throw InvalidInput("grid needs at least one bus");
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(n_buses),
                                              static_cast<Eigen::Index>(n_buses));
  std::vector<std::size_t> parent(n_buses);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };

  for (const auto& br : branches) {
    if (br.from >= n_buses || br.to >= n_buses) {
      throw InvalidInput("branch bus index out of range");
    }
    if (br.from == br.to) throw InvalidInput("branch is a self-loop");
    const auto f = static_cast<Eigen::Index>(br.from);
    const auto t = static_cast<Eigen::Index>(br.to);
    y(f, f) += br.series + br.shunt_half;
    y(t, t) += br.series + br.shunt_half;
    y(f, t) -= br.series;
    y(t, f) -= br.series;
    parent[find(br.from)] = find(br.to);
  }

  const std::size_t root = find(0);
  for (std::size_t i = 1; i < n_buses; ++i) {
    if (find(i) != root) {
      throw InvalidInput("network is disconnected (bus " + std::to_string(i) + " unreachable)");
    }
  }
  return y;
}

GridModel make_grid(BranchList branches, std::size_t n_buses, std::size_t slack_index,
                    double base_kv, double base_mva) {
  if (slack_index >= n_buses) throw InvalidInput("slack_index out of range");
  if (!(base_kv > 0.0) || !(base_mva > 0.0)) throw InvalidInput("base values must be positive");
  GridModel g;
  g.n_buses = n_buses;
  g.slack_index = slack_index;
  g.y = build_admittance(branches, n_buses);
  g.base_kv = base_kv;
  g.base_mva = base_mva;
  g.branches = std::move(branches);
  return g;
}

void check_phasors(const ComplexVec& z, std::size_t expected_size, const char* what) {
  if (z.size() != expected_size) {
    throw InvalidInput(std::string(what) + ": expected " + std::to_string(expected_size) +
                       " entries, got " + std::to_string(z.size()));
  }
  for (const auto& c : z) {
    if (!std::isfinite(c.real()) || !std::isfinite(c.imag())) {
      throw InvalidInput(std::string(what) + ": non-finite entry");
    }
  }
}

ComplexVec pfe_injections(const GridModel& grid, const ComplexVec& v) {
  check_phasors(v, grid.n_buses, "pfe_injections voltage");
  const Eigen::Map<const Eigen::VectorXcd> vv(v.data(), static_cast<Eigen::Index>(v.size()));
  const Eigen::VectorXcd u = grid.y * vv;
  ComplexVec s(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) s[i] = v[i] * std::conj(u(static_cast<Eigen::Index>(i)));
  return s;
}

ComplexVec pfe_residual(const GridModel& grid, const ComplexVec& s_target, const ComplexVec& v) {
  check_phasors(s_target, grid.n_buses, "pfe_residual power");
  ComplexVec f = pfe_injections(grid, v);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = s_target[i] - f[i];
  return f;
}

double residual_inf_norm(const ComplexVec& f) {
  double m = 0.0;
  for (const auto& c : f) m = std::max({m, std::abs(c.real()), std::abs(c.imag())});
  return m;
}

double observability(std::size_t n_s, std::size_t n_v, std::size_t n_buses) {
  if (n_buses == 0) throw InvalidInput("observability: n_buses must be positive");
  if (n_s > n_buses || n_v > n_buses) {
    throw InvalidInput("observability: counts exceed n_buses");
  }
  return static_cast<double>(n_s + n_v) / (2.0 * static_cast<double>(n_buses));
}

Eigen::MatrixXd injection_jacobian(const GridModel& grid, const ComplexVec& v) {
  check_phasors(v, grid.n_buses, "injection_jacobian voltage");
  const auto n = static_cast<Eigen::Index>(grid.n_buses);
  const Eigen::Map<const Eigen::VectorXcd> vv(v.data(), n);
  const Eigen::VectorXcd u = grid.y * vv;
  const Complex j1{0.0, 1.0};

  // dp_i/dRe v_k = delta_ik conj(u_i) + v_i conj(Y_ik)
  // dp_i/dIm v_k = j delta_ik conj(u_i) - j v_i conj(Y_ik)
  Eigen::MatrixXd jac(2 * n, 2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < n; ++k) {
      const Complex cross = vv(i) * std::conj(grid.y(i, k));
      Complex d_re = cross;
      Complex d_im = -j1 * cross;
      if (i == k) {
        d_re += std::conj(u(i));
        d_im += j1 * std::conj(u(i));
      }
      jac(2 * i, 2 * k) = d_re.real();
      jac(2 * i + 1, 2 * k) = d_re.imag();
      jac(2 * i, 2 * k + 1) = d_im.real();
      jac(2 * i + 1, 2 * k + 1) = d_im.imag();
    }
  }
  return jac;
}

std::vector<double> flatten(const ComplexVec& z) {
  std::vector<double> x(2 * z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    x[2 * i] = z[i].real();
    x[2 * i + 1] = z[i].imag();
  }
  return x;
}

ComplexVec unflatten(std::span<const double> x) {
  if (x.size() % 2 != 0) throw InvalidInput("unflatten: odd length");
  ComplexVec z(x.size() / 2);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = {x[2 * i], x[2 * i + 1]};
  return z;
}

double voltage_pu_to_kv(const GridModel& grid, double v_pu) { return v_pu * grid.base_kv; }
double voltage_kv_to_pu(const GridModel& grid, double v_kv) { return v_kv / grid.base_kv; }
double power_pu_to_mva(const GridModel& grid, double s_pu) { return s_pu * grid.base_mva; }
double power_mva_to_pu(const GridModel& grid, double s_mva) { return s_mva / grid.base_mva; }
double impedance_base_ohm(const GridModel& grid) {
  return grid.base_kv * grid.base_kv / grid.base_mva;
}

namespace {

template <typename T>
T required(const nlohmann::json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw InvalidInput(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InvalidInput(where + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace

GridModel parse_case(const std::string& json_text, const std::string& source_name) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidInput(source_name + ": not valid JSON (" + e.what() + ")");
  }
  const auto n = required<long long>(j, "n_buses", source_name);
  if (n <= 0) throw InvalidInput(source_name + ": field 'n_buses' must be positive");
  const auto slack = required<long long>(j, "slack_index", source_name);
  if (slack < 0 || slack >= n) throw InvalidInput(source_name + ": field 'slack_index' out of range");
  const auto base_kv = required<double>(j, "base_kv", source_name);
  if (!(base_kv > 0.0)) throw InvalidInput(source_name + ": field 'base_kv' must be positive");
  const auto base_mva = required<double>(j, "base_mva", source_name);
  if (!(base_mva > 0.0)) throw InvalidInput(source_name + ": field 'base_mva' must be positive");
  if (!j.contains("branches") || !j.at("branches").is_array()) {
    throw InvalidInput(source_name + ": field 'branches' missing or not an array");
  }

  BranchList branches;
  std::size_t idx = 0;
  for (const auto& bj : j.at("branches")) {
    const std::string where = source_name + ": branches[" + std::to_string(idx++) + "]";
    const auto from = required<long long>(bj, "from", where);
    const auto to = required<long long>(bj, "to", where);
    if (from < 0 || from >= n) throw InvalidInput(where + ": field 'from' out of range");
    if (to < 0 || to >= n) throw InvalidInput(where + ": field 'to' out of range");
    if (from == to) throw InvalidInput(where + ": field 'to' equals 'from' (self-loop)");
    Branch br;
    br.from = static_cast<std::size_t>(from);
    br.to = static_cast<std::size_t>(to);
    br.series = {required<double>(bj, "g", where), required<double>(bj, "b", where)};
    const double shunt_b = bj.contains("shunt_b") ? required<double>(bj, "shunt_b", where) : 0.0;
    br.shunt_half = {0.0, shunt_b / 2.0};
    branches.push_back(br);
  }
  try {
    return make_grid(std::move(branches), static_cast<std::size_t>(n),
                     static_cast<std::size_t>(slack), base_kv, base_mva);
  } catch (const InvalidInput& e) {
    throw InvalidInput(source_name + ": field 'branches': " + e.what());
  }
}

std::string case_to_json(const GridModel& grid) {
  nlohmann::json branches = nlohmann::json::array();
  for (const auto& br : grid.branches) {
    if (br.shunt_half.real() != 0.0) throw InvalidInput("case_to_json: shunt conductance unsupported");
    branches.push_back({{"from", br.from},
                        {"to", br.to},
                        {"g", br.series.real()},
                        {"b", br.series.imag()},
                        {"shunt_b", 2.0 * br.shunt_half.imag()}});
  }
  const nlohmann::json j = {{"n_buses", grid.n_buses},   {"slack_index", grid.slack_index},
                            {"base_kv", grid.base_kv},   {"base_mva", grid.base_mva},
                            {"branches", branches}};
  return j.dump();
}

GridModel load_case(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open case file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_case(ss.str(), path.string());
}

}  // namespace dsse
