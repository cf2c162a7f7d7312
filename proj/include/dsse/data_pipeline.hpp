#pragma once
// Synthetic load/PV profiles -> per-bus demand -> smoothed, downsampled
// injections -> per-step power flow -> windowed SFSE sequences.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dsse/grid.hpp"
#include "dsse/power_flow.hpp"

namespace dsse {

// ---------------------------------------------------------------------------
// Source profiles

struct LoadProfileConfig {
  int n_households = 8;
  std::size_t duration_steps = 604800;  // one week at 1 s
  double source_resolution_s = 1.0;
  std::size_t daily_period_steps = 86400;
  double load_base = 0.04;            // mean household demand, p.u.
  double load_daily_amplitude = 0.03; // swing of the diurnal shape, p.u.
  double walk_amplitude = 0.012;      // bound of the random walk, p.u.
  double noise_level = 0.03;          // white-noise std at source resolution, p.u.
  double pv_peak = 0.06;              // clear-sky PV output at noon, p.u.
  double pv_cloud_depth = 0.4;        // cloud attenuation range, fraction of clear sky
  std::uint64_t seed = 1;
};

struct SourceProfiles {
  std::vector<std::vector<double>> household;  // active power demand per household
  std::vector<double> pv;                      // PV active output, >= 0
};

/// Household demand = positive diurnal base + bounded random walk + white
/// noise; PV = clear-sky bell (zero at night) times a bounded cloud factor.
SourceProfiles synth_profiles(const LoadProfileConfig& config);

/// P + jQ with Q = P tan(acos(pf)). pf must lie in (0, 1].
ComplexVec reactive_from_pf(std::span<const double> p, double power_factor);

/// Trailing moving average; the first window-1 outputs average the prefix.
std::vector<double> smooth(std::span<const double> series, std::size_t window);
/// Keeps indices factor-1, 2*factor-1, ...
std::vector<double> downsample(std::span<const double> series, std::size_t factor);

// ---------------------------------------------------------------------------
// Bus assignment

struct BusAssignment {
  std::vector<int> load_household;  // per bus: household index or -1
  std::vector<bool> pv_bus;         // per bus

  std::size_t n_load_buses() const;
  std::size_t n_pv_buses() const;
};

/// Shuffles the non-slack buses, hands households to the first n_load buses
/// in circular order, then draws n_pv PV buses independently (overlap allowed).
BusAssignment make_assignment(const GridModel& grid, std::size_t n_load_buses,
                              std::size_t n_pv_buses, std::size_t n_households,
                              std::uint64_t seed);

/// Per-bus complex demand series (load positive, generation negative):
/// household phasor on load buses, minus the PV phasor on PV buses, summed
/// where both apply, zero elsewhere. Throws if the slack bus is assigned.
std::vector<ComplexVec> assign_buses(const std::vector<ComplexVec>& household_phasors,
                                     const ComplexVec& pv_phasor, const BusAssignment& assignment,
                                     const GridModel& grid);

// ---------------------------------------------------------------------------
// Timeline of solved power-flow frames

/// Step-major storage of s(t) and v(t) for every bus. s is the net injection
/// (negative demand), so every frame satisfies s = diag(v) conj(Y v).
class Timeline {
 public:
  Timeline() = default;
  Timeline(std::size_t n_buses, std::size_t n_steps);

  std::size_t n_buses() const { return n_buses_; }
  std::size_t n_steps() const { return n_steps_; }

  std::span<const Complex> s(std::size_t t) const { return {s_.data() + t * n_buses_, n_buses_}; }
  std::span<const Complex> v(std::size_t t) const { return {v_.data() + t * n_buses_, n_buses_}; }
  std::span<Complex> s(std::size_t t) { return {s_.data() + t * n_buses_, n_buses_}; }
  std::span<Complex> v(std::size_t t) { return {v_.data() + t * n_buses_, n_buses_}; }

  ComplexVec s_vec(std::size_t t) const { return {s(t).begin(), s(t).end()}; }
  ComplexVec v_vec(std::size_t t) const { return {v(t).begin(), v(t).end()}; }

  /// 4N reals: interleaved s then interleaved v.
  std::vector<double> features(std::size_t t) const;

 private:
  std::size_t n_buses_ = 0;
  std::size_t n_steps_ = 0;
  std::vector<Complex> s_;
  std::vector<Complex> v_;
};

struct GenerationConfig {
  LoadProfileConfig profiles;
  double power_factor_min = 0.96;
  double power_factor_max = 0.98;
  std::size_t n_load_buses = 25;
  std::size_t n_pv_buses = 18;
  std::size_t smoothing_window = 60;
  std::size_t downsample_factor = 60;
  PowerFlowOptions power_flow;
  bool warm_start = false;
};

struct GenerationReport {
  BusAssignment assignment;
  std::vector<double> power_factors;
  int max_pf_iterations = 0;
  double max_pf_mismatch = 0.0;
};

/// Runs the whole preparation chain and solves one power flow per step.
/// Smoothing and downsampling are linear, so they are applied to the source
/// profiles before assignment; the result equals assign-then-filter.
Timeline generate_timeline(const GridModel& grid, const GenerationConfig& config,
                           GenerationReport* report = nullptr);

/// Max over steps of ||s - diag(v) conj(Y v)||_inf.
double timeline_max_residual(const GridModel& grid, const Timeline& timeline);

// ---------------------------------------------------------------------------
// Standardization

class Standardizer {
 public:
  static constexpr double kStdFloor = 1e-9;

  /// Population mean/std per column of a row-major n_rows x n_features block.
  void fit(std::span<const double> rows, std::size_t n_features);
  bool fitted() const { return !mean_.empty(); }
  std::size_t n_features() const { return mean_.size(); }

  void apply(std::span<double> x, std::size_t offset = 0) const;
  void invert(std::span<double> x, std::size_t offset = 0) const;

  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& stddev() const { return std_; }

  nlohmann::json to_json() const;
  static Standardizer from_json(const nlohmann::json& j);
  static Standardizer from_moments(std::vector<double> mean, std::vector<double> stddev);

 private:
  void check_range(std::size_t n, std::size_t offset) const;
  std::vector<double> mean_;
  std::vector<double> std_;
};

// ---------------------------------------------------------------------------
// SFSE sequences and datasets

/// One sample: T-1 fully observable frames, the partial frame at the target
/// step, and the ground truth at that step.
struct SfseSequence {
  std::size_t target_step = 0;
  std::vector<ComplexVec> history_s;  // oldest first
  std::vector<ComplexVec> history_v;
  ComplexVec partial_s;  // the n_s observed powers, bus order
  ComplexVec partial_v;  // the n_v observed voltages, bus order
  ComplexVec true_s;     // all N (used by the physics loss only)
  ComplexVec true_v;
};

struct SfseDataset {
  std::shared_ptr<const Timeline> timeline;
  std::size_t T = 0;
  ObservabilityMask mask;
  Standardizer scaler;  // 4N features, fitted on the training time range
  std::vector<std::size_t> train_targets;
  std::vector<std::size_t> test_targets;
  std::size_t split_step = 0;  // train windows end before, test windows start at or after
  std::uint64_t seed = 0;

  SfseSequence sequence(std::size_t target_step) const;
};

/// Draws n_sequences window end points with replacement: round(split_fraction
/// * n) inside the first train_time_fraction of the timeline, the rest inside
/// the remainder. Windows never straddle the split.
SfseDataset build_dataset(std::shared_ptr<const Timeline> timeline, std::size_t T,
                          const ObservabilityMask& mask, std::size_t n_sequences,
                          double split_fraction, std::uint64_t seed,
                          double train_time_fraction = 6.0 / 7.0);

// ---------------------------------------------------------------------------
// On-disk dataset: meta.json + timeline.bin (little-endian float64, step-major
// rows of 4N features).

void save_timeline(const std::filesystem::path& dir, const Timeline& timeline,
                   const nlohmann::json& meta);
std::shared_ptr<Timeline> load_timeline(const std::filesystem::path& dir, nlohmann::json* meta);

/// SHA-256 (hex) of the files in a dataset directory, in name order.
std::string hash_directory(const std::filesystem::path& dir);
std::string sha256_hex(std::span<const unsigned char> bytes);

}  // namespace dsse
