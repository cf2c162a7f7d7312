#pragma once
// Polar-space error metrics, the persistence baseline, scenario runs with
// repetition statistics, and the CSV/SVG comparison report.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "dsse/data_pipeline.hpp"
#include "dsse/grid.hpp"
#include "dsse/nn/estimator.hpp"
#include "dsse/wls_estimator.hpp"

namespace dsse {

enum class EstimatorKind { dnn, wls, persistence };

std::string_view estimator_name(EstimatorKind kind);
/// Accepts "dnn", "wls", "persistence"; throws InvalidInput otherwise.
EstimatorKind parse_estimator(std::string_view name);

/// v_hat(t) = v(t-1).
ComplexVec persistence_estimate(const SfseSequence& sequence);

struct PolarMse {
  double mag = 0.0;  // p.u.^2
  double ang = 0.0;  // rad^2
  std::size_t mag_terms = 0;
  std::size_t ang_terms = 0;  // buses with zero true magnitude are left out
};

/// Wraps into (-pi, pi].
double wrap_angle(double a);

/// Mean squared magnitude and wrapped-angle errors over buses.
PolarMse polar_mse(const ComplexVec& estimate, const ComplexVec& truth);

/// Sums of squared errors, for pooling over many frames.
struct PolarSums {
  double mag = 0.0;
  double ang = 0.0;
  std::size_t mag_terms = 0;
  std::size_t ang_terms = 0;

  void add(const ComplexVec& estimate, const ComplexVec& truth);
  PolarMse mean() const;
};

struct ScenarioSpec {
  std::size_t T = 5;
  std::size_t n_s = 0;
  std::size_t n_v = 0;
  double lambda = 0.0;  // used by dnn only
  EstimatorKind estimator = EstimatorKind::persistence;
  std::size_t repetitions = 1;
  std::uint64_t seed = 0;  // repetition r uses seed + r

  /// e.g. "T5_ns28_nv0_dnn_lam2"
  std::string id() const;
};

struct ReportRow {
  std::string scenario_id;
  EstimatorKind estimator = EstimatorKind::persistence;
  std::size_t T = 0;
  std::size_t n_s = 0;
  std::size_t n_v = 0;
  double lambda = 0.0;
  int observability_pct = 0;  // rounded
  double mse_mag_mean = 0.0;
  double mse_mag_std = 0.0;
  double mse_ang_mean = 0.0;
  double mse_ang_std = 0.0;
  std::size_t repetitions = 0;  // successful repetitions
  double runtime_s = 0.0;
};

struct EvaluationReport {
  std::vector<ReportRow> rows;

  static const std::vector<std::string>& columns();
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
  static EvaluationReport parse_csv(const std::string& text, const std::string& source = "<memory>");
  static EvaluationReport read_csv(const std::filesystem::path& path);
};

using Estimator = std::function<ComplexVec(const SfseSequence&)>;
/// Prepares the estimator of one repetition (train, load or configure).
using EstimatorFactory = std::function<Estimator(std::size_t repetition, std::uint64_t seed)>;

struct RepetitionOutcome {
  bool ok = false;
  std::string error;
  PolarMse mse;
};

struct PredictionRecord {
  std::size_t repetition = 0;
  std::size_t target_step = 0;
  ComplexVec estimate;
  ComplexVec truth;
};

struct ScenarioResult {
  ReportRow row;
  std::vector<RepetitionOutcome> repetitions;
  std::vector<PredictionRecord> predictions;  // filled when requested
};

/// Runs every repetition over the full test split. A failing repetition is
/// recorded and the others proceed; the row aggregates the successful ones
/// (population std). Repetitions run on up to `jobs` threads.
ScenarioResult run_scenario(const ScenarioSpec& spec, const SfseDataset& dataset,
                            const EstimatorFactory& factory, bool keep_predictions = false,
                            std::size_t jobs = 1);

/// Factory that trains a fresh model per repetition (dnn, seed = spec seed +
/// repetition), or wraps the WLS / persistence baselines.
EstimatorFactory default_factory(const ScenarioSpec& spec, const SfseDataset& dataset,
                                 const GridModel& grid, const nn::TrainConfig& train_config);

/// Aligned comparison over observability: one series per estimator (and
/// lambda for dnn, T when several are present). Writes <stem>.csv,
/// <stem>_magnitude.svg and <stem>_angle.svg. Throws InvalidInput on fewer
/// than two series or series that do not share the same observability axis.
void compare_report(const std::vector<ReportRow>& rows, const std::filesystem::path& out_dir,
                    const std::string& stem = "compare");

/// CSV of persisted predictions: repetition, target_step, bus, est_re,
/// est_im, true_re, true_im.
void write_predictions(const std::filesystem::path& path,
                       const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);

}  // namespace dsse
