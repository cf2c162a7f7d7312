#pragma once
// Command layer behind the `dsse` executable. Kept in the library so tests can
// drive the commands in-process.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dsse/data_pipeline.hpp"
#include "dsse/evaluation.hpp"
#include "dsse/nn/estimator.hpp"

namespace dsse::cli {

enum ExitCode { kOk = 0, kPartialFailure = 1, kInvalidInput = 2 };

struct RunConfig {
  std::filesystem::path case_path = "data/ieee37.json";
  std::filesystem::path dataset_dir = "runs/dataset";
  std::filesystem::path output_dir = "runs/out";
  std::uint64_t seed = 1;
  std::size_t jobs = 1;

  GenerationConfig generation;
  std::size_t n_sequences = 9000;
  double split_fraction = 0.9;
  double train_time_fraction = 6.0 / 7.0;

  std::vector<std::size_t> T_values{5, 50};
  std::vector<std::size_t> n_s_values{35, 28, 18, 12, 6};
  std::vector<std::size_t> n_v_values{0};
  std::vector<double> lambdas{0.0, 1.0, 2.0, 20.0};
  std::vector<EstimatorKind> estimators{EstimatorKind::dnn, EstimatorKind::wls,
                                        EstimatorKind::persistence};
  std::size_t repetitions = 30;

  nn::TrainConfig train;
  std::vector<std::filesystem::path> reports;  // compare inputs; default <output_dir>/report.csv
  bool dump_predictions = false;
  bool resume = false;
};

/// Desk-scale overrides: 2222 sequences (2000 train at a 0.9 split) and 5 repetitions.
void apply_desk_scale(RunConfig& config);

/// Overlays the fields present in `j` onto `config`. Unknown keys are rejected.
void merge_config(RunConfig& config, const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& config);
/// Throws InvalidInput on empty grids or out-of-range values.
void validate(const RunConfig& config);

std::string checkpoint_stem(std::size_t T, std::size_t n_s, std::size_t n_v, double lambda,
                            std::size_t repetition);

int cmd_generate(const RunConfig& config, std::ostream& out);
int cmd_train(const RunConfig& config, std::ostream& out);
int cmd_evaluate(const RunConfig& config, std::ostream& out);
int cmd_compare(const RunConfig& config, std::ostream& out);

/// Parses argv (argv[0] is the program name) and runs the subcommand.
/// Returns the process exit code; diagnostics go to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dsse::cli
