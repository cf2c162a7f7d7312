#pragma once
// Neural SFSE estimator: an LSTM stack summarises the fully observable
// history, a small tanh network summarises the partial frame, and a
// regressor emits a base estimate that two linear heads scale and shift.
// Trained on squared error in standardized space plus lambda times the
// power-flow residual of the de-standardized estimate.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dsse/data_pipeline.hpp"
#include "dsse/error.hpp"
#include "dsse/grid.hpp"
#include "dsse/nn/layers.hpp"

namespace dsse::nn {

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

struct DnnArchitecture {
  std::size_t n_buses = 0;
  std::size_t n_s = 0;
  std::size_t n_v = 0;

  static DnnArchitecture make(std::size_t n_buses, std::size_t n_s, std::size_t n_v);

  std::size_t frame_dim() const { return 4 * n_buses; }
  std::size_t lstm1_hidden() const { return 2 * n_buses; }
  std::size_t fo_feature_dim() const { return ceil_div(n_buses, 3); }
  std::size_t po_input_dim() const { return 2 * (n_s + n_v); }
  std::size_t po_feature_dim() const { return ceil_div(n_buses, 6); }
  std::size_t joint_dim() const { return fo_feature_dim() + po_feature_dim(); }
  std::size_t regressor_hidden() const { return ceil_div(n_buses, 2); }
  std::size_t output_dim() const { return 2 * n_buses; }

  bool operator==(const DnnArchitecture&) const = default;
};

class DnnModel {
 public:
  explicit DnnModel(const DnnArchitecture& arch);

  const DnnArchitecture& arch() const { return arch_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t n_params() const { return layout_.total(); }

  /// Uniform +-1/sqrt(fan_in) weights, zero biases, forget-gate bias 1 and
  /// scale-head bias 1 (so the scale starts near identity).
  std::vector<double> init_params(std::uint64_t seed) const;

  LstmSpec lstm1;
  LstmSpec lstm2;
  std::vector<DenseSpec> po_fc;
  std::vector<DenseSpec> base_fc;
  std::vector<DenseSpec> scale_head;
  std::vector<DenseSpec> shift_head;

 private:
  DnnArchitecture arch_;
  ParamLayout layout_;
};

/// Standardized network input for one sequence.
struct SampleInput {
  std::vector<std::vector<double>> fo_frames;  // (T-1) x 4N
  std::vector<double> po;                      // 2(n_s + n_v)
};

struct ForwardCache {
  LstmCache lstm1;
  LstmCache lstm2;
  DenseCache po;
  DenseCache base;
  DenseCache scale;
  DenseCache shift;
  std::vector<double> h;
  std::vector<double> v_tilde;
  std::vector<double> w;
  std::vector<double> b;
};

/// h = concat(h_fo, h_po).
std::vector<double> feature_extract(const DnnModel& model, std::span<const double> params,
                                    const SampleInput& input, ForwardCache* cache = nullptr);

/// v_hat = w * v_tilde + b (elementwise).
std::vector<double> regress(const DnnModel& model, std::span<const double> params,
                            std::span<const double> h, ForwardCache* cache = nullptr);

/// Standardized 2N estimate.
std::vector<double> forward(const DnnModel& model, std::span<const double> params,
                            const SampleInput& input, ForwardCache* cache = nullptr);

/// Accumulates dL/dparams into grad given dL/dv_hat.
void backward(const DnnModel& model, std::span<const double> params, const ForwardCache& cache,
              std::span<const double> d_v_hat, std::span<double> grad);

struct LossTerms {
  double total = 0.0;
  double data = 0.0;     // ||v_std - v_hat_std||^2
  double physics = 0.0;  // ||s - diag(v_hat) conj(Y v_hat)||^2, physical units
};

/// Loss with the target already standardized. `v_mean`/`v_std` are the 2N
/// voltage moments of the scaler. When d_v_hat is non-empty it receives
/// dL/dv_hat_std.
LossTerms pi_loss_std(const GridModel& grid, const ComplexVec& s_true,
                      std::span<const double> v_true_std, std::span<const double> v_hat_std,
                      double lambda, std::span<const double> v_mean,
                      std::span<const double> v_std, std::span<double> d_v_hat = {});

/// Same loss from physical ground truth and a full 4N scaler.
LossTerms pi_loss(const GridModel& grid, const Standardizer& scaler, const ComplexVec& s_true,
                  const ComplexVec& v_true, std::span<const double> v_hat_std, double lambda,
                  std::span<double> d_v_hat = {});

/// One training example in network form.
struct TrainingExample {
  SampleInput input;
  std::vector<double> v_true_std;
  ComplexVec s_true;
};

struct BatchGradient {
  LossTerms mean_loss;
  std::vector<double> grad;  // mean over the batch
};

/// Mean loss and gradient over a batch. Throws NumericalError if the loss is
/// not finite.
BatchGradient gradients(const DnnModel& model, std::span<const double> params,
                        std::span<const TrainingExample> batch, const GridModel& grid,
                        double lambda, std::span<const double> v_mean,
                        std::span<const double> v_std);

struct TrainConfig {
  double lambda = 0.0;
  std::size_t batch_size = 50;
  std::size_t epochs = 300;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double validation_fraction = 0.1;
  std::size_t patience = 30;  // epochs without validation improvement; 0 disables
  std::size_t max_steps = 0;  // optimizer steps cap; 0 = unlimited
  std::uint64_t seed = 0;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// Bias-corrected Adam update in place.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads,
               const TrainConfig& config);

struct TrainedModel {
  DnnArchitecture arch;
  std::vector<double> params;
  Standardizer scaler;
  GridModel grid;
  std::size_t T = 0;
  TrainConfig config;
  std::vector<double> training_curve;    // mean train loss per epoch
  std::vector<double> validation_curve;  // empty when no validation slice
  std::size_t best_epoch = 0;
  std::size_t optimizer_steps = 0;
};

/// Raised when the training loss stops being finite.
class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, std::size_t epoch)
      : NumericalError(what), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

/// Builds the standardized example for a target step of the dataset timeline.
TrainingExample make_example(const SfseDataset& dataset, std::span<const double> std_rows,
                             std::size_t target_step);
/// Row-major standardized features of every step of the dataset timeline.
std::vector<double> standardized_rows(const SfseDataset& dataset);

TrainedModel train(const SfseDataset& dataset, const GridModel& grid, const TrainConfig& config);

/// Standardized network input for an arbitrary sequence.
SampleInput prepare_input(const TrainedModel& model, const SfseSequence& sequence);

/// Physical voltage phasors at the target step.
ComplexVec predict(const TrainedModel& model, const SfseSequence& sequence);

/// Versioned JSON checkpoint (format tag "dsse-checkpoint/1").
void save_checkpoint(const std::filesystem::path& path, const TrainedModel& model);
TrainedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace dsse::nn
