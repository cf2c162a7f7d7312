#pragma once
// Dense and LSTM layers over a flat parameter vector, with explicit caches
// for the reverse pass. Parameters and gradients share one layout so the
// optimizer and checkpointing see a single contiguous buffer.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dsse::nn {

/// Location of one tensor inside the flat parameter vector (row-major).
struct TensorRef {
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 1;
  std::size_t size() const { return rows * cols; }

  std::span<const double> in(std::span<const double> flat) const {
    return flat.subspan(offset, size());
  }
  std::span<double> in(std::span<double> flat) const { return flat.subspan(offset, size()); }
};

enum class TensorKind { weight, recurrent_weight, bias, forget_bias };

struct NamedTensor {
  std::string name;
  TensorRef ref;
  TensorKind kind;
  std::size_t fan_in;
};

class ParamLayout {
 public:
  TensorRef add(std::string name, std::size_t rows, std::size_t cols, TensorKind kind,
                std::size_t fan_in);
  std::size_t total() const { return total_; }
  const std::vector<NamedTensor>& tensors() const { return tensors_; }
  const NamedTensor& find(const std::string& name) const;

 private:
  std::vector<NamedTensor> tensors_;
  std::size_t total_ = 0;
};

enum class Activation { tanh, linear };

struct DenseSpec {
  TensorRef w;  // out x in
  TensorRef b;  // out
  std::size_t in = 0;
  std::size_t out = 0;
  Activation act = Activation::tanh;
};

/// Activations of a dense stack; acts[0] is the input, acts[k+1] the output of layer k.
struct DenseCache {
  std::vector<std::vector<double>> acts;
};

/// y = act(W x + b) applied layer by layer.
std::vector<double> fc_forward(std::span<const double> params, const std::vector<DenseSpec>& stack,
                               std::span<const double> x, DenseCache* cache = nullptr);

/// Accumulates parameter gradients into `grad` and returns dL/dx.
std::vector<double> fc_backward(std::span<const double> params, const std::vector<DenseSpec>& stack,
                                const DenseCache& cache, std::span<const double> dy,
                                std::span<double> grad, bool need_input_grad = true);

/// Gate order in the stacked matrices: input, forget, cell candidate, output.
struct LstmSpec {
  TensorRef w_x;  // 4H x in
  TensorRef w_h;  // 4H x H
  TensorRef b;    // 4H
  std::size_t in = 0;
  std::size_t hidden = 0;
};

struct LstmCache {
  std::vector<std::vector<double>> x;      // inputs per step
  std::vector<std::vector<double>> gates;  // activated i, f, g, o per step (4H)
  std::vector<std::vector<double>> c;      // cell state per step
  std::vector<std::vector<double>> tanh_c;
  std::vector<std::vector<double>> h;      // hidden state per step
};

/// Runs the recurrence from zero state; returns the hidden state per step.
std::vector<std::vector<double>> lstm_forward(std::span<const double> params, const LstmSpec& spec,
                                              const std::vector<std::vector<double>>& sequence,
                                              LstmCache* cache = nullptr);

/// Backpropagation through time. dh[t] is the external gradient on h_t (may
/// be empty vectors for steps without one). Returns dL/dx_t per step when
/// need_input_grad, otherwise an empty vector.
std::vector<std::vector<double>> lstm_backward(std::span<const double> params, const LstmSpec& spec,
                                               const LstmCache& cache,
                                               const std::vector<std::vector<double>>& dh,
                                               std::span<double> grad, bool need_input_grad);

}  // namespace dsse::nn
