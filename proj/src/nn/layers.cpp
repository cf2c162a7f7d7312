#include "dsse/nn/layers.hpp"

#include <cmath>

#include "dsse/error.hpp"
#include "dsse/kernels.hpp"

namespace dsse::nn {

namespace k = dsse::kernels;

TensorRef ParamLayout::add(std::string name, std::size_t rows, std::size_t cols, TensorKind kind,
                           std::size_t fan_in) {
  TensorRef ref{total_, rows, cols};
  total_ += ref.size();
  tensors_.push_back({std::move(name), ref, kind, fan_in});
  return ref;
}

const NamedTensor& ParamLayout::find(const std::string& name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw InvalidInput("no tensor named " + name);
}

namespace {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

std::vector<double> fc_forward(std::span<const double> params, const std::vector<DenseSpec>& stack,
                               std::span<const double> x, DenseCache* cache) {
  std::vector<double> cur(x.begin(), x.end());
  if (cache) {
    cache->acts.clear();
    cache->acts.push_back(cur);
  }
  for (const auto& layer : stack) {
    if (cur.size() != layer.in) throw InvalidInput("fc_forward: input dimension mismatch");
    const auto b = layer.b.in(params);
    std::vector<double> next(b.begin(), b.end());
    k::gemv(layer.w.in(params), layer.out, layer.in, cur, next);
    if (layer.act == Activation::tanh) {
      for (auto& z : next) z = std::tanh(z);
    }
    cur = std::move(next);
    if (cache) cache->acts.push_back(cur);
  }
  return cur;
}

std::vector<double> fc_backward(std::span<const double> params, const std::vector<DenseSpec>& stack,
                                const DenseCache& cache, std::span<const double> dy,
                                std::span<double> grad, bool need_input_grad) {
  std::vector<double> delta(dy.begin(), dy.end());
  for (std::size_t li = stack.size(); li-- > 0;) {
    const auto& layer = stack[li];
    const auto& out = cache.acts[li + 1];
    if (layer.act == Activation::tanh) {
      for (std::size_t i = 0; i < delta.size(); ++i) delta[i] *= 1.0 - out[i] * out[i];
    }
    const auto& in = cache.acts[li];
    k::ger(delta, in, layer.w.in(grad));
    k::axpy(1.0, delta, layer.b.in(grad));
    if (li == 0 && !need_input_grad) return {};
    std::vector<double> prev(layer.in, 0.0);
    k::gemv_t(layer.w.in(params), layer.out, layer.in, delta, prev);
    delta = std::move(prev);
  }
  return delta;
}

std::vector<std::vector<double>> lstm_forward(std::span<const double> params, const LstmSpec& spec,
                                              const std::vector<std::vector<double>>& sequence,
                                              LstmCache* cache) {
  if (sequence.empty()) throw InvalidInput("lstm_forward: empty sequence");
  const std::size_t H = spec.hidden;
  const auto wx = spec.w_x.in(params);
  const auto wh = spec.w_h.in(params);
  const auto bias = spec.b.in(params);
  std::vector<double> h(H, 0.0), c(H, 0.0), z(4 * H);
  std::vector<std::vector<double>> hs;
  hs.reserve(sequence.size());
  if (cache) *cache = LstmCache{};

  for (const auto& x : sequence) {
    if (x.size() != spec.in) throw InvalidInput("lstm_forward: input dimension mismatch");
    std::copy(bias.begin(), bias.end(), z.begin());
    k::gemv(wx, 4 * H, spec.in, x, z);
    k::gemv(wh, 4 * H, H, h, z);
    std::vector<double> tc(H);
    for (std::size_t j = 0; j < H; ++j) {
      z[j] = sigmoid(z[j]);                   // i
      z[H + j] = sigmoid(z[H + j]);           // f
      z[2 * H + j] = std::tanh(z[2 * H + j]); // g
      z[3 * H + j] = sigmoid(z[3 * H + j]);   // o
      c[j] = z[H + j] * c[j] + z[j] * z[2 * H + j];
      tc[j] = std::tanh(c[j]);
      h[j] = z[3 * H + j] * tc[j];
    }
    if (cache) {
      cache->x.push_back(x);
      cache->gates.push_back(z);
      cache->c.push_back(c);
      cache->tanh_c.push_back(std::move(tc));
      cache->h.push_back(h);
    }
    hs.push_back(h);
  }
  return hs;
}

std::vector<std::vector<double>> lstm_backward(std::span<const double> params, const LstmSpec& spec,
                                               const LstmCache& cache,
                                               const std::vector<std::vector<double>>& dh,
                                               std::span<double> grad, bool need_input_grad) {
  const std::size_t H = spec.hidden;
  const std::size_t steps = cache.h.size();
  const auto wx = spec.w_x.in(params);
  const auto wh = spec.w_h.in(params);
  auto gwx = spec.w_x.in(grad);
  auto gwh = spec.w_h.in(grad);
  auto gb = spec.b.in(grad);

  std::vector<std::vector<double>> dx;
  if (need_input_grad) dx.assign(steps, std::vector<double>(spec.in, 0.0));
  std::vector<double> dh_next(H, 0.0), dc_next(H, 0.0), dz(4 * H), zeros(H, 0.0);

  for (std::size_t t = steps; t-- > 0;) {
    const auto& gate = cache.gates[t];
    const auto& tc = cache.tanh_c[t];
    const auto& c_prev = t > 0 ? cache.c[t - 1] : zeros;
    const auto& h_prev = t > 0 ? cache.h[t - 1] : zeros;
    for (std::size_t j = 0; j < H; ++j) {
      double d_h = dh_next[j];
      if (t < dh.size() && !dh[t].empty()) d_h += dh[t][j];
      const double i = gate[j], f = gate[H + j], g = gate[2 * H + j], o = gate[3 * H + j];
      const double d_o = d_h * tc[j];
      const double d_c = dc_next[j] + d_h * o * (1.0 - tc[j] * tc[j]);
      dz[j] = d_c * g * i * (1.0 - i);
      dz[H + j] = d_c * c_prev[j] * f * (1.0 - f);
      dz[2 * H + j] = d_c * i * (1.0 - g * g);
      dz[3 * H + j] = d_o * o * (1.0 - o);
      dc_next[j] = d_c * f;
    }
    k::ger(dz, cache.x[t], gwx);
    k::ger(dz, h_prev, gwh);
    k::axpy(1.0, dz, gb);
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    k::gemv_t(wh, 4 * H, H, dz, dh_next);
    if (need_input_grad) k::gemv_t(wx, 4 * H, spec.in, dz, dx[t]);
  }
  return dx;
}

}  // namespace dsse::nn
