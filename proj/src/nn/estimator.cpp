#include "dsse/nn/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dsse/error.hpp"
#include "dsse/kernels.hpp"

namespace dsse::nn {

namespace k = dsse::kernels;

DnnArchitecture DnnArchitecture::make(std::size_t n_buses, std::size_t n_s, std::size_t n_v) {
  if (n_buses == 0) throw InvalidInput("architecture: n_buses must be positive");
  if (n_s > n_buses || n_v > n_buses) throw InvalidInput("architecture: n_s/n_v exceed n_buses");
  return {n_buses, n_s, n_v};
}

namespace {

std::vector<DenseSpec> dense_stack(ParamLayout& layout, const std::string& prefix,
                                   const std::vector<std::size_t>& dims, Activation last) {
  std::vector<DenseSpec> stack;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseSpec d;
    d.in = dims[i];
    d.out = dims[i + 1];
    const std::string name = prefix + "." + std::to_string(i);
    d.w = layout.add(name + ".w", d.out, d.in, TensorKind::weight, d.in);
    d.b = layout.add(name + ".b", d.out, 1, TensorKind::bias, d.in);
    d.act = i + 2 == dims.size() ? last : Activation::tanh;
    stack.push_back(d);
  }
  return stack;
}

LstmSpec lstm_spec(ParamLayout& layout, const std::string& prefix, std::size_t in,
                   std::size_t hidden) {
  LstmSpec s;
  s.in = in;
  s.hidden = hidden;
  s.w_x = layout.add(prefix + ".w_x", 4 * hidden, in, TensorKind::weight, in);
  s.w_h = layout.add(prefix + ".w_h", 4 * hidden, hidden, TensorKind::recurrent_weight, hidden);
  s.b = layout.add(prefix + ".b", 4 * hidden, 1, TensorKind::forget_bias, in);
  return s;
}

}  // namespace

DnnModel::DnnModel(const DnnArchitecture& arch) : arch_(arch) {
  const std::size_t n2 = arch.output_dim();
  const std::size_t p = arch.po_input_dim();
  const std::size_t j = arch.joint_dim();
  const std::size_t r = arch.regressor_hidden();
  lstm1 = lstm_spec(layout_, "lstm1", arch.frame_dim(), arch.lstm1_hidden());
  lstm2 = lstm_spec(layout_, "lstm2", arch.lstm1_hidden(), arch.fo_feature_dim());
  po_fc = dense_stack(layout_, "po_fc", {p, p, arch.po_feature_dim()}, Activation::tanh);
  base_fc = dense_stack(layout_, "base_fc", {j, r, r, r, r, n2}, Activation::linear);
  scale_head = dense_stack(layout_, "scale_fc", {j, n2}, Activation::linear);
  shift_head = dense_stack(layout_, "shift_fc", {j, n2}, Activation::linear);
}

std::vector<double> DnnModel::init_params(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  std::vector<double> params(n_params(), 0.0);
  std::span<double> flat(params);
  for (const auto& t : layout_.tensors()) {
    auto view = t.ref.in(flat);
    switch (t.kind) {
      case TensorKind::weight:
      case TensorKind::recurrent_weight: {
        const double bound = t.ref.cols > 0 ? 1.0 / std::sqrt(static_cast<double>(t.ref.cols)) : 0.0;
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& x : view) x = u(rng);
        break;
      }
      case TensorKind::forget_bias: {
        const std::size_t H = t.ref.rows / 4;
        std::fill(view.begin(), view.end(), 0.0);
        std::fill(view.begin() + static_cast<std::ptrdiff_t>(H),
                  view.begin() + static_cast<std::ptrdiff_t>(2 * H), 1.0);
        break;
      }
      case TensorKind::bias:
        std::fill(view.begin(), view.end(), 0.0);
        break;
    }
  }
  auto scale_bias = scale_head.back().b.in(flat);
  std::fill(scale_bias.begin(), scale_bias.end(), 1.0);
  return params;
}

std::vector<double> feature_extract(const DnnModel& model, std::span<const double> params,
                                    const SampleInput& input, ForwardCache* cache) {
  const auto& arch = model.arch();
  if (input.fo_frames.empty()) throw InvalidInput("feature_extract: no history frames");
  for (const auto& f : input.fo_frames) {
    if (f.size() != arch.frame_dim()) throw InvalidInput("feature_extract: frame size mismatch");
  }
  if (input.po.size() != arch.po_input_dim()) {
    throw InvalidInput("feature_extract: partial frame size mismatch");
  }
  const auto h1 = lstm_forward(params, model.lstm1, input.fo_frames, cache ? &cache->lstm1 : nullptr);
  const auto h2 = lstm_forward(params, model.lstm2, h1, cache ? &cache->lstm2 : nullptr);
  const auto h_po = fc_forward(params, model.po_fc, input.po, cache ? &cache->po : nullptr);
  std::vector<double> h = h2.back();
  h.insert(h.end(), h_po.begin(), h_po.end());
  if (cache) cache->h = h;
  return h;
}

std::vector<double> regress(const DnnModel& model, std::span<const double> params,
                            std::span<const double> h, ForwardCache* cache) {
  if (h.size() != model.arch().joint_dim()) throw InvalidInput("regress: feature size mismatch");
  auto v_tilde = fc_forward(params, model.base_fc, h, cache ? &cache->base : nullptr);
  auto w = fc_forward(params, model.scale_head, h, cache ? &cache->scale : nullptr);
  auto b = fc_forward(params, model.shift_head, h, cache ? &cache->shift : nullptr);
  std::vector<double> out(v_tilde.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = w[i] * v_tilde[i] + b[i];
  if (cache) {
    cache->v_tilde = std::move(v_tilde);
    cache->w = std::move(w);
    cache->b = std::move(b);
  }
  return out;
}

std::vector<double> forward(const DnnModel& model, std::span<const double> params,
                            const SampleInput& input, ForwardCache* cache) {
  if (params.size() != model.n_params()) throw InvalidInput("forward: parameter count mismatch");
  const auto h = feature_extract(model, params, input, cache);
  return regress(model, params, h, cache);
}

void backward(const DnnModel& model, std::span<const double> params, const ForwardCache& cache,
              std::span<const double> d_v_hat, std::span<double> grad) {
  const auto& arch = model.arch();
  const std::size_t n2 = arch.output_dim();
  std::vector<double> d_vt(n2), d_w(n2);
  for (std::size_t i = 0; i < n2; ++i) {
    d_vt[i] = cache.w[i] * d_v_hat[i];
    d_w[i] = cache.v_tilde[i] * d_v_hat[i];
  }
  auto dh = fc_backward(params, model.base_fc, cache.base, d_vt, grad);
  const auto dh_w = fc_backward(params, model.scale_head, cache.scale, d_w, grad);
  const auto dh_b = fc_backward(params, model.shift_head, cache.shift, d_v_hat, grad);
  k::axpy(1.0, dh_w, dh);
  k::axpy(1.0, dh_b, dh);

  const std::size_t n_fo = arch.fo_feature_dim();
  std::span<const double> dh_all(dh);
  fc_backward(params, model.po_fc, cache.po, dh_all.subspan(n_fo), grad, false);

  const std::size_t steps = cache.lstm2.h.size();
  std::vector<std::vector<double>> dh2(steps);
  dh2.back().assign(dh.begin(), dh.begin() + static_cast<std::ptrdiff_t>(n_fo));
  const auto dh1 = lstm_backward(params, model.lstm2, cache.lstm2, dh2, grad, true);
  lstm_backward(params, model.lstm1, cache.lstm1, dh1, grad, false);
}

LossTerms pi_loss_std(const GridModel& grid, const ComplexVec& s_true,
                      std::span<const double> v_true_std, std::span<const double> v_hat_std,
                      double lambda, std::span<const double> v_mean,
                      std::span<const double> v_std, std::span<double> d_v_hat) {
  if (!(lambda >= 0.0)) throw InvalidInput("pi_loss: lambda must be >= 0");
  const std::size_t n = grid.n_buses;
  if (v_true_std.size() != 2 * n || v_hat_std.size() != 2 * n || v_mean.size() != 2 * n ||
      v_std.size() != 2 * n || s_true.size() != n) {
    throw InvalidInput("pi_loss: dimension mismatch");
  }
  const bool want_grad = !d_v_hat.empty();
  if (want_grad && d_v_hat.size() != 2 * n) throw InvalidInput("pi_loss: gradient buffer size");

  LossTerms out;
  for (std::size_t i = 0; i < 2 * n; ++i) {
    const double d = v_hat_std[i] - v_true_std[i];
    out.data += d * d;
    if (want_grad) d_v_hat[i] = 2.0 * d;
  }

  const auto N = static_cast<Eigen::Index>(n);
  Eigen::VectorXcd v(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto r = static_cast<std::size_t>(2 * i);
    v(i) = {v_mean[r] + v_std[r] * v_hat_std[r], v_mean[r + 1] + v_std[r + 1] * v_hat_std[r + 1]};
  }
  const Eigen::VectorXcd u = grid.y * v;
  Eigen::VectorXcd res(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    res(i) = s_true[static_cast<std::size_t>(i)] - v(i) * std::conj(u(i));
    out.physics += std::norm(res(i));
  }
  out.total = out.data + lambda * out.physics;

  if (want_grad && lambda > 0.0) {
    // dL/dRe v + j dL/dIm v = 2 dL/dconj(v) = -2 (r .* u + conj(Y^T (r .* conj v)))
    Eigen::VectorXcd rv(N);
    for (Eigen::Index i = 0; i < N; ++i) rv(i) = res(i) * std::conj(v(i));
    const Eigen::VectorXcd back = grid.y.transpose() * rv;
    for (Eigen::Index i = 0; i < N; ++i) {
      const Complex g = -2.0 * (res(i) * u(i) + std::conj(back(i)));
      const auto r = static_cast<std::size_t>(2 * i);
      d_v_hat[r] += lambda * v_std[r] * g.real();
      d_v_hat[r + 1] += lambda * v_std[r + 1] * g.imag();
    }
  }
  return out;
}

LossTerms pi_loss(const GridModel& grid, const Standardizer& scaler, const ComplexVec& s_true,
                  const ComplexVec& v_true, std::span<const double> v_hat_std, double lambda,
                  std::span<double> d_v_hat) {
  const std::size_t n = grid.n_buses;
  if (scaler.n_features() != 4 * n) throw InvalidInput("pi_loss: scaler must cover 4N features");
  check_phasors(v_true, n, "pi_loss v_true");
  auto v_true_std = flatten(v_true);
  scaler.apply(v_true_std, 2 * n);
  std::span<const double> mean(scaler.mean());
  std::span<const double> sd(scaler.stddev());
  return pi_loss_std(grid, s_true, v_true_std, v_hat_std, lambda, mean.subspan(2 * n, 2 * n),
                     sd.subspan(2 * n, 2 * n), d_v_hat);
}

BatchGradient gradients(const DnnModel& model, std::span<const double> params,
                        std::span<const TrainingExample> batch, const GridModel& grid,
                        double lambda, std::span<const double> v_mean,
                        std::span<const double> v_std) {
  if (batch.empty()) throw InvalidInput("gradients: empty batch");
  BatchGradient out;
  out.grad.assign(model.n_params(), 0.0);
  ForwardCache cache;
  std::vector<double> d_v(model.arch().output_dim());
  for (const auto& ex : batch) {
    const auto v_hat = forward(model, params, ex.input, &cache);
    const auto loss =
        pi_loss_std(grid, ex.s_true, ex.v_true_std, v_hat, lambda, v_mean, v_std, d_v);
    if (!std::isfinite(loss.total)) {
      throw NumericalError("gradients: non-finite loss (data " + std::to_string(loss.data) +
                           ", physics " + std::to_string(loss.physics) + ")");
    }
    out.mean_loss.total += loss.total;
    out.mean_loss.data += loss.data;
    out.mean_loss.physics += loss.physics;
    backward(model, params, cache, d_v, out.grad);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (auto& g : out.grad) g *= inv;
  out.mean_loss.total *= inv;
  out.mean_loss.data *= inv;
  out.mean_loss.physics *= inv;
  return out;
}

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads,
               const TrainConfig& c) {
  if (state.m.size() != params.size() || grads.size() != params.size()) {
    throw InvalidInput("adam_step: state/parameter size mismatch");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
  }
}

std::vector<double> standardized_rows(const SfseDataset& ds) {
  const auto& tl = *ds.timeline;
  const std::size_t nf = 4 * tl.n_buses();
  std::vector<double> rows(tl.n_steps() * nf);
  for (std::size_t t = 0; t < tl.n_steps(); ++t) {
    const auto f = tl.features(t);
    std::span<double> row(rows.data() + t * nf, nf);
    std::copy(f.begin(), f.end(), row.begin());
    ds.scaler.apply(row);
  }
  return rows;
}

TrainingExample make_example(const SfseDataset& ds, std::span<const double> std_rows,
                             std::size_t t) {
  const std::size_t n = ds.timeline->n_buses();
  const std::size_t nf = 4 * n;
  if (t + 1 < ds.T || t >= ds.timeline->n_steps()) throw InvalidInput("make_example: bad target");
  TrainingExample ex;
  for (std::size_t tau = t + 1 - ds.T; tau < t; ++tau) {
    const auto row = std_rows.subspan(tau * nf, nf);
    ex.input.fo_frames.emplace_back(row.begin(), row.end());
  }
  const auto row = std_rows.subspan(t * nf, nf);
  for (std::size_t b = 0; b < n; ++b) {
    if (ds.mask.power_observed[b]) {
      ex.input.po.push_back(row[2 * b]);
      ex.input.po.push_back(row[2 * b + 1]);
    }
  }
  for (std::size_t b = 0; b < n; ++b) {
    if (ds.mask.voltage_observed[b]) {
      ex.input.po.push_back(row[2 * n + 2 * b]);
      ex.input.po.push_back(row[2 * n + 2 * b + 1]);
    }
  }
  ex.v_true_std.assign(row.begin() + static_cast<std::ptrdiff_t>(2 * n), row.end());
  ex.s_true = ds.timeline->s_vec(t);
  return ex;
}

TrainedModel train(const SfseDataset& ds, const GridModel& grid, const TrainConfig& config) {
  if (!ds.timeline) throw InvalidInput("train: dataset has no timeline");
  if (ds.timeline->n_buses() != grid.n_buses) throw InvalidInput("train: grid/dataset mismatch");
  if (config.batch_size == 0) throw InvalidInput("train: batch size must be positive");
  if (!(config.lambda >= 0.0)) throw InvalidInput("train: lambda must be >= 0");
  if (ds.train_targets.empty()) throw InvalidInput("train: empty training split");

  const std::size_t n = grid.n_buses;
  const auto arch = DnnArchitecture::make(n, ds.mask.n_s(), ds.mask.n_v());
  const DnnModel model(arch);

  TrainedModel out;
  out.arch = arch;
  out.scaler = ds.scaler;
  out.grid = grid;
  out.T = ds.T;
  out.config = config;
  out.params = model.init_params(config.seed);

  const auto rows = standardized_rows(ds);
  std::vector<TrainingExample> examples;
  examples.reserve(ds.train_targets.size());
  for (auto t : ds.train_targets) examples.push_back(make_example(ds, rows, t));

  std::size_t n_val = 0;
  if (config.validation_fraction > 0.0 && examples.size() >= 10) {
    n_val = static_cast<std::size_t>(
        std::floor(config.validation_fraction * static_cast<double>(examples.size())));
  }
  const std::size_t n_fit = examples.size() - n_val;
  std::span<const TrainingExample> fit_set(examples.data(), n_fit);
  std::span<const TrainingExample> val_set(examples.data() + n_fit, n_val);

  std::span<const double> mean(ds.scaler.mean());
  std::span<const double> sd(ds.scaler.stddev());
  const auto v_mean = mean.subspan(2 * n, 2 * n);
  const auto v_std = sd.subspan(2 * n, 2 * n);

  AdamState adam(model.n_params());
  std::vector<std::size_t> order(n_fit);
  std::vector<TrainingExample> batch;
  std::vector<double> best_params = out.params;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed),
                      static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(epoch), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    bool capped = false;
    for (std::size_t start = 0; start < n_fit; start += config.batch_size) {
      const std::size_t end = std::min(n_fit, start + config.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(fit_set[order[i]]);
      BatchGradient bg;
      try {
        bg = gradients(model, out.params, batch, grid, config.lambda, v_mean, v_std);
      } catch (const NumericalError& e) {
        throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch) + ": " +
                                   e.what(),
                               epoch);
      }
      epoch_loss += bg.mean_loss.total * static_cast<double>(end - start);
      adam_step(adam, out.params, bg.grad, config);
      if (config.max_steps && adam.step >= config.max_steps) {
        capped = true;
        break;
      }
    }
    out.training_curve.push_back(epoch_loss / static_cast<double>(n_fit));
    if (!std::isfinite(out.training_curve.back())) {
      throw TrainingDiverged("training loss is not finite in epoch " + std::to_string(epoch), epoch);
    }

    if (n_val > 0) {
      double val = 0.0;
      for (const auto& ex : val_set) {
        const auto v_hat = forward(model, out.params, ex.input);
        val += pi_loss_std(grid, ex.s_true, ex.v_true_std, v_hat, config.lambda, v_mean, v_std)
                   .total;
      }
      val /= static_cast<double>(n_val);
      out.validation_curve.push_back(val);
      if (val < best_val) {
        best_val = val;
        best_params = out.params;
        out.best_epoch = epoch;
        since_best = 0;
      } else if (config.patience && ++since_best >= config.patience) {
        break;
      }
    } else {
      out.best_epoch = epoch;
    }
    if (capped) break;
  }
  if (n_val > 0) out.params = std::move(best_params);
  out.optimizer_steps = adam.step;
  return out;
}

SampleInput prepare_input(const TrainedModel& model, const SfseSequence& seq) {
  const std::size_t n = model.arch.n_buses;
  if (seq.history_s.size() != seq.history_v.size() || seq.history_s.empty()) {
    throw InvalidInput("prepare_input: history must be non-empty with matching s/v frames");
  }
  if (seq.partial_s.size() != model.arch.n_s || seq.partial_v.size() != model.arch.n_v) {
    throw InvalidInput("prepare_input: partial frame does not match the model's mask");
  }
  SampleInput in;
  for (std::size_t k = 0; k < seq.history_s.size(); ++k) {
    check_phasors(seq.history_s[k], n, "history s");
    check_phasors(seq.history_v[k], n, "history v");
    auto f = flatten(seq.history_s[k]);
    const auto fv = flatten(seq.history_v[k]);
    f.insert(f.end(), fv.begin(), fv.end());
    model.scaler.apply(f);
    in.fo_frames.push_back(std::move(f));
  }
  for (std::size_t b = 0; b < seq.partial_s.size(); ++b) {
    double xy[2] = {seq.partial_s[b].real(), seq.partial_s[b].imag()};
    model.scaler.apply(xy, 2 * b);
    in.po.insert(in.po.end(), xy, xy + 2);
  }
  for (std::size_t b = 0; b < seq.partial_v.size(); ++b) {
    double xy[2] = {seq.partial_v[b].real(), seq.partial_v[b].imag()};
    model.scaler.apply(xy, 2 * n + 2 * b);
    in.po.insert(in.po.end(), xy, xy + 2);
  }
  return in;
}

ComplexVec predict(const TrainedModel& model, const SfseSequence& seq) {
  const DnnModel net(model.arch);
  auto v = forward(net, model.params, prepare_input(model, seq));
  model.scaler.invert(v, 2 * model.arch.n_buses);
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericalError("predict: non-finite estimate");
  }
  return unflatten(v);
}

namespace {

constexpr const char* kCheckpointFormat = "dsse-checkpoint/1";

nlohmann::json config_to_json(const TrainConfig& c) {
  return {{"lambda", c.lambda},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"validation_fraction", c.validation_fraction},
          {"patience", c.patience},
          {"max_steps", c.max_steps},
          {"seed", c.seed}};
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lambda = j.at("lambda").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  c.validation_fraction = j.at("validation_fraction").get<double>();
  c.patience = j.at("patience").get<std::size_t>();
  c.max_steps = j.at("max_steps").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainedModel& m) {
  const DnnModel net(m.arch);
  if (m.params.size() != net.n_params()) throw InvalidInput("save_checkpoint: parameter count");
  nlohmann::json tensors = nlohmann::json::object();
  std::span<const double> flat(m.params);
  for (const auto& t : net.layout().tensors()) {
    const auto view = t.ref.in(flat);
    tensors[t.name] = {{"shape", {t.ref.rows, t.ref.cols}},
                       {"data", std::vector<double>(view.begin(), view.end())}};
  }
  const nlohmann::json j = {
      {"format", kCheckpointFormat},
      {"architecture", {{"n_buses", m.arch.n_buses}, {"n_s", m.arch.n_s}, {"n_v", m.arch.n_v}}},
      {"T", m.T},
      {"train_config", config_to_json(m.config)},
      {"scaler", m.scaler.to_json()},
      {"grid", nlohmann::json::parse(case_to_json(m.grid))},
      {"tensors", tensors},
      {"training_curve", m.training_curve},
      {"validation_curve", m.validation_curve},
      {"best_epoch", m.best_epoch},
      {"optimizer_steps", m.optimizer_steps}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write checkpoint " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

TrainedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    const auto j = nlohmann::json::parse(ss.str());
    if (j.value("format", std::string{}) != kCheckpointFormat) {
      throw InvalidInput(path.string() + ": not a " + kCheckpointFormat + " file");
    }
    TrainedModel m;
    const auto& a = j.at("architecture");
    m.arch = DnnArchitecture::make(a.at("n_buses").get<std::size_t>(),
                                   a.at("n_s").get<std::size_t>(), a.at("n_v").get<std::size_t>());
    m.T = j.at("T").get<std::size_t>();
    m.config = config_from_json(j.at("train_config"));
    m.scaler = Standardizer::from_json(j.at("scaler"));
    m.grid = parse_case(j.at("grid").dump(), path.string() + " (grid)");
    if (m.grid.n_buses != m.arch.n_buses || m.scaler.n_features() != m.arch.frame_dim()) {
      throw InvalidInput(path.string() + ": grid/scaler do not match the architecture");
    }
    const DnnModel net(m.arch);
    m.params.assign(net.n_params(), 0.0);
    std::span<double> flat(m.params);
    for (const auto& t : net.layout().tensors()) {
      const auto& tj = j.at("tensors").at(t.name);
      const auto data = tj.at("data").get<std::vector<double>>();
      if (data.size() != t.ref.size()) {
        throw InvalidInput(path.string() + ": tensor '" + t.name + "' has the wrong size");
      }
      std::copy(data.begin(), data.end(), t.ref.in(flat).begin());
    }
    m.training_curve = j.at("training_curve").get<std::vector<double>>();
    m.validation_curve = j.at("validation_curve").get<std::vector<double>>();
    m.best_epoch = j.at("best_epoch").get<std::size_t>();
    m.optimizer_steps = j.at("optimizer_steps").get<std::size_t>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(path.string() + ": malformed checkpoint (" + e.what() + ")");
  }
}

}  // namespace dsse::nn
