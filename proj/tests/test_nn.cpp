#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "dsse/error.hpp"
#include "dsse/nn/estimator.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace dsse;
using namespace dsse::nn;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::shared_ptr<Timeline> case4_timeline() {
  static std::shared_ptr<Timeline> tl = [] {
    GenerationConfig c;
    c.profiles.duration_steps = 2 * 86400;
    c.n_load_buses = 3;
    c.n_pv_buses = 2;
    return std::make_shared<Timeline>(
        generate_timeline(load_case(test::data_path("case4_dist.json")), c));
  }();
  return tl;
}

}  // namespace

TEST_CASE("architecture sizes") {
  const auto a = DnnArchitecture::make(36, 28, 0);
  CHECK(a.frame_dim() == 144);
  CHECK(a.lstm1_hidden() == 72);
  CHECK(a.fo_feature_dim() == 12);
  CHECK(a.po_feature_dim() == 6);
  CHECK(a.po_input_dim() == 56);
  CHECK(a.joint_dim() == 18);
  CHECK(a.joint_dim() == a.regressor_hidden());  // N divisible by 6
  CHECK(a.output_dim() == 72);
  const auto b = DnnArchitecture::make(4, 2, 1);
  CHECK(b.fo_feature_dim() == 2);
  CHECK(b.po_feature_dim() == 1);
  CHECK_THROWS_AS(DnnArchitecture::make(4, 5, 0), InvalidInput);

  const DnnModel m(a);
  const auto& t = m.layout().find("base_fc.4.w");
  CHECK(t.ref.rows == 72);
  CHECK(t.ref.cols == 18);
  CHECK(m.layout().find("po_fc.1.w").ref.rows == 6);
}

TEST_CASE("dense layer by hand") {
  ParamLayout layout;
  DenseSpec d;
  d.in = d.out = 1;
  d.w = layout.add("w", 1, 1, TensorKind::weight, 1);
  d.b = layout.add("b", 1, 1, TensorKind::bias, 1);
  std::vector<double> p{1.0, 0.0};
  const std::vector<double> x{0.5};
  CHECK(fc_forward(p, {d}, x)[0] == doctest::Approx(0.46212).epsilon(1e-5));
  p = {0.0, 0.0};
  CHECK(fc_forward(p, {d}, x)[0] == 0.0);
  p = {1e6, 0.0};
  CHECK(std::abs(fc_forward(p, {d}, x)[0]) <= 1.0);
  d.act = Activation::linear;
  CHECK(fc_forward(p, {d}, x)[0] == 5e5);
  CHECK_THROWS_AS(fc_forward(p, {d}, std::vector<double>{1.0, 2.0}), InvalidInput);
}

TEST_CASE("LSTM cell against a hand-written recurrence") {
  ParamLayout layout;
  LstmSpec s;
  s.in = 2;
  s.hidden = 1;
  s.w_x = layout.add("w_x", 4, 2, TensorKind::weight, 2);
  s.w_h = layout.add("w_h", 4, 1, TensorKind::recurrent_weight, 1);
  s.b = layout.add("b", 4, 1, TensorKind::forget_bias, 2);

  std::vector<double> zero(layout.total(), 0.0);
  const auto hz = lstm_forward(zero, s, {{1.0, -2.0}, {0.3, 0.4}});
  CHECK(hz.back()[0] == 0.0);
  CHECK_THROWS_AS(lstm_forward(zero, s, {}), InvalidInput);

  // Gate rows i, f, g, o.
  const double wx[4][2] = {{0.1, -0.2}, {0.3, 0.1}, {-0.4, 0.5}, {0.2, 0.2}};
  const double wh[4] = {0.7, -0.3, 0.2, 0.5};
  const double b[4] = {0.05, 1.0, -0.1, 0.0};
  std::vector<double> p(layout.total());
  for (int r = 0; r < 4; ++r) {
    p[s.w_x.offset + 2 * r] = wx[r][0];
    p[s.w_x.offset + 2 * r + 1] = wx[r][1];
    p[s.w_h.offset + r] = wh[r];
    p[s.b.offset + r] = b[r];
  }
  const std::vector<std::vector<double>> seq{{1.0, -2.0}, {0.3, 0.4}, {-0.5, 0.1}};
  double h = 0.0, c = 0.0;
  std::vector<double> ref;
  for (const auto& x : seq) {
    double z[4];
    for (int r = 0; r < 4; ++r) z[r] = wx[r][0] * x[0] + wx[r][1] * x[1] + wh[r] * h + b[r];
    c = sigmoid(z[1]) * c + sigmoid(z[0]) * std::tanh(z[2]);
    h = sigmoid(z[3]) * std::tanh(c);
    ref.push_back(h);
  }
  const auto out = lstm_forward(p, s, seq);
  REQUIRE(out.size() == 3);
  for (std::size_t t = 0; t < 3; ++t) CHECK(out[t][0] == doctest::Approx(ref[t]).epsilon(1e-14));
  // A length-1 sequence is one cell application.
  CHECK(lstm_forward(p, s, {seq[0]})[0][0] == doctest::Approx(ref[0]).epsilon(1e-14));
}

TEST_CASE("network shapes and trivial parameter settings") {
  const DnnModel m(DnnArchitecture::make(36, 28, 0));
  std::vector<double> zero(m.n_params(), 0.0);
  SampleInput in;
  in.fo_frames.assign(4, std::vector<double>(144, 0.7));
  in.po.assign(56, -0.3);
  const auto h = feature_extract(m, zero, in);
  CHECK(h.size() == 18);
  for (double x : h) CHECK(x == 0.0);
  CHECK(forward(m, zero, in).size() == 72);

  // Forced w = 1, b = 0 heads: the estimate equals the base output.
  auto p = m.init_params(3);
  for (const auto* head : {&m.scale_head, &m.shift_head}) {
    auto w = head->back().w.in(std::span<double>(p));
    std::fill(w.begin(), w.end(), 0.0);
  }
  ForwardCache cache;
  const auto v = forward(m, p, in, &cache);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == doctest::Approx(cache.v_tilde[i]));
  // Zero base output: the estimate equals the shift head.
  auto bw = m.base_fc.back().w.in(std::span<double>(p));
  std::fill(bw.begin(), bw.end(), 0.0);
  const auto vb = forward(m, p, in, &cache);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(vb[i] == cache.b[i]);

  in.po.pop_back();
  CHECK_THROWS_AS(forward(m, p, in), InvalidInput);
}

TEST_CASE("initialization") {
  const DnnModel m(DnnArchitecture::make(36, 28, 0));
  const auto p = m.init_params(5);
  CHECK(p == m.init_params(5));
  CHECK(p != m.init_params(6));
  const std::span<const double> flat(p);
  const auto& l1 = m.layout().find("lstm1.b");
  const auto b = l1.ref.in(flat);
  for (std::size_t i = 0; i < 72; ++i) CHECK(b[i] == 0.0);
  for (std::size_t i = 72; i < 144; ++i) CHECK(b[i] == 1.0);
  for (double x : m.layout().find("scale_fc.0.b").ref.in(flat)) CHECK(x == 1.0);
  const double bound = 1.0 / std::sqrt(144.0);
  for (double x : m.lstm1.w_x.in(flat)) CHECK(std::abs(x) <= bound);
}

TEST_CASE("physics-informed loss by hand") {
  // Identity scaler on a two-bus unit line.
  Eigen::MatrixXcd y(2, 2);
  y << 1.0, -1.0, -1.0, 1.0;
  const auto g = test::grid_from_y(y);
  const std::vector<double> mean(4, 0.0), sd(4, 1.0);
  const std::vector<double> v_true{1.0, 0.0, 0.887298, 0.0};
  const std::vector<double> v_hat{1.0, 0.0, 0.9, 0.0};
  const ComplexVec s_true{{0.112702, 0.0}, {-0.1, 0.0}};

  // term1 = (0.9 - 0.887298)^2; at v_hat the injections are [0.1, -0.09].
  const double t1 = 0.012702 * 0.012702;
  const double t2 = 0.012702 * 0.012702 + 0.01 * 0.01;
  const auto l = pi_loss_std(g, s_true, v_true, v_hat, 2.0, mean, sd);
  CHECK(l.data == doctest::Approx(t1).epsilon(1e-12));
  CHECK(l.physics == doctest::Approx(t2).epsilon(1e-12));
  CHECK(l.total == doctest::Approx(t1 + 2.0 * t2).epsilon(1e-12));
  CHECK(l.total == doctest::Approx(6.8394e-4).epsilon(2e-4));
  CHECK(pi_loss_std(g, s_true, v_true, v_hat, 0.0, mean, sd).total == doctest::Approx(t1));
  CHECK_THROWS_AS(pi_loss_std(g, s_true, v_true, v_hat, -1.0, mean, sd), InvalidInput);

  // Consistent pair: zero for every lambda; monotone in lambda otherwise.
  const auto s_ok = pfe_injections(g, unflatten(v_true));
  for (double lam : {0.0, 1.0, 20.0}) {
    CHECK(pi_loss_std(g, s_ok, v_true, v_true, lam, mean, sd).total < 1e-30);
  }
  double prev = 0.0;
  for (double lam : {0.0, 0.5, 1.0, 2.0, 20.0}) {
    const double t = pi_loss_std(g, s_true, v_true, v_hat, lam, mean, sd).total;
    CHECK(t >= prev);
    prev = t;
  }
}

TEST_CASE("loss gradient with respect to the estimate matches finite differences") {
  std::mt19937_64 rng(12);
  const auto g = test::random_radial(rng, 5, true);
  std::vector<double> mean(10), sd(10);
  for (std::size_t i = 0; i < 10; ++i) {
    mean[i] = i % 2 ? -0.02 : 0.97;
    sd[i] = 0.01 + 0.001 * static_cast<double>(i);
  }
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> target(10), est(10);
  for (auto& x : target) x = nd(rng);
  for (auto& x : est) x = nd(rng);
  const auto s = test::random_voltages(rng, 5);
  std::vector<double> grad(10);
  pi_loss_std(g, s, target, est, 2.0, mean, sd, grad);
  auto f = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd out(1);
    out(0) = pi_loss_std(g, s, target, {x.data(), 10}, 2.0, mean, sd).total;
    return out;
  };
  const Eigen::MatrixXd fd = test::fd_jacobian(f, test::to_eigen(est));
  for (Eigen::Index k = 0; k < 10; ++k) {
    CHECK(grad[static_cast<std::size_t>(k)] == doctest::Approx(fd(0, k)).epsilon(1e-6));
  }
}

TEST_CASE("parameter gradients match central differences for every parameter") {
  for (double lambda : {0.0, 2.0}) {
    CAPTURE(lambda);
    const auto r = test::check_gradients(4, 2, 1, 3, lambda, 21);
    CHECK(r.n_params > 100);
    CHECK(r.n_failed == 0);
    CHECK(r.physics > 0.0);
  }
}

TEST_CASE("gradient properties") {
  std::mt19937_64 rng(8);
  const auto grid = test::random_radial(rng, 4);
  const DnnModel m(DnnArchitecture::make(4, 2, 0));
  const auto p = m.init_params(2);
  TrainingExample ex;
  ex.input.fo_frames.assign(2, std::vector<double>(16, 0.2));
  ex.input.po = {0.1, -0.4, 0.3, 0.0};
  const std::vector<double> mean{1.0, 0.0, 0.99, -0.01, 0.98, -0.02, 0.97, -0.03};
  const std::vector<double> sd(8, 0.01);

  // Teacher = student: the target is the network's own output and the
  // injections are consistent with it, so the gradient vanishes.
  ex.v_true_std = forward(m, p, ex.input);
  ComplexVec v(4);
  for (std::size_t i = 0; i < 4; ++i) {
    v[i] = {mean[2 * i] + sd[2 * i] * ex.v_true_std[2 * i],
            mean[2 * i + 1] + sd[2 * i + 1] * ex.v_true_std[2 * i + 1]};
  }
  ex.s_true = pfe_injections(grid, v);
  const std::vector<TrainingExample> batch{ex};
  const auto at_min = gradients(m, p, batch, grid, 2.0, mean, sd);
  for (double x : at_min.grad) CHECK(std::abs(x) < 1e-12);

  // lambda = 0 ignores the injections entirely.
  auto shifted = batch;
  shifted[0].v_true_std[3] += 0.5;
  const auto a = gradients(m, p, shifted, grid, 0.0, mean, sd);
  shifted[0].s_true[2] += Complex(3.0, -1.0);
  const auto b = gradients(m, p, shifted, grid, 0.0, mean, sd);
  CHECK(a.grad == b.grad);

  shifted[0].v_true_std[0] = std::nan("");
  CHECK_THROWS_AS(gradients(m, p, shifted, grid, 0.0, mean, sd), NumericalError);
}

TEST_CASE("Adam") {
  TrainConfig c;
  const std::vector<double> g{0.3, -2.0, 1e-3, 0.0};
  std::vector<double> p{1.0, 1.0, 1.0, 1.0};
  AdamState s(4);
  adam_step(s, p, g, c);
  // m_hat = g, v_hat = g^2 after one step.
  for (std::size_t i = 0; i < 3; ++i) {
    const double expect = 1.0 - c.learning_rate * g[i] / (std::abs(g[i]) + c.epsilon);
    CHECK(p[i] == doctest::Approx(expect).epsilon(1e-15));
    CHECK(std::abs(p[i] - (1.0 - c.learning_rate * (g[i] > 0 ? 1 : -1))) < 1e-8);
  }
  CHECK(p[3] == 1.0);
  CHECK(s.step == 1);

  std::vector<double> q{1.0, 2.0};
  AdamState z(2);
  for (int i = 0; i < 5; ++i) adam_step(z, q, std::vector<double>{0.0, 0.0}, c);
  CHECK(q == std::vector<double>{1.0, 2.0});
  CHECK_THROWS_AS(adam_step(z, q, std::vector<double>{0.0}, c), InvalidInput);
}

TEST_CASE("training memorizes a single sequence") {
  const auto g = load_case(test::data_path("case4_dist.json"));
  const auto ds = build_dataset(case4_timeline(), 5, ObservabilityMask::from_counts(4, 2, 0), 2,
                                0.5, 3);
  REQUIRE(ds.train_targets.size() == 1);
  TrainConfig c;
  c.epochs = 2000;
  c.seed = 4;
  const auto model = train(ds, g, c);
  CHECK(model.optimizer_steps <= 2000);
  CHECK(model.validation_curve.empty());

  const auto rows = standardized_rows(ds);
  const auto ex = make_example(ds, rows, ds.train_targets[0]);
  const DnnModel net(model.arch);
  const auto l = pi_loss_std(g, ex.s_true, ex.v_true_std, forward(net, model.params, ex.input), 0.0,
                             std::span(ds.scaler.mean()).subspan(8, 8),
                             std::span(ds.scaler.stddev()).subspan(8, 8));
  CHECK(l.data < 1e-4);

  const auto seq = ds.sequence(ds.train_targets[0]);
  const auto v = predict(model, seq);
  REQUIRE(v.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(v[i] - seq.true_v[i]) < 1e-2);
  CHECK(predict(model, seq) == v);
}

TEST_CASE("training on the four-bus pilot") {
  const auto g = load_case(test::data_path("case4_dist.json"));
  const auto ds = build_dataset(case4_timeline(), 5, ObservabilityMask::from_counts(4, 2, 0), 600,
                                0.9, 3);
  TrainConfig c;
  c.epochs = 25;
  c.patience = 0;

  SUBCASE("loss falls in trend and runs are reproducible") {
    for (std::uint64_t seed : {1u, 2u}) {
      c.seed = seed;
      const auto m = train(ds, g, c);
      REQUIRE(m.training_curve.size() == 25);
      double first = 0.0, last = 0.0;
      for (std::size_t e = 0; e < 10; ++e) {
        first += m.training_curve[e];
        last += m.training_curve[15 + e];
      }
      CHECK(last < first);
      if (seed == 1) CHECK(train(ds, g, c).params == m.params);
    }
  }
  SUBCASE("lambda = 20 does not diverge and checkpoints round-trip") {
    c.lambda = 20.0;
    c.epochs = 5;
    const auto m = train(ds, g, c);
    for (double x : m.training_curve) CHECK(std::isfinite(x));
    CHECK(m.validation_curve.size() == 5);

    const auto path = std::filesystem::temp_directory_path() / "dsse_test_ckpt.json";
    save_checkpoint(path, m);
    const auto back = load_checkpoint(path);
    CHECK(back.params == m.params);
    CHECK(back.arch == m.arch);
    CHECK(back.T == 5);
    CHECK(back.config.lambda == 20.0);
    CHECK(back.training_curve == m.training_curve);
    CHECK(back.scaler.mean() == m.scaler.mean());
    const auto seq = ds.sequence(ds.test_targets[0]);
    CHECK(predict(back, seq) == predict(m, seq));

    std::ofstream(path) << R"({"format":"something-else"})";
    CHECK_THROWS_AS(load_checkpoint(path), InvalidInput);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path), InvalidInput);
  }
  SUBCASE("invalid configuration") {
    c.lambda = -1.0;
    CHECK_THROWS_AS(train(ds, g, c), InvalidInput);
  }
}
