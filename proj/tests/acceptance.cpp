// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failed criteria (capped at 1). Tolerances live next to each check.
//
//   acceptance [--only N[,N...]] [--slow]
//
// Criterion 8 (T=50 against T=5) needs --slow; otherwise it prints SKIP.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsse/cli/commands.hpp"
#include "dsse/data_pipeline.hpp"
#include "dsse/evaluation.hpp"
#include "dsse/power_flow.hpp"
#include "dsse/wls_estimator.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace dsse;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

const GridModel& ieee37() {
  static const GridModel g = load_case(test::data_path("ieee37.json"));
  return g;
}

const GridModel& case4() {
  static const GridModel g = load_case(test::data_path("case4_dist.json"));
  return g;
}

// The default week at one-minute resolution, shared by every IEEE-37 check.
double g_timeline_seconds = 0.0;
std::shared_ptr<const Timeline> ieee37_week() {
  static std::shared_ptr<const Timeline> tl = [] {
    Stopwatch sw;
    auto t = std::make_shared<Timeline>(generate_timeline(ieee37(), GenerationConfig{}));
    g_timeline_seconds = sw.seconds();
    return t;
  }();
  return tl;
}

// --------------------------------------------------------------------------

Outcome physics_consistency() {
  constexpr double kTol = 1e-8;
  constexpr double kBudget = 120.0;
  const auto tl = ieee37_week();
  const double res = timeline_max_residual(ieee37(), *tl);
  const bool ok = tl->n_steps() == 10080 && res < kTol && g_timeline_seconds < kBudget;
  return {ok, fmt("%zu steps, max residual %.2e (< %.0e), generated in %.1f s (< %.0f s)",
                  tl->n_steps(), res, kTol, g_timeline_seconds, kBudget)};
}

Outcome observability_values() {
  const std::vector<std::size_t> n_s{35, 28, 18, 12, 6};
  const std::vector<int> expected{49, 39, 25, 17, 8};
  std::string got;
  bool ok = true;
  for (std::size_t k = 0; k < n_s.size(); ++k) {
    ScenarioSpec spec;
    spec.n_s = n_s[k];
    const auto ds = build_dataset(ieee37_week(), 5, ObservabilityMask::from_counts(36, n_s[k], 0),
                                  100, 0.9, 1);
    const auto r = run_scenario(spec, ds, default_factory(spec, ds, ieee37(), {}));
    ok = ok && r.row.observability_pct == expected[k];
    got += fmt("%s%d%%", k ? " " : "", r.row.observability_pct);
  }
  return {ok, "reported " + got + " (expected 49% 39% 25% 17% 8%)"};
}

Outcome gradient_correctness() {
  constexpr double kRel = 1e-4, kAbs = 1e-8, kBudget = 60.0;
  Stopwatch sw;
  std::string detail;
  bool ok = true;
  for (double lambda : {0.0, 2.0}) {
    const auto r = test::check_gradients(4, 2, 1, 5, lambda, 7, kRel, kAbs);
    ok = ok && r.n_failed == 0 && (lambda == 0.0 || r.physics > 0.0);
    detail += fmt("lambda=%g: %zu/%zu params off, worst rel above floor %.1e; ", lambda, r.n_failed,
                  r.n_params, r.worst_rel);
  }
  const double t = sw.seconds();
  ok = ok && t < kBudget;
  return {ok, detail + fmt("tol rel %.0e / abs %.0e, %.1f s (< %.0f s)", kRel, kAbs, t, kBudget)};
}

Outcome wls_exactness() {
  constexpr double kTol = 1e-6;
  const auto mask = ObservabilityMask::full(36);
  const auto ds = build_dataset(ieee37_week(), 5, mask, 1111, 0.9, 3);
  double worst = 0.0;
  for (auto t : ds.test_targets) {
    const auto seq = ds.sequence(t);
    const auto r = wls_estimate(seq, ieee37(), mask);
    for (std::size_t i = 0; i < seq.true_v.size(); ++i) {
      worst = std::max(worst, std::abs(r.v[i] - seq.true_v[i]));
    }
  }
  const bool ok = ds.test_targets.size() >= 100 && worst < kTol;
  return {ok, fmt("%zu frames, max |v - v_true| %.2e p.u. (< %.0e)", ds.test_targets.size(),
                  worst, kTol)};
}

Outcome jacobian_correctness() {
  constexpr double kTol = 1e-6;
  constexpr int kInstances = 100;
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> size(2, 40);
  double worst_pf = 0.0, worst_wls = 0.0;
  for (int k = 0; k < kInstances; ++k) {
    const auto g = test::random_radial(rng, size(rng), true);
    const auto v = test::random_voltages(rng, g.n_buses);
    const auto s = test::random_voltages(rng, g.n_buses);

    // Power flow: unknowns are the PQ-bus voltages, slack held fixed.
    auto pq_v = [&](const Eigen::VectorXd& x) {
      ComplexVec w = v;
      for (std::size_t i = 0, j = 0; i < g.n_buses; ++i) {
        if (i == g.slack_index) continue;
        w[i] = {x(2 * j), x(2 * j + 1)};
        ++j;
      }
      return w;
    };
    Eigen::VectorXd x_pq(2 * (g.n_buses - 1));
    for (std::size_t i = 0, j = 0; i < g.n_buses; ++i) {
      if (i == g.slack_index) continue;
      x_pq(2 * j) = v[i].real();
      x_pq(2 * j + 1) = v[i].imag();
      ++j;
    }
    const auto fd_pf = test::fd_jacobian(
        [&](const Eigen::VectorXd& x) { return pf_mismatch(g, s, pq_v(x)); }, x_pq);
    worst_pf = std::max(worst_pf, test::rel_error(pf_jacobian(g, v), fd_pf));

    const auto x = test::to_eigen(flatten(v));
    const auto fd_wls = test::fd_jacobian(
        [&](const Eigen::VectorXd& y) {
          return wls_residual(g, s, unflatten({y.data(), static_cast<std::size_t>(y.size())}));
        },
        x);
    worst_wls = std::max(worst_wls, test::rel_error(wls_jacobian(g, v), fd_wls));
  }
  const bool ok = worst_pf < kTol && worst_wls < kTol;
  return {ok, fmt("%d instances each, worst rel error power flow %.1e, WLS %.1e (< %.0e)",
                  kInstances, worst_pf, worst_wls, kTol)};
}

// Four-bus pilot. The default profiles barely move the voltages of a four-bus
// feeder, so loads and PV are scaled up to a couple of percent of spread.
Outcome regularization_benefit() {
  constexpr double kBudget = 30.0 * 60.0;
  constexpr std::size_t kSeeds = 5;
  Stopwatch sw;
  GenerationConfig c;
  c.n_load_buses = 3;
  c.n_pv_buses = 2;
  c.profiles.load_base = 0.4;
  c.profiles.load_daily_amplitude = 0.3;
  c.profiles.walk_amplitude = 0.12;
  c.profiles.noise_level = 0.3;
  c.profiles.pv_peak = 0.6;
  const auto tl = std::make_shared<Timeline>(generate_timeline(case4(), c));
  const auto ds = build_dataset(tl, 5, ObservabilityMask::from_counts(4, 2, 0), 2222, 0.9, 1);

  double ang[2], ang_sd[2];
  for (int k = 0; k < 2; ++k) {
    ScenarioSpec spec;
    spec.n_s = 2;
    spec.lambda = k ? 2.0 : 0.0;
    spec.estimator = EstimatorKind::dnn;
    spec.repetitions = kSeeds;
    spec.seed = 1;
    const auto r = run_scenario(spec, ds, default_factory(spec, ds, case4(), {}));
    if (r.row.repetitions != kSeeds) return {false, "a training run failed"};
    ang[k] = r.row.mse_ang_mean;
    ang_sd[k] = r.row.mse_ang_std;
  }
  const double t = sw.seconds();
  const bool ok = ang[1] <= ang[0] && t < kBudget;
  return {ok, fmt("25%% observability, %zu seeds: angle MSE lambda=2 %.3e (sd %.1e) vs lambda=0 "
                  "%.3e (sd %.1e), %.0f s (< %.0f s)",
                  kSeeds, ang[1], ang_sd[1], ang[0], ang_sd[0], t, kBudget)};
}

Outcome estimator_ordering() {
  constexpr double kBudget = 2.0 * 3600.0;
  Stopwatch sw;
  bool ok = true;
  std::string detail;
  for (std::size_t n_s : {28u, 18u}) {
    const auto ds = build_dataset(ieee37_week(), 5, ObservabilityMask::from_counts(36, n_s, 0),
                                  2222, 0.9, 1);
    ReportRow rows[3];
    const EstimatorKind kinds[3] = {EstimatorKind::dnn, EstimatorKind::wls,
                                    EstimatorKind::persistence};
    for (int k = 0; k < 3; ++k) {
      ScenarioSpec spec;
      spec.n_s = n_s;
      spec.estimator = kinds[k];
      spec.lambda = 2.0;
      spec.seed = 1;
      // The baselines are deterministic, one repetition suffices.
      spec.repetitions = kinds[k] == EstimatorKind::dnn ? 5 : 1;
      rows[k] = run_scenario(spec, ds, default_factory(spec, ds, ieee37(), {})).row;
      if (rows[k].repetitions != spec.repetitions) return {false, "a repetition failed"};
    }
    const auto& d = rows[0];
    for (int k = 1; k < 3; ++k) {
      ok = ok && d.mse_mag_mean < rows[k].mse_mag_mean && d.mse_ang_mean < rows[k].mse_ang_mean;
    }
    detail += fmt("n_s=%zu mag %.2e/%.2e/%.2e ang %.2e/%.2e/%.2e; ", n_s, d.mse_mag_mean,
                  rows[1].mse_mag_mean, rows[2].mse_mag_mean, d.mse_ang_mean,
                  rows[1].mse_ang_mean, rows[2].mse_ang_mean);
  }
  const double t = sw.seconds();
  ok = ok && t < kBudget;
  return {ok, "dnn/wls/persistence " + detail + fmt("%.0f s (< %.0f s)", t, kBudget)};
}

Outcome t_insensitivity() {
  constexpr double kTol = 0.5;
  constexpr std::size_t kReps = 3;
  PolarMse m[2];
  const std::size_t Ts[2] = {5, 50};
  for (int k = 0; k < 2; ++k) {
    const auto ds = build_dataset(ieee37_week(), Ts[k], ObservabilityMask::from_counts(36, 28, 0),
                                  2222, 0.9, 1);
    ScenarioSpec spec;
    spec.T = Ts[k];
    spec.n_s = 28;
    spec.lambda = 2.0;
    spec.estimator = EstimatorKind::dnn;
    spec.repetitions = kReps;
    spec.seed = 1;
    const auto r = run_scenario(spec, ds, default_factory(spec, ds, ieee37(), {}));
    if (r.row.repetitions != kReps) return {false, "a repetition failed"};
    m[k] = {r.row.mse_mag_mean, r.row.mse_ang_mean};
  }
  const double dmag = std::abs(m[1].mag - m[0].mag) / m[0].mag;
  const double dang = std::abs(m[1].ang - m[0].ang) / m[0].ang;
  return {dmag < kTol && dang < kTol,
          fmt("n_s=28 lambda=2, %zu reps: relative change magnitude %.2f, angle %.2f (< %.1f)",
              kReps, dmag, dang, kTol)};
}

// --------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// report.csv without the wall-clock column.
std::string mask_runtime(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

Outcome determinism(const fs::path& work) {
  auto pipeline = [&](const std::string& name) {
    const auto root = work / name;
    fs::remove_all(root);
    fs::create_directories(root);
    nlohmann::json j = {
        {"case", test::data_path("case4_dist.json")},
        {"dataset_dir", (root / "dataset").string()},
        {"output_dir", (root / "out").string()},
        {"seed", 5},
        {"generation", {{"duration_steps", 172800}, {"n_load_buses", 3}, {"n_pv_buses", 2}}},
        {"dataset", {{"n_sequences", 300}}},
        {"scenarios",
         {{"T", {5}}, {"n_s", {1, 2}}, {"lambda", {0, 2}}, {"repetitions", 2},
          {"estimators", {"dnn", "wls", "persistence"}}}},
        {"train", {{"epochs", 5}}}};
    std::ofstream(root / "cfg.json") << j.dump(2);
    std::ostringstream out, err;
    for (const char* cmd : {"generate", "train", "evaluate", "compare"}) {
      std::vector<std::string> args{"dsse", "--config", (root / "cfg.json").string()};
      if (std::string(cmd) == "evaluate") args.push_back("--dump-predictions");
      args.push_back(cmd);
      if (cli::run(args, out, err) != 0) return std::string();
    }
    const auto o = root / "out";
    return hash_directory(root / "dataset") + "|" + hash_directory(o / "checkpoints") + "|" +
           hash_directory(o / "predictions") + "|" + mask_runtime(slurp(o / "report.csv")) + "|" +
           slurp(o / "compare.csv") + slurp(o / "compare_magnitude.svg") +
           slurp(o / "compare_angle.svg");
  };
  const auto a = pipeline("run_a");
  const auto b = pipeline("run_b");
  if (a.empty() || b.empty()) return {false, "pipeline command failed"};
  return {a == b, a == b ? "generate/train/evaluate/compare twice: dataset, checkpoints, "
                           "predictions, report (runtime masked) and plots byte-identical"
                         : "outputs differ between identical runs"};
}

Outcome round_trips() {
  constexpr double kTol = 1e-12;
  const auto tl = ieee37_week();
  std::vector<double> rows;
  for (std::size_t t = 0; t < tl->n_steps(); ++t) {
    const auto f = tl->features(t);
    rows.insert(rows.end(), f.begin(), f.end());
  }
  const std::size_t nf = 4 * tl->n_buses();
  Standardizer sc;
  sc.fit(rows, nf);
  double worst_std = 0.0;
  auto x = rows;
  for (std::size_t r = 0; r < x.size(); r += nf) {
    std::span<double> row(x.data() + r, nf);
    sc.apply(row);
    sc.invert(row);
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    worst_std = std::max(worst_std, std::abs(x[i] - rows[i]) / std::max(std::abs(rows[i]), 1.0));
  }
  const auto back = Standardizer::from_json(sc.to_json());
  const bool json_ok = back.mean() == sc.mean() && back.stddev() == sc.stddev();

  double worst_unit = 0.0;
  const auto& g = ieee37();
  for (double v : {0.0, 0.95, 1.0, 1.05, -0.3, 123.456}) {
    worst_unit = std::max(worst_unit, std::abs(voltage_kv_to_pu(g, voltage_pu_to_kv(g, v)) - v));
    worst_unit = std::max(worst_unit, std::abs(power_mva_to_pu(g, power_pu_to_mva(g, v)) - v));
  }
  const auto v = tl->v_vec(17);
  const bool flat_ok = unflatten(flatten(v)) == v;

  // Angle wrapping: (-pi, pi], and errors measured across the cut.
  const double pi = std::numbers::pi;
  const double w1 = wrap_angle(pi + 1e-3) - (-pi + 1e-3);
  const double w2 = wrap_angle(-pi) - pi;
  const double w3 = wrap_angle(pi) - pi;
  const auto e = polar_mse({std::polar(1.0, pi - 1e-3)}, {std::polar(1.0, -pi + 1e-3)});
  const double w4 = e.ang - 4e-6;
  const double worst_wrap =
      std::max({std::abs(w1), std::abs(w2), std::abs(w3), std::abs(w4)});
  const bool ok = worst_std < kTol && json_ok && worst_unit < kTol && flat_ok && worst_wrap < kTol;
  return {ok, fmt("standardize/invert %.1e, units %.1e, wrap at +-pi %.1e (< %.0e); json %s, "
                  "flatten %s",
                  worst_std, worst_unit, worst_wrap, kTol, json_ok ? "exact" : "differs",
                  flat_ok ? "exact" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  bool slow = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--slow") {
      slow = true;
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else {
      std::fprintf(stderr, "usage: acceptance [--only N[,N...]] [--slow]\n");
      return 2;
    }
  }

  const auto work = fs::temp_directory_path() / "dsse_acceptance";
  fs::create_directories(work);

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> fn;
    bool slow_only = false;
  };
  const std::vector<Criterion> criteria{
      {1, "physics consistency", physics_consistency},
      {2, "observability values", observability_values},
      {3, "gradient correctness", gradient_correctness},
      {4, "WLS exact at full observability", wls_exactness},
      {5, "Jacobian correctness", jacobian_correctness},
      {6, "regularization benefit (4-bus pilot)", regularization_benefit},
      {7, "estimator ordering", estimator_ordering},
      {8, "T-insensitivity", t_insensitivity, true},
      {9, "determinism", [&] { return determinism(work); }},
      {10, "round trips and angle wrapping", round_trips},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    if (c.slow_only && !slow) {
      std::printf("SKIP %2d %s: slow suite, run with --slow\n", c.id, c.name);
      continue;
    }
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  fs::remove_all(work);
  return failed ? 1 : 0;
}
