#include "dsse/cli/commands.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dsse/error.hpp"
#include "dsse/parallel.hpp"

namespace dsse::cli {

namespace fs = std::filesystem;
using nlohmann::json;

void apply_desk_scale(RunConfig& c) {
  c.n_sequences = 2222;
  c.repetitions = 5;
}

namespace {

constexpr const char* kDatasetFormat = "dsse-dataset/1";

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw InvalidInput("config: '" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw InvalidInput("config: unknown key '" + where + k + "'");
  }
}

template <typename T>
void take(const json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InvalidInput("config: field '" + where + key + "' has the wrong type");
  }
}

json generation_to_json(const GenerationConfig& g) {
  const auto& p = g.profiles;
  return {{"n_households", p.n_households},
          {"duration_steps", p.duration_steps},
          {"source_resolution_s", p.source_resolution_s},
          {"daily_period_steps", p.daily_period_steps},
          {"load_base", p.load_base},
          {"load_daily_amplitude", p.load_daily_amplitude},
          {"walk_amplitude", p.walk_amplitude},
          {"noise_level", p.noise_level},
          {"pv_peak", p.pv_peak},
          {"pv_cloud_depth", p.pv_cloud_depth},
          {"power_factor_min", g.power_factor_min},
          {"power_factor_max", g.power_factor_max},
          {"n_load_buses", g.n_load_buses},
          {"n_pv_buses", g.n_pv_buses},
          {"smoothing_window", g.smoothing_window},
          {"downsample_factor", g.downsample_factor},
          {"warm_start", g.warm_start}};
}

void merge_generation(GenerationConfig& g, const json& j) {
  const std::string w = "generation.";
  reject_unknown(j,
                 {"n_households", "duration_steps", "source_resolution_s", "daily_period_steps",
                  "load_base", "load_daily_amplitude", "walk_amplitude", "noise_level", "pv_peak",
                  "pv_cloud_depth", "power_factor_min", "power_factor_max", "n_load_buses",
                  "n_pv_buses", "smoothing_window", "downsample_factor", "warm_start"},
                 w);
  auto& p = g.profiles;
  take(j, "n_households", p.n_households, w);
  take(j, "duration_steps", p.duration_steps, w);
  take(j, "source_resolution_s", p.source_resolution_s, w);
  take(j, "daily_period_steps", p.daily_period_steps, w);
  take(j, "load_base", p.load_base, w);
  take(j, "load_daily_amplitude", p.load_daily_amplitude, w);
  take(j, "walk_amplitude", p.walk_amplitude, w);
  take(j, "noise_level", p.noise_level, w);
  take(j, "pv_peak", p.pv_peak, w);
  take(j, "pv_cloud_depth", p.pv_cloud_depth, w);
  take(j, "power_factor_min", g.power_factor_min, w);
  take(j, "power_factor_max", g.power_factor_max, w);
  take(j, "n_load_buses", g.n_load_buses, w);
  take(j, "n_pv_buses", g.n_pv_buses, w);
  take(j, "smoothing_window", g.smoothing_window, w);
  take(j, "downsample_factor", g.downsample_factor, w);
  take(j, "warm_start", g.warm_start, w);
}

std::string fmt_num(double x) {
  std::ostringstream os;
  os << x;
  return os.str();
}

}  // namespace

void merge_config(RunConfig& c, const json& j) {
  reject_unknown(j,
                 {"case", "dataset_dir", "output_dir", "seed", "jobs", "generation", "dataset",
                  "scenarios", "train", "reports", "dump_predictions", "resume"},
                 "");
  std::string s;
  if (j.contains("case")) take(j, "case", s, ""), c.case_path = s;
  if (j.contains("dataset_dir")) take(j, "dataset_dir", s, ""), c.dataset_dir = s;
  if (j.contains("output_dir")) take(j, "output_dir", s, ""), c.output_dir = s;
  take(j, "seed", c.seed, "");
  take(j, "jobs", c.jobs, "");
  take(j, "dump_predictions", c.dump_predictions, "");
  take(j, "resume", c.resume, "");
  if (j.contains("generation")) merge_generation(c.generation, j.at("generation"));
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    reject_unknown(d, {"n_sequences", "split_fraction", "train_time_fraction"}, "dataset.");
    take(d, "n_sequences", c.n_sequences, "dataset.");
    take(d, "split_fraction", c.split_fraction, "dataset.");
    take(d, "train_time_fraction", c.train_time_fraction, "dataset.");
  }
  if (j.contains("scenarios")) {
    const auto& sc = j.at("scenarios");
    const std::string w = "scenarios.";
    reject_unknown(sc, {"T", "n_s", "n_v", "lambda", "estimators", "repetitions"}, w);
    take(sc, "T", c.T_values, w);
    take(sc, "n_s", c.n_s_values, w);
    take(sc, "n_v", c.n_v_values, w);
    take(sc, "lambda", c.lambdas, w);
    take(sc, "repetitions", c.repetitions, w);
    if (sc.contains("estimators")) {
      std::vector<std::string> names;
      take(sc, "estimators", names, w);
      c.estimators.clear();
      for (const auto& n : names) c.estimators.push_back(parse_estimator(n));
    }
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    const std::string w = "train.";
    reject_unknown(t,
                   {"batch_size", "epochs", "learning_rate", "beta1", "beta2", "epsilon",
                    "validation_fraction", "patience", "max_steps"},
                   w);
    take(t, "batch_size", c.train.batch_size, w);
    take(t, "epochs", c.train.epochs, w);
    take(t, "learning_rate", c.train.learning_rate, w);
    take(t, "beta1", c.train.beta1, w);
    take(t, "beta2", c.train.beta2, w);
    take(t, "epsilon", c.train.epsilon, w);
    take(t, "validation_fraction", c.train.validation_fraction, w);
    take(t, "patience", c.train.patience, w);
    take(t, "max_steps", c.train.max_steps, w);
  }
  if (j.contains("reports")) {
    std::vector<std::string> r;
    take(j, "reports", r, "");
    c.reports.assign(r.begin(), r.end());
  }
}

json config_to_json(const RunConfig& c) {
  std::vector<std::string> est;
  for (auto e : c.estimators) est.emplace_back(estimator_name(e));
  std::vector<std::string> reports;
  for (const auto& r : c.reports) reports.push_back(r.string());
  return {{"case", c.case_path.string()},
          {"dataset_dir", c.dataset_dir.string()},
          {"output_dir", c.output_dir.string()},
          {"seed", c.seed},
          {"jobs", c.jobs},
          {"generation", generation_to_json(c.generation)},
          {"dataset",
           {{"n_sequences", c.n_sequences},
            {"split_fraction", c.split_fraction},
            {"train_time_fraction", c.train_time_fraction}}},
          {"scenarios",
           {{"T", c.T_values},
            {"n_s", c.n_s_values},
            {"n_v", c.n_v_values},
            {"lambda", c.lambdas},
            {"estimators", est},
            {"repetitions", c.repetitions}}},
          {"train",
           {{"batch_size", c.train.batch_size},
            {"epochs", c.train.epochs},
            {"learning_rate", c.train.learning_rate},
            {"beta1", c.train.beta1},
            {"beta2", c.train.beta2},
            {"epsilon", c.train.epsilon},
            {"validation_fraction", c.train.validation_fraction},
            {"patience", c.train.patience},
            {"max_steps", c.train.max_steps}}},
          {"reports", reports},
          {"dump_predictions", c.dump_predictions},
          {"resume", c.resume}};
}

void validate(const RunConfig& c) {
  if (c.estimators.empty()) throw InvalidInput("config: estimator list is empty");
  if (c.T_values.empty() || c.n_s_values.empty() || c.n_v_values.empty()) {
    throw InvalidInput("config: scenario grid (T, n_s, n_v) must be non-empty");
  }
  for (auto T : c.T_values) {
    if (T < 2) throw InvalidInput("config: every T must be >= 2");
  }
  const bool has_dnn =
      std::find(c.estimators.begin(), c.estimators.end(), EstimatorKind::dnn) != c.estimators.end();
  if (has_dnn && c.lambdas.empty()) throw InvalidInput("config: lambda list is empty");
  for (double l : c.lambdas) {
    if (!(l >= 0.0)) throw InvalidInput("config: lambda must be >= 0");
  }
  if (c.repetitions == 0) throw InvalidInput("config: repetitions must be >= 1");
  if (c.jobs == 0) throw InvalidInput("config: jobs must be >= 1");
  if (c.n_sequences < 2) throw InvalidInput("config: n_sequences must be >= 2");
  if (!(c.split_fraction > 0.0 && c.split_fraction < 1.0)) {
    throw InvalidInput("config: split_fraction must lie in (0, 1)");
  }
  if (c.train.batch_size == 0) throw InvalidInput("config: batch_size must be >= 1");
}

std::string checkpoint_stem(std::size_t T, std::size_t n_s, std::size_t n_v, double lambda,
                            std::size_t rep) {
  return "ckpt_T" + std::to_string(T) + "_ns" + std::to_string(n_s) + "_nv" +
         std::to_string(n_v) + "_lam" + fmt_num(lambda) + "_rep" + std::to_string(rep);
}

namespace {

struct LoadedDataset {
  std::shared_ptr<const Timeline> timeline;
  GridModel grid;
  json meta;
};

LoadedDataset load_dataset(const RunConfig& c) {
  LoadedDataset d;
  auto tl = load_timeline(c.dataset_dir, &d.meta);
  if (d.meta.value("format", std::string{}) != kDatasetFormat) {
    throw InvalidInput(c.dataset_dir.string() + ": not a dataset written by `dsse generate`");
  }
  d.grid = parse_case(d.meta.at("case").dump(), c.dataset_dir.string() + "/meta.json case");
  if (d.grid.n_buses != tl->n_buses()) throw InvalidInput("dataset: case and timeline disagree");
  d.timeline = std::move(tl);
  return d;
}

SfseDataset make_dataset(const LoadedDataset& d, std::size_t T, std::size_t n_s, std::size_t n_v) {
  const auto& ds = d.meta.at("dataset");
  const std::size_t n = d.grid.n_buses;
  if (n_s > n || n_v > n) {
    throw InvalidInput("scenario n_s=" + std::to_string(n_s) + ", n_v=" + std::to_string(n_v) +
                       " exceeds the " + std::to_string(n) + "-bus case");
  }
  return build_dataset(d.timeline, T, ObservabilityMask::from_counts(n, n_s, n_v),
                       ds.at("n_sequences").get<std::size_t>(),
                       ds.at("split_fraction").get<double>(), d.meta.at("seed").get<std::uint64_t>(),
                       ds.at("train_time_fraction").get<double>());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path.string());
  out << text;
}

void echo_config(const RunConfig& c, const fs::path& dir, const std::string& command) {
  fs::create_directories(dir);
  json j = config_to_json(c);
  j["command"] = command;
  write_text(dir / ("config." + command + ".json"), j.dump(2) + "\n");
}

bool has_estimator(const RunConfig& c, EstimatorKind k) {
  return std::find(c.estimators.begin(), c.estimators.end(), k) != c.estimators.end();
}

}  // namespace

int cmd_generate(const RunConfig& c, std::ostream& out) {
  const GridModel grid = load_case(c.case_path);
  GenerationConfig gen = c.generation;
  gen.profiles.seed = c.seed;
  GenerationReport report;
  auto tl = std::make_shared<Timeline>(generate_timeline(grid, gen, &report));

  const auto probe = build_dataset(tl, 2, ObservabilityMask::full(grid.n_buses), c.n_sequences,
                                   c.split_fraction, c.seed, c.train_time_fraction);
  json meta = {{"format", kDatasetFormat},
               {"seed", c.seed},
               {"case", json::parse(case_to_json(grid))},
               {"generation", generation_to_json(gen)},
               {"dataset",
                {{"n_sequences", c.n_sequences},
                 {"split_fraction", c.split_fraction},
                 {"train_time_fraction", c.train_time_fraction}}},
               {"split_step", probe.split_step},
               {"n_train_sequences", probe.train_targets.size()},
               {"n_test_sequences", probe.test_targets.size()},
               {"scaler", probe.scaler.to_json()},
               {"max_pf_iterations", report.max_pf_iterations},
               {"max_pf_mismatch", report.max_pf_mismatch}};
  save_timeline(c.dataset_dir, *tl, meta);
  echo_config(c, c.output_dir, "generate");

  out << "dataset written to " << c.dataset_dir.string() << "\n"
      << "  buses: " << grid.n_buses << ", steps: " << tl->n_steps()
      << ", train/test split at step " << probe.split_step << "\n"
      << "  sequences: " << probe.train_targets.size() << " train / "
      << probe.test_targets.size() << " test\n"
      << "  power flow: max " << report.max_pf_iterations << " iterations, max mismatch "
      << report.max_pf_mismatch << " p.u.\n"
      << "  max PFE residual: " << timeline_max_residual(grid, *tl) << " p.u.\n";
  for (auto ns : c.n_s_values) {
    for (auto nv : c.n_v_values) {
      if (ns > grid.n_buses || nv > grid.n_buses) continue;
      out << "  observability n_s=" << ns << " n_v=" << nv << ": "
          << std::lround(100.0 * observability(ns, nv, grid.n_buses)) << "%\n";
    }
  }
  out << "  sha256: " << hash_directory(c.dataset_dir) << "\n";
  return kOk;
}

int cmd_train(const RunConfig& c, std::ostream& out) {
  if (!has_estimator(c, EstimatorKind::dnn)) {
    out << "no dnn estimator configured; nothing to train\n";
    return kOk;
  }
  const auto data = load_dataset(c);
  const fs::path ckpt_dir = c.output_dir / "checkpoints";
  fs::create_directories(ckpt_dir);
  echo_config(c, c.output_dir, "train");

  struct Unit {
    std::size_t T, n_s, n_v, rep;
    double lambda;
    std::string stem;
  };
  std::vector<Unit> units;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::shared_ptr<SfseDataset>> sets;
  std::size_t skipped = 0;
  for (auto T : c.T_values) {
    for (auto ns : c.n_s_values) {
      for (auto nv : c.n_v_values) {
        for (double lam : c.lambdas) {
          for (std::size_t r = 0; r < c.repetitions; ++r) {
            const auto stem = checkpoint_stem(T, ns, nv, lam, r);
            if (c.resume && fs::exists(ckpt_dir / (stem + ".json"))) {
              ++skipped;
              continue;
            }
            units.push_back({T, ns, nv, r, lam, stem});
            auto key = std::make_tuple(T, ns, nv);
            if (!sets.count(key)) {
              sets[key] = std::make_shared<SfseDataset>(make_dataset(data, T, ns, nv));
            }
          }
        }
      }
    }
  }

  std::vector<std::string> errors(units.size());
  std::mutex out_mutex;
  parallel_for(units.size(), c.jobs, [&](std::size_t i) {
    const auto& u = units[i];
    try {
      nn::TrainConfig tc = c.train;
      tc.lambda = u.lambda;
      tc.seed = c.seed + u.rep;
      const auto model = nn::train(*sets.at({u.T, u.n_s, u.n_v}), data.grid, tc);
      std::ostringstream curve;
      curve << "epoch,train_loss,validation_loss\n";
      for (std::size_t e = 0; e < model.training_curve.size(); ++e) {
        curve << e << ',' << fmt_num(model.training_curve[e]) << ','
              << (e < model.validation_curve.size() ? fmt_num(model.validation_curve[e]) : "")
              << '\n';
      }
      write_text(ckpt_dir / (u.stem + ".curve.csv"), curve.str());
      nn::save_checkpoint(ckpt_dir / (u.stem + ".json"), model);
      std::lock_guard lock(out_mutex);
      out << "trained " << u.stem << ": " << model.training_curve.size() << " epochs, best "
          << model.best_epoch << "\n";
    } catch (const std::exception& e) {
      errors[i] = e.what();
      std::lock_guard lock(out_mutex);
      out << "FAILED " << u.stem << ": " << e.what() << "\n";
    }
  });
  std::size_t failed = 0;
  for (const auto& e : errors) failed += !e.empty();
  out << units.size() - failed << " checkpoints written, " << skipped << " skipped (resume), "
      << failed << " failed\n";
  return failed ? kPartialFailure : kOk;
}

int cmd_evaluate(const RunConfig& c, std::ostream& out) {
  const auto data = load_dataset(c);
  fs::create_directories(c.output_dir);
  echo_config(c, c.output_dir, "evaluate");
  const fs::path ckpt_dir = c.output_dir / "checkpoints";
  const fs::path pred_dir = c.output_dir / "predictions";
  if (c.dump_predictions) fs::create_directories(pred_dir);

  EvaluationReport report;
  std::size_t failed_reps = 0;
  for (auto T : c.T_values) {
    for (auto ns : c.n_s_values) {
      for (auto nv : c.n_v_values) {
        const auto ds = make_dataset(data, T, ns, nv);
        std::vector<ScenarioSpec> specs;
        for (auto est : c.estimators) {
          ScenarioSpec s;
          s.T = T;
          s.n_s = ns;
          s.n_v = nv;
          s.estimator = est;
          s.seed = c.seed;
          // The baselines are deterministic: one repetition carries all the information.
          s.repetitions = est == EstimatorKind::dnn ? c.repetitions : 1;
          if (est == EstimatorKind::dnn) {
            for (double lam : c.lambdas) {
              s.lambda = lam;
              specs.push_back(s);
            }
          } else {
            specs.push_back(s);
          }
        }
        for (const auto& spec : specs) {
          EstimatorFactory factory;
          if (spec.estimator == EstimatorKind::dnn) {
            factory = [&, spec](std::size_t rep, std::uint64_t) -> Estimator {
              const auto path =
                  ckpt_dir / (checkpoint_stem(spec.T, spec.n_s, spec.n_v, spec.lambda, rep) + ".json");
              if (!fs::exists(path)) throw InvalidInput("missing checkpoint " + path.string());
              auto model = std::make_shared<nn::TrainedModel>(nn::load_checkpoint(path));
              if (model->T != spec.T || model->arch.n_s != spec.n_s || model->arch.n_v != spec.n_v) {
                throw InvalidInput("checkpoint " + path.string() + " does not match the scenario");
              }
              return [model](const SfseSequence& seq) { return nn::predict(*model, seq); };
            };
          } else {
            factory = default_factory(spec, ds, data.grid, c.train);
          }
          auto res = run_scenario(spec, ds, factory, c.dump_predictions, c.jobs);
          for (std::size_t r = 0; r < res.repetitions.size(); ++r) {
            if (!res.repetitions[r].ok) {
              ++failed_reps;
              out << "FAILED " << spec.id() << " rep " << r << ": " << res.repetitions[r].error
                  << "\n";
            }
          }
          if (c.dump_predictions) {
            write_predictions(pred_dir / (spec.id() + ".csv"), res.predictions);
          }
          const auto& row = res.row;
          out << row.scenario_id << ": O=" << row.observability_pct << "% mse_mag "
              << row.mse_mag_mean << " mse_ang " << row.mse_ang_mean << " (" << row.repetitions
              << " reps)\n";
          report.rows.push_back(res.row);
        }
      }
    }
  }
  report.write_csv(c.output_dir / "report.csv");
  out << "report written to " << (c.output_dir / "report.csv").string() << "\n";
  return failed_reps ? kPartialFailure : kOk;
}

int cmd_compare(const RunConfig& c, std::ostream& out) {
  auto inputs = c.reports;
  if (inputs.empty()) inputs.push_back(c.output_dir / "report.csv");
  std::vector<ReportRow> rows;
  for (const auto& p : inputs) {
    const auto rep = EvaluationReport::read_csv(p);
    rows.insert(rows.end(), rep.rows.begin(), rep.rows.end());
  }
  std::vector<ReportRow> kept;
  for (const auto& r : rows) {
    if (!has_estimator(c, r.estimator)) continue;
    if (r.estimator == EstimatorKind::dnn &&
        std::find(c.lambdas.begin(), c.lambdas.end(), r.lambda) == c.lambdas.end()) {
      continue;
    }
    if (std::find(c.T_values.begin(), c.T_values.end(), r.T) == c.T_values.end()) continue;
    kept.push_back(r);
  }
  compare_report(kept, c.output_dir);
  out << "comparison written to " << (c.output_dir / "compare.csv").string() << " (+ "
      << "compare_magnitude.svg, compare_angle.svg)\n";
  return kOk;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Distribution-grid state estimation: data generation, training and evaluation"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  bool desk = false, dump = false, resume = false;
  std::vector<std::string> reports;
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "master seed");
  app.add_option("--jobs", jobs, "worker threads");
  app.add_flag("--desk-scale", desk, "2000 train sequences and 5 repetitions");
  app.add_flag("--dump-predictions", dump, "write per-sequence predictions (evaluate)");
  app.add_flag("--resume", resume, "skip checkpoints that already exist (train)");
  app.add_option("--report", reports, "report CSV to compare (repeatable)");
  auto* gen = app.add_subcommand("generate", "synthesize profiles and solve the power-flow timeline");
  auto* trn = app.add_subcommand("train", "train one model per scenario and repetition");
  auto* evl = app.add_subcommand("evaluate", "score estimators on the test split");
  auto* cmp = app.add_subcommand("compare", "aligned CSV and SVG charts from reports");
  for (auto* sub : {gen, trn, evl, cmp}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << "error: " << e.what() << "\n" << app.help();
    return kInvalidInput;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      json j;
      try {
        j = json::parse(in);
      } catch (const json::parse_error& e) {
        throw InvalidInput(config_path + ": not valid JSON (" + e.what() + ")");
      }
      merge_config(cfg, j);
    }
    if (desk) apply_desk_scale(cfg);
    if (seed) cfg.seed = *seed;
    if (jobs) cfg.jobs = *jobs;
    if (dump) cfg.dump_predictions = true;
    if (resume) cfg.resume = true;
    if (!reports.empty()) cfg.reports.assign(reports.begin(), reports.end());
    validate(cfg);

    out << "resolved config:\n" << config_to_json(cfg).dump(2) << "\n";
    if (*gen) return cmd_generate(cfg, out);
    if (*trn) return cmd_train(cfg, out);
    if (*evl) return cmd_evaluate(cfg, out);
    return cmd_compare(cfg, out);
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kPartialFailure;
  }
}

}  // namespace dsse::cli
