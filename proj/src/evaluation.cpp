#include "dsse/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "dsse/error.hpp"
#include "dsse/parallel.hpp"

namespace dsse {

std::string_view estimator_name(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::dnn: return "dnn";
    case EstimatorKind::wls: return "wls";
    case EstimatorKind::persistence: return "persistence";
  }
  return "?";
}

EstimatorKind parse_estimator(std::string_view name) {
  if (name == "dnn") return EstimatorKind::dnn;
  if (name == "wls") return EstimatorKind::wls;
  if (name == "persistence") return EstimatorKind::persistence;
  throw InvalidInput("unknown estimator '" + std::string(name) +
                     "' (expected dnn, wls or persistence)");
}

ComplexVec persistence_estimate(const SfseSequence& seq) {
  if (seq.history_v.empty()) throw InvalidInput("persistence_estimate: empty history");
  return seq.history_v.back();
}

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(a, two_pi);
  if (r > std::numbers::pi) r -= two_pi;
  if (r <= -std::numbers::pi) r += two_pi;
  return r;
}

void PolarSums::add(const ComplexVec& est, const ComplexVec& truth) {
  if (est.size() != truth.size()) throw InvalidInput("polar_mse: length mismatch");
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double dm = std::abs(est[i]) - std::abs(truth[i]);
    mag += dm * dm;
    ++mag_terms;
    if (std::abs(truth[i]) == 0.0) {
      ++skipped;
      continue;
    }
    const double da = wrap_angle(std::arg(est[i]) - std::arg(truth[i]));
    ang += da * da;
    ++ang_terms;
  }
  if (skipped) {
    std::clog << "warning: polar_mse: " << skipped
              << " bus(es) with zero true magnitude left out of the angle error\n";
  }
}

PolarMse PolarSums::mean() const {
  PolarMse m;
  m.mag_terms = mag_terms;
  m.ang_terms = ang_terms;
  m.mag = mag_terms ? mag / static_cast<double>(mag_terms) : 0.0;
  m.ang = ang_terms ? ang / static_cast<double>(ang_terms) : 0.0;
  return m;
}

PolarMse polar_mse(const ComplexVec& est, const ComplexVec& truth) {
  PolarSums s;
  s.add(est, truth);
  return s.mean();
}

namespace {

std::string num(double x) {
  if (std::isnan(x)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(' ');
    const auto e = s.find_last_not_of(' ');
    s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
  }
  return out;
}

}  // namespace

std::string ScenarioSpec::id() const {
  std::string s = "T" + std::to_string(T) + "_ns" + std::to_string(n_s) + "_nv" +
                  std::to_string(n_v) + "_" + std::string(estimator_name(estimator));
  if (estimator == EstimatorKind::dnn) s += "_lam" + num(lambda);
  return s;
}

const std::vector<std::string>& EvaluationReport::columns() {
  static const std::vector<std::string> cols = {
      "scenario_id", "estimator",    "T",           "n_s",         "n_v",
      "lambda",      "observability_pct", "mse_mag_mean", "mse_mag_std", "mse_ang_mean",
      "mse_ang_std", "repetitions",  "runtime_s"};
  return cols;
}

std::string EvaluationReport::to_csv() const {
  std::ostringstream os;
  const auto& cols = columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  for (const auto& r : rows) {
    os << r.scenario_id << ',' << estimator_name(r.estimator) << ',' << r.T << ',' << r.n_s << ','
       << r.n_v << ',' << num(r.lambda) << ',' << r.observability_pct << ','
       << num(r.mse_mag_mean) << ',' << num(r.mse_mag_std) << ',' << num(r.mse_ang_mean) << ','
       << num(r.mse_ang_std) << ',' << r.repetitions << ',' << num(r.runtime_s) << '\n';
  }
  return os.str();
}

void EvaluationReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write report " + path.string());
  out << to_csv();
}

EvaluationReport EvaluationReport::parse_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != columns()) {
    throw InvalidInput(source + ": header does not match the report columns");
  }
  EvaluationReport rep;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    const std::string where = source + ":" + std::to_string(lineno);
    if (f.size() != columns().size()) throw InvalidInput(where + ": wrong number of fields");
    try {
      ReportRow r;
      r.scenario_id = f[0];
      r.estimator = parse_estimator(f[1]);
      r.T = std::stoul(f[2]);
      r.n_s = std::stoul(f[3]);
      r.n_v = std::stoul(f[4]);
      r.lambda = std::stod(f[5]);
      r.observability_pct = std::stoi(f[6]);
      r.mse_mag_mean = std::stod(f[7]);
      r.mse_mag_std = std::stod(f[8]);
      r.mse_ang_mean = std::stod(f[9]);
      r.mse_ang_std = std::stod(f[10]);
      r.repetitions = std::stoul(f[11]);
      r.runtime_s = std::stod(f[12]);
      rep.rows.push_back(r);
    } catch (const std::logic_error&) {
      throw InvalidInput(where + ": malformed number");
    }
  }
  return rep;
}

EvaluationReport EvaluationReport::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open report " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), path.string());
}

ScenarioResult run_scenario(const ScenarioSpec& spec, const SfseDataset& ds,
                            const EstimatorFactory& factory, bool keep_predictions,
                            std::size_t jobs) {
  if (spec.repetitions == 0) throw InvalidInput("run_scenario: repetitions must be >= 1");
  if (!ds.timeline) throw InvalidInput("run_scenario: dataset has no timeline");
  if (ds.T != spec.T || ds.mask.n_s() != spec.n_s || ds.mask.n_v() != spec.n_v) {
    throw InvalidInput("run_scenario: dataset does not match scenario " + spec.id());
  }
  const std::size_t n = ds.timeline->n_buses();
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<SfseSequence> test;
  test.reserve(ds.test_targets.size());
  for (auto t : ds.test_targets) test.push_back(ds.sequence(t));

  ScenarioResult res;
  res.repetitions.resize(spec.repetitions);
  std::vector<std::vector<PredictionRecord>> preds(spec.repetitions);
  parallel_for(spec.repetitions, jobs, [&](std::size_t rep) {
    auto& out = res.repetitions[rep];
    try {
      const auto est = factory(rep, spec.seed + rep);
      PolarSums sums;
      for (const auto& seq : test) {
        auto v = est(seq);
        check_phasors(v, n, "estimate");
        sums.add(v, seq.true_v);
        if (keep_predictions) preds[rep].push_back({rep, seq.target_step, std::move(v), seq.true_v});
      }
      out.mse = sums.mean();
      out.ok = true;
    } catch (const std::exception& e) {
      out.ok = false;
      out.error = e.what();
      preds[rep].clear();
    }
  });
  for (auto& p : preds) {
    for (auto& r : p) res.predictions.push_back(std::move(r));
  }

  auto& row = res.row;
  row.scenario_id = spec.id();
  row.estimator = spec.estimator;
  row.T = spec.T;
  row.n_s = spec.n_s;
  row.n_v = spec.n_v;
  row.lambda = spec.estimator == EstimatorKind::dnn ? spec.lambda : 0.0;
  row.observability_pct =
      static_cast<int>(std::lround(100.0 * observability(spec.n_s, spec.n_v, n)));
  std::vector<double> mags, angs;
  for (const auto& r : res.repetitions) {
    if (!r.ok) continue;
    mags.push_back(r.mse.mag);
    angs.push_back(r.mse.ang);
  }
  auto mean_std = [](const std::vector<double>& x, double& m, double& s) {
    if (x.empty()) {
      m = s = std::nan("");
      return;
    }
    // Shifted by the first value so identical repetitions give exactly zero.
    double d = 0.0;
    for (double v : x) d += v - x.front();
    d /= static_cast<double>(x.size());
    m = x.front() + d;
    s = 0.0;
    for (double v : x) s += (v - x.front() - d) * (v - x.front() - d);
    s = std::sqrt(s / static_cast<double>(x.size()));
  };
  mean_std(mags, row.mse_mag_mean, row.mse_mag_std);
  mean_std(angs, row.mse_ang_mean, row.mse_ang_std);
  row.repetitions = mags.size();
  row.runtime_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

EstimatorFactory default_factory(const ScenarioSpec& spec, const SfseDataset& ds,
                                 const GridModel& grid, const nn::TrainConfig& base) {
  switch (spec.estimator) {
    case EstimatorKind::persistence:
      return [](std::size_t, std::uint64_t) -> Estimator { return persistence_estimate; };
    case EstimatorKind::wls: {
      const ObservabilityMask mask = ds.mask;
      return [grid, mask](std::size_t, std::uint64_t) -> Estimator {
        return [grid, mask](const SfseSequence& seq) { return wls_estimate(seq, grid, mask).v; };
      };
    }
    case EstimatorKind::dnn:
      break;
  }
  const double lambda = spec.lambda;
  return [&ds, grid, base, lambda](std::size_t, std::uint64_t seed) -> Estimator {
    nn::TrainConfig cfg = base;
    cfg.lambda = lambda;
    cfg.seed = seed;
    auto model = std::make_shared<nn::TrainedModel>(nn::train(ds, grid, cfg));
    return [model](const SfseSequence& seq) { return nn::predict(*model, seq); };
  };
}

namespace {

struct Series {
  std::string name;
  std::map<int, const ReportRow*> points;  // observability -> row
};

std::string svg_chart(const std::vector<Series>& series, const std::vector<int>& xs, bool angle) {
  const double W = 640, H = 400, ml = 80, mr = 180, mt = 40, mb = 50;
  const double pw = W - ml - mr, ph = H - mt - mb;
  auto value = [angle](const ReportRow* r) { return angle ? r->mse_ang_mean : r->mse_mag_mean; };

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  bool all_positive = true;
  for (const auto& s : series) {
    for (const auto& [x, r] : s.points) {
      const double v = value(r);
      if (!std::isfinite(v)) continue;
      if (v <= 0.0) all_positive = false;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  const bool log_y = all_positive;
  auto ty = [&](double v) { return log_y ? std::log10(v) : v; };
  double y0 = ty(lo), y1 = ty(hi);
  if (log_y) {
    y0 = std::floor(y0);
    y1 = std::ceil(y1);
  }
  if (y1 - y0 < 1e-12) y1 = y0 + 1.0;
  const double x0 = xs.front(), x1 = xs.size() > 1 ? xs.back() : xs.front() + 1.0;
  auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double v) { return mt + ph - (ty(v) - y0) / (y1 - y0) * ph; };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                 "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << ml + pw / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
     << (angle ? "Voltage angle MSE [rad^2]" : "Voltage magnitude MSE [p.u.^2]") << "</text>\n";
  os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int x : xs) {
    os << "<text x=\"" << num(px(x)) << "\" y=\"" << mt + ph + 18
       << "\" text-anchor=\"middle\">" << x << "%</text>\n";
  }
  os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << H - 10
     << "\" text-anchor=\"middle\">observability</text>\n";
  const int ticks = log_y ? static_cast<int>(y1 - y0) : 4;
  for (int i = 0; i <= ticks; ++i) {
    const double t = y0 + (y1 - y0) * i / ticks;
    const double yy = mt + ph - (t - y0) / (y1 - y0) * ph;
    char label[32];
    if (log_y) std::snprintf(label, sizeof label, "1e%d", static_cast<int>(std::lround(t)));
    else std::snprintf(label, sizeof label, "%.3g", t);
    os << "<line x1=\"" << ml - 4 << "\" y1=\"" << num(yy) << "\" x2=\"" << ml << "\" y2=\""
       << num(yy) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << ml - 8 << "\" y=\"" << num(yy + 4) << "\" text-anchor=\"end\">" << label
       << "</text>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* col = colors[k % 8];
    std::ostringstream pts;
    for (const auto& [x, r] : series[k].points) {
      const double v = value(r);
      if (!std::isfinite(v) || (log_y && v <= 0.0)) continue;
      pts << num(px(x)) << ',' << num(py(v)) << ' ';
      os << "<circle cx=\"" << num(px(x)) << "\" cy=\"" << num(py(v)) << "\" r=\"3\" fill=\"" << col
         << "\"/>\n";
    }
    os << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\""
       << pts.str() << "\"/>\n";
    const double ly = mt + 10 + 18.0 * static_cast<double>(k);
    os << "<line x1=\"" << ml + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << ml + pw + 30
       << "\" y2=\"" << ly << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << ml + pw + 36 << "\" y=\"" << ly + 4 << "\">" << series[k].name
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace

void compare_report(const std::vector<ReportRow>& rows, const std::filesystem::path& out_dir,
                    const std::string& stem) {
  std::set<std::size_t> Ts;
  for (const auto& r : rows) Ts.insert(r.T);
  std::map<std::string, Series> by_name;
  std::vector<std::string> order;
  for (const auto& r : rows) {
    std::string name(estimator_name(r.estimator));
    if (r.estimator == EstimatorKind::dnn) name += "_lam" + num(r.lambda);
    if (Ts.size() > 1) name += "_T" + std::to_string(r.T);
    auto [it, inserted] = by_name.try_emplace(name);
    if (inserted) {
      it->second.name = name;
      order.push_back(name);
    }
    if (!it->second.points.emplace(r.observability_pct, &r).second) {
      throw InvalidInput("compare: series " + name + " has two rows at observability " +
                         std::to_string(r.observability_pct) + "%");
    }
  }
  if (by_name.size() < 2) throw InvalidInput("compare: need at least two series to compare");
  std::vector<Series> series;
  for (const auto& name : order) series.push_back(by_name.at(name));
  std::vector<int> xs;
  for (const auto& [x, r] : series.front().points) xs.push_back(x);
  for (const auto& s : series) {
    std::vector<int> other;
    for (const auto& [x, r] : s.points) other.push_back(x);
    if (other != xs) {
      throw InvalidInput("compare: series " + s.name + " and " + series.front().name +
                         " are not on the same observability axis");
    }
  }

  std::filesystem::create_directories(out_dir);
  std::ostringstream csv;
  csv << "observability_pct";
  for (const auto& s : series) csv << ',' << s.name << "_mse_mag," << s.name << "_mse_ang";
  csv << '\n';
  for (int x : xs) {
    csv << x;
    for (const auto& s : series) {
      const auto* r = s.points.at(x);
      csv << ',' << num(r->mse_mag_mean) << ',' << num(r->mse_ang_mean);
    }
    csv << '\n';
  }
  auto write = [&](const std::string& file, const std::string& text) {
    std::ofstream out(out_dir / file, std::ios::binary);
    if (!out) throw InvalidInput("cannot write " + (out_dir / file).string());
    out << text;
  };
  write(stem + ".csv", csv.str());
  write(stem + "_magnitude.svg", svg_chart(series, xs, false));
  write(stem + "_angle.svg", svg_chart(series, xs, true));
}

void write_predictions(const std::filesystem::path& path,
                       const std::vector<PredictionRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write predictions " + path.string());
  out << "repetition,target_step,bus,est_re,est_im,true_re,true_im\n";
  char buf[256];
  for (const auto& r : records) {
    for (std::size_t b = 0; b < r.estimate.size(); ++b) {
      std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.17g,%.17g,%.17g,%.17g\n", r.repetition,
                    r.target_step, b, r.estimate[b].real(), r.estimate[b].imag(),
                    r.truth[b].real(), r.truth[b].imag());
      out << buf;
    }
  }
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open predictions " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<PredictionRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 7) throw InvalidInput(path.string() + ": malformed prediction row");
    const std::size_t rep = std::stoul(f[0]), step = std::stoul(f[1]), bus = std::stoul(f[2]);
    if (bus == 0) out.push_back({rep, step, {}, {}});
    if (out.empty() || out.back().repetition != rep || out.back().target_step != step ||
        out.back().estimate.size() != bus) {
      throw InvalidInput(path.string() + ": prediction rows out of order");
    }
    out.back().estimate.emplace_back(std::stod(f[3]), std::stod(f[4]));
    out.back().truth.emplace_back(std::stod(f[5]), std::stod(f[6]));
  }
  return out;
}

}  // namespace dsse
