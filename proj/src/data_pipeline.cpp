#include "dsse/data_pipeline.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "dsse/error.hpp"

namespace dsse {
namespace {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

// Morning and evening peaks on a small floor; hour in [0, 24).
double diurnal_shape(double hour) {
  auto bump = [](double h, double centre, double width) {
    double d = std::fabs(h - centre);
    d = std::min(d, 24.0 - d);
    return std::exp(-0.5 * (d / width) * (d / width));
  };
  return 0.6 * bump(hour, 7.5, 1.2) + 1.0 * bump(hour, 19.5, 2.0) + 0.3 * bump(hour, 13.0, 3.0);
}

double mean_diurnal_shape() {
  constexpr int kSamples = 24 * 60;
  double acc = 0.0;
  for (int i = 0; i < kSamples; ++i) acc += diurnal_shape(24.0 * i / kSamples);
  return acc / kSamples;
}

double pv_bell(double hour) {
  if (hour < 6.0 || hour >= 18.0) return 0.0;
  const double s = std::sin(std::numbers::pi * (hour - 6.0) / 12.0);
  return s * s;
}

// Reflecting random walk confined to [lo, hi].
class BoundedWalk {
 public:
  BoundedWalk(double lo, double hi, double step, double start)
      : lo_(lo), hi_(hi), step_(step), x_(start) {}
  template <typename Rng>
  double next(Rng& rng, std::normal_distribution<double>& nd) {
    if (step_ == 0.0 || hi_ <= lo_) return x_;
    x_ += step_ * nd(rng);
    for (int k = 0; k < 4 && (x_ < lo_ || x_ > hi_); ++k) {
      if (x_ > hi_) x_ = 2.0 * hi_ - x_;
      if (x_ < lo_) x_ = 2.0 * lo_ - x_;
    }
    x_ = std::clamp(x_, lo_, hi_);
    return x_;
  }

 private:
  double lo_, hi_, step_, x_;
};

}  // namespace

SourceProfiles synth_profiles(const LoadProfileConfig& c) {
  if (c.duration_steps == 0) throw InvalidInput("synth_profiles: zero duration");
  if (c.daily_period_steps == 0) throw InvalidInput("synth_profiles: zero daily period");
  if (c.n_households <= 0) throw InvalidInput("synth_profiles: need at least one household");
  if (c.noise_level < 0.0 || c.walk_amplitude < 0.0 || c.pv_peak < 0.0) {
    throw InvalidInput("synth_profiles: amplitudes must be non-negative");
  }

  const double period = static_cast<double>(c.daily_period_steps);
  const double steps_per_hour = period / 24.0;
  const double avg_shape = mean_diurnal_shape();
  SourceProfiles out;
  out.household.resize(static_cast<std::size_t>(c.n_households));

  for (int k = 0; k < c.n_households; ++k) {
    auto rng = make_rng(c.seed, 100 + static_cast<std::uint64_t>(k));
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    std::normal_distribution<double> nd(0.0, 1.0);
    const double scale = 0.7 + 0.6 * ud(rng);
    const double shift_h = -1.5 + 3.0 * ud(rng);
    const double amp = c.load_daily_amplitude * scale;
    const double mean_level = c.load_base * scale;
    // Crosses its full range in roughly an hour.
    BoundedWalk walk(-c.walk_amplitude, c.walk_amplitude,
                     c.walk_amplitude / std::sqrt(steps_per_hour), 0.0);

    auto& p = out.household[static_cast<std::size_t>(k)];
    p.resize(c.duration_steps);
    for (std::size_t t = 0; t < c.duration_steps; ++t) {
      const double phase = static_cast<double>(t % c.daily_period_steps) / period;
      double hour = 24.0 * phase + shift_h;
      hour -= 24.0 * std::floor(hour / 24.0);
      double x = mean_level + amp * (diurnal_shape(hour) - avg_shape);
      if (c.walk_amplitude > 0.0) x += walk.next(rng, nd);
      if (c.noise_level > 0.0) x += c.noise_level * nd(rng);
      p[t] = std::max(x, 1e-4);
    }
  }

  auto rng = make_rng(c.seed, 7);
  std::normal_distribution<double> nd(0.0, 1.0);
  BoundedWalk cloud(1.0 - c.pv_cloud_depth, 1.0,
                    c.pv_cloud_depth / std::sqrt(0.5 * steps_per_hour), 1.0);
  out.pv.resize(c.duration_steps);
  for (std::size_t t = 0; t < c.duration_steps; ++t) {
    const double hour = 24.0 * static_cast<double>(t % c.daily_period_steps) / period;
    const double attenuation = cloud.next(rng, nd);
    out.pv[t] = c.pv_peak * pv_bell(hour) * attenuation;
  }
  return out;
}

ComplexVec reactive_from_pf(std::span<const double> p, double power_factor) {
  if (!(power_factor > 0.0 && power_factor <= 1.0)) {
    throw InvalidInput("reactive_from_pf: power factor must lie in (0, 1]");
  }
  const double ratio = std::tan(std::acos(power_factor));
  ComplexVec out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = {p[i], p[i] * ratio};
  return out;
}

std::vector<double> smooth(std::span<const double> series, std::size_t window) {
  if (window == 0) throw InvalidInput("smooth: window must be >= 1");
  if (window > series.size()) throw InvalidInput("smooth: window longer than series");
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::size_t lo = i + 1 >= window ? i + 1 - window : 0;
    double acc = 0.0;
    for (std::size_t j = lo; j <= i; ++j) acc += series[j];
    out[i] = acc / static_cast<double>(i + 1 - lo);
  }
  return out;
}

std::vector<double> downsample(std::span<const double> series, std::size_t factor) {
  if (factor == 0) throw InvalidInput("downsample: factor must be >= 1");
  std::vector<double> out;
  out.reserve(series.size() / factor);
  for (std::size_t i = factor - 1; i < series.size(); i += factor) out.push_back(series[i]);
  return out;
}

std::size_t BusAssignment::n_load_buses() const {
  return static_cast<std::size_t>(
      std::count_if(load_household.begin(), load_household.end(), [](int h) { return h >= 0; }));
}

std::size_t BusAssignment::n_pv_buses() const {
  return static_cast<std::size_t>(std::count(pv_bus.begin(), pv_bus.end(), true));
}

BusAssignment make_assignment(const GridModel& grid, std::size_t n_load_buses,
                              std::size_t n_pv_buses, std::size_t n_households,
                              std::uint64_t seed) {
  if (grid.n_buses < 2) throw InvalidInput("make_assignment: grid has no PQ buses");
  const std::size_t n_pq = grid.n_buses - 1;
  if (n_load_buses > n_pq || n_pv_buses > n_pq) {
    throw InvalidInput("make_assignment: more assignments than non-slack buses");
  }
  if (n_load_buses > 0 && n_households == 0) {
    throw InvalidInput("make_assignment: no households to assign");
  }
  std::vector<std::size_t> pq;
  for (std::size_t i = 0; i < grid.n_buses; ++i) {
    if (i != grid.slack_index) pq.push_back(i);
  }
  auto rng = make_rng(seed, 11);
  BusAssignment a;
  a.load_household.assign(grid.n_buses, -1);
  a.pv_bus.assign(grid.n_buses, false);

  auto load_order = pq;
  std::shuffle(load_order.begin(), load_order.end(), rng);
  for (std::size_t k = 0; k < n_load_buses; ++k) {
    a.load_household[load_order[k]] = static_cast<int>(k % n_households);
  }
  auto pv_order = pq;
  std::shuffle(pv_order.begin(), pv_order.end(), rng);
  for (std::size_t k = 0; k < n_pv_buses; ++k) a.pv_bus[pv_order[k]] = true;
  return a;
}

std::vector<ComplexVec> assign_buses(const std::vector<ComplexVec>& household_phasors,
                                     const ComplexVec& pv_phasor, const BusAssignment& assignment,
                                     const GridModel& grid) {
  if (assignment.load_household.size() != grid.n_buses ||
      assignment.pv_bus.size() != grid.n_buses) {
    throw InvalidInput("assign_buses: assignment does not match the grid size");
  }
  if (assignment.load_household[grid.slack_index] >= 0 || assignment.pv_bus[grid.slack_index]) {
    throw InvalidInput("assign_buses: the slack bus cannot carry a load or PV profile");
  }
  const std::size_t len = pv_phasor.size();
  for (const auto& h : household_phasors) {
    if (h.size() != len) throw InvalidInput("assign_buses: series lengths differ");
  }
  std::vector<ComplexVec> demand(grid.n_buses, ComplexVec(len, Complex{}));
  for (std::size_t b = 0; b < grid.n_buses; ++b) {
    const int h = assignment.load_household[b];
    if (h >= 0) {
      if (static_cast<std::size_t>(h) >= household_phasors.size()) {
        throw InvalidInput("assign_buses: household index out of range");
      }
      const auto& src = household_phasors[static_cast<std::size_t>(h)];
      std::copy(src.begin(), src.end(), demand[b].begin());
    }
    if (assignment.pv_bus[b]) {
      for (std::size_t t = 0; t < len; ++t) demand[b][t] -= pv_phasor[t];
    }
  }
  return demand;
}

Timeline::Timeline(std::size_t n_buses, std::size_t n_steps)
    : n_buses_(n_buses), n_steps_(n_steps), s_(n_buses * n_steps), v_(n_buses * n_steps) {}

std::vector<double> Timeline::features(std::size_t t) const {
  std::vector<double> f(4 * n_buses_);
  const auto st = s(t);
  const auto vt = v(t);
  for (std::size_t i = 0; i < n_buses_; ++i) {
    f[2 * i] = st[i].real();
    f[2 * i + 1] = st[i].imag();
    f[2 * n_buses_ + 2 * i] = vt[i].real();
    f[2 * n_buses_ + 2 * i + 1] = vt[i].imag();
  }
  return f;
}

Timeline generate_timeline(const GridModel& grid, const GenerationConfig& cfg,
                           GenerationReport* report) {
  if (cfg.downsample_factor == 0 || cfg.smoothing_window == 0) {
    throw InvalidInput("generate_timeline: smoothing window and downsample factor must be >= 1");
  }
  if (!(cfg.power_factor_min > 0.0 && cfg.power_factor_min <= cfg.power_factor_max &&
        cfg.power_factor_max <= 1.0)) {
    throw InvalidInput("generate_timeline: power factor range must lie in (0, 1]");
  }
  LoadProfileConfig pc = cfg.profiles;
  pc.duration_steps -= pc.duration_steps % cfg.downsample_factor;
  if (pc.duration_steps == 0) throw InvalidInput("generate_timeline: duration shorter than one step");
  const SourceProfiles src = synth_profiles(pc);

  auto filter = [&](const std::vector<double>& x) {
    return downsample(smooth(x, cfg.smoothing_window), cfg.downsample_factor);
  };

  auto rng = make_rng(pc.seed, 23);
  std::uniform_real_distribution<double> pf_dist(cfg.power_factor_min, cfg.power_factor_max);
  std::vector<double> pfs;
  std::vector<ComplexVec> households;
  for (const auto& p : src.household) {
    pfs.push_back(cfg.power_factor_min == cfg.power_factor_max ? cfg.power_factor_min
                                                               : pf_dist(rng));
    households.push_back(reactive_from_pf(filter(p), pfs.back()));
  }
  const auto pv_p = filter(src.pv);
  ComplexVec pv(pv_p.begin(), pv_p.end());

  const BusAssignment assignment =
      make_assignment(grid, cfg.n_load_buses, cfg.n_pv_buses, households.size(), pc.seed);
  const auto demand = assign_buses(households, pv, assignment, grid);

  const std::size_t n_steps = pv.size();
  Timeline tl(grid.n_buses, n_steps);
  PowerFlowOptions opts = cfg.power_flow;
  int max_it = 0;
  double max_mis = 0.0;
  ComplexVec injections(grid.n_buses);
  for (std::size_t t = 0; t < n_steps; ++t) {
    for (std::size_t b = 0; b < grid.n_buses; ++b) injections[b] = -demand[b][t];
    injections[grid.slack_index] = Complex{};
    const PowerFlowSolution sol = solve_power_flow(grid, injections, opts);
    std::copy(sol.s.begin(), sol.s.end(), tl.s(t).begin());
    std::copy(sol.v.begin(), sol.v.end(), tl.v(t).begin());
    max_it = std::max(max_it, sol.iterations);
    max_mis = std::max(max_mis, sol.final_mismatch);
    if (cfg.warm_start) opts.initial_guess = sol.v;
  }
  if (report) {
    report->assignment = assignment;
    report->power_factors = pfs;
    report->max_pf_iterations = max_it;
    report->max_pf_mismatch = max_mis;
  }
  return tl;
}

double timeline_max_residual(const GridModel& grid, const Timeline& timeline) {
  double worst = 0.0;
  for (std::size_t t = 0; t < timeline.n_steps(); ++t) {
    worst = std::max(worst,
                     residual_inf_norm(pfe_residual(grid, timeline.s_vec(t), timeline.v_vec(t))));
  }
  return worst;
}

// ---------------------------------------------------------------------------

void Standardizer::fit(std::span<const double> rows, std::size_t n_features) {
  if (n_features == 0 || rows.empty() || rows.size() % n_features != 0) {
    throw InvalidInput("Standardizer::fit: data is empty or not a whole number of rows");
  }
  const std::size_t n_rows = rows.size() / n_features;
  mean_.assign(n_features, 0.0);
  std_.assign(n_features, 0.0);
  for (std::size_t r = 0; r < n_rows; ++r) {
    for (std::size_t f = 0; f < n_features; ++f) mean_[f] += rows[r * n_features + f];
  }
  for (auto& m : mean_) m /= static_cast<double>(n_rows);
  for (std::size_t r = 0; r < n_rows; ++r) {
    for (std::size_t f = 0; f < n_features; ++f) {
      const double d = rows[r * n_features + f] - mean_[f];
      std_[f] += d * d;
    }
  }
  for (auto& s : std_) s = std::max(std::sqrt(s / static_cast<double>(n_rows)), kStdFloor);
}

void Standardizer::check_range(std::size_t n, std::size_t offset) const {
  if (!fitted()) throw InvalidInput("Standardizer used before fit");
  if (offset + n > mean_.size()) throw InvalidInput("Standardizer: feature range out of bounds");
}

void Standardizer::apply(std::span<double> x, std::size_t offset) const {
  check_range(x.size(), offset);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (x[i] - mean_[offset + i]) / std_[offset + i];
}

void Standardizer::invert(std::span<double> x, std::size_t offset) const {
  check_range(x.size(), offset);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = x[i] * std_[offset + i] + mean_[offset + i];
}

nlohmann::json Standardizer::to_json() const { return {{"mean", mean_}, {"std", std_}}; }

Standardizer Standardizer::from_json(const nlohmann::json& j) {
  return from_moments(j.at("mean").get<std::vector<double>>(),
                      j.at("std").get<std::vector<double>>());
}

Standardizer Standardizer::from_moments(std::vector<double> mean, std::vector<double> stddev) {
  if (mean.size() != stddev.size() || mean.empty()) {
    throw InvalidInput("Standardizer: mean/std size mismatch");
  }
  for (double s : stddev) {
    if (!(s >= kStdFloor)) throw InvalidInput("Standardizer: std below floor");
  }
  Standardizer st;
  st.mean_ = std::move(mean);
  st.std_ = std::move(stddev);
  return st;
}

// ---------------------------------------------------------------------------

SfseSequence SfseDataset::sequence(std::size_t t) const {
  if (!timeline) throw InvalidInput("SfseDataset has no timeline");
  if (T < 2 || t + 1 < T || t >= timeline->n_steps()) {
    throw InvalidInput("SfseDataset::sequence: window out of range");
  }
  SfseSequence seq;
  seq.target_step = t;
  for (std::size_t tau = t + 1 - T; tau < t; ++tau) {
    seq.history_s.push_back(timeline->s_vec(tau));
    seq.history_v.push_back(timeline->v_vec(tau));
  }
  seq.true_s = timeline->s_vec(t);
  seq.true_v = timeline->v_vec(t);
  for (std::size_t b = 0; b < mask.n_buses(); ++b) {
    if (mask.power_observed[b]) seq.partial_s.push_back(seq.true_s[b]);
    if (mask.voltage_observed[b]) seq.partial_v.push_back(seq.true_v[b]);
  }
  return seq;
}

SfseDataset build_dataset(std::shared_ptr<const Timeline> timeline, std::size_t T,
                          const ObservabilityMask& mask, std::size_t n_sequences,
                          double split_fraction, std::uint64_t seed, double train_time_fraction) {
  if (!timeline) throw InvalidInput("build_dataset: no timeline");
  if (T < 2) throw InvalidInput("build_dataset: T must be >= 2");
  if (mask.n_buses() != timeline->n_buses()) {
    throw InvalidInput("build_dataset: mask size does not match the timeline");
  }
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw InvalidInput("build_dataset: split fraction must lie in (0, 1)");
  }
  const std::size_t L = timeline->n_steps();
  const auto split_step =
      static_cast<std::size_t>(std::floor(static_cast<double>(L) * train_time_fraction));
  const auto n_train =
      static_cast<std::size_t>(std::llround(split_fraction * static_cast<double>(n_sequences)));
  const std::size_t n_test = n_sequences - std::min(n_train, n_sequences);
  if (n_train == 0 || n_test == 0) throw InvalidInput("build_dataset: split leaves an empty side");
  if (split_step < T || L < split_step + T) {
    throw InvalidInput("build_dataset: timeline too short for windows of length T on both sides");
  }

  SfseDataset ds;
  ds.timeline = timeline;
  ds.T = T;
  ds.mask = mask;
  ds.split_step = split_step;
  ds.seed = seed;

  auto rng = make_rng(seed, 31);
  std::uniform_int_distribution<std::size_t> train_pick(T - 1, split_step - 1);
  std::uniform_int_distribution<std::size_t> test_pick(split_step + T - 1, L - 1);
  ds.train_targets.reserve(n_train);
  ds.test_targets.reserve(n_test);
  for (std::size_t i = 0; i < n_train; ++i) ds.train_targets.push_back(train_pick(rng));
  for (std::size_t i = 0; i < n_test; ++i) ds.test_targets.push_back(test_pick(rng));

  const std::size_t nf = 4 * timeline->n_buses();
  std::vector<double> rows;
  rows.reserve(split_step * nf);
  for (std::size_t t = 0; t < split_step; ++t) {
    const auto f = timeline->features(t);
    rows.insert(rows.end(), f.begin(), f.end());
  }
  ds.scaler.fit(rows, nf);
  return ds;
}

// ---------------------------------------------------------------------------

namespace {

void write_le_doubles(std::ofstream& out, std::span<const double> xs) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts not supported");
  out.write(reinterpret_cast<const char*>(xs.data()),
            static_cast<std::streamsize>(xs.size() * sizeof(double)));
}

std::vector<unsigned char> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void save_timeline(const std::filesystem::path& dir, const Timeline& timeline,
                   const nlohmann::json& meta) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "timeline.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + (dir / "timeline.bin").string());
    for (std::size_t t = 0; t < timeline.n_steps(); ++t) write_le_doubles(out, timeline.features(t));
  }
  nlohmann::json m = meta;
  m["n_buses"] = timeline.n_buses();
  m["n_steps"] = timeline.n_steps();
  m["layout"] = "step-major float64 rows: interleaved s (2N) then interleaved v (2N)";
  std::ofstream out(dir / "meta.json", std::ios::trunc);
  out << m.dump(2) << "\n";
}

std::shared_ptr<Timeline> load_timeline(const std::filesystem::path& dir, nlohmann::json* meta) {
  const auto meta_path = dir / "meta.json";
  std::ifstream in(meta_path);
  if (!in) throw InvalidInput("dataset directory lacks meta.json: " + dir.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidInput("meta.json is not valid JSON: " + std::string(e.what()));
  }
  const auto n = m.at("n_buses").get<std::size_t>();
  const auto steps = m.at("n_steps").get<std::size_t>();
  const auto bytes = read_file(dir / "timeline.bin");
  if (bytes.size() != steps * 4 * n * sizeof(double)) {
    throw InvalidInput("timeline.bin size does not match meta.json");
  }
  auto tl = std::make_shared<Timeline>(n, steps);
  std::vector<double> row(4 * n);
  for (std::size_t t = 0; t < steps; ++t) {
    std::memcpy(row.data(), bytes.data() + t * row.size() * sizeof(double),
                row.size() * sizeof(double));
    auto st = tl->s(t);
    auto vt = tl->v(t);
    for (std::size_t i = 0; i < n; ++i) {
      st[i] = {row[2 * i], row[2 * i + 1]};
      vt[i] = {row[2 * n + 2 * i], row[2 * n + 2 * i + 1]};
    }
  }
  if (meta) *meta = std::move(m);
  return tl;
}

std::string sha256_hex(std::span<const unsigned char> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return os.str();
}

std::string hash_directory(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<unsigned char> all;
  for (const auto& f : files) {
    const auto name = f.filename().string();
    all.insert(all.end(), name.begin(), name.end());
    const auto bytes = read_file(f);
    all.insert(all.end(), bytes.begin(), bytes.end());
  }
  return sha256_hex(all);
}

}  // namespace dsse
