#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "dsse/data_pipeline.hpp"
#include "dsse/error.hpp"
#include "support.hpp"

using namespace dsse;

namespace {

double variance(const std::vector<double>& x) {
  const double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double acc = 0.0;
  for (double v : x) acc += (v - m) * (v - m);
  return acc / static_cast<double>(x.size());
}

// Two simulated days on the four-bus feeder: 2880 one-minute steps.
GenerationConfig small_config(std::uint64_t seed) {
  GenerationConfig c;
  c.profiles.duration_steps = 2 * 86400;
  c.profiles.seed = seed;
  c.n_load_buses = 3;
  c.n_pv_buses = 2;
  return c;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("dsse_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("reactive power from the power factor") {
  const std::vector<double> p{1.0, 0.5};
  const auto s = reactive_from_pf(p, 0.96);
  // cos = 0.96 -> sin = 0.28
  CHECK(s[0].imag() == doctest::Approx(0.28 / 0.96).epsilon(1e-12));
  CHECK(s[0].imag() == doctest::Approx(0.29167).epsilon(1e-4));
  CHECK(s[1].imag() == doctest::Approx(0.5 * 0.28 / 0.96).epsilon(1e-12));
  CHECK(s[1].real() == 0.5);
  CHECK(reactive_from_pf(p, 1.0)[0].imag() == 0.0);
  CHECK_THROWS_AS(reactive_from_pf(p, 0.0), InvalidInput);
  CHECK_THROWS_AS(reactive_from_pf(p, 1.01), InvalidInput);
}

TEST_CASE("trailing moving average and downsampling") {
  const std::vector<double> x{2, 4, 6, 8};
  CHECK(smooth(x, 2) == std::vector<double>{2, 3, 5, 7});
  CHECK(smooth(x, 1) == x);
  CHECK(downsample(x, 2) == std::vector<double>{4, 8});
  CHECK(downsample(x, 1) == x);
  CHECK_THROWS_AS(smooth(x, 0), InvalidInput);
  CHECK_THROWS_AS(smooth(x, 5), InvalidInput);
  CHECK_THROWS_AS(downsample(x, 0), InvalidInput);

  std::vector<double> week(604800, 1.0);
  CHECK(downsample(smooth(week, 60), 60).size() == 10080);
}

TEST_CASE("60-sample averaging divides white-noise variance by about 60") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> x(600000);
  for (auto& v : x) v = nd(rng);
  const auto y = downsample(smooth(x, 60), 60);
  const double ratio = variance(x) / variance(y);
  CHECK(ratio > 48.0);
  CHECK(ratio < 72.0);
}

TEST_CASE("source profiles") {
  LoadProfileConfig c;
  c.duration_steps = 3 * 1440;
  c.daily_period_steps = 1440;
  c.n_households = 4;

  SUBCASE("deterministic in the seed") {
    const auto a = synth_profiles(c);
    const auto b = synth_profiles(c);
    CHECK(a.household == b.household);
    CHECK(a.pv == b.pv);
    c.seed = 2;
    CHECK(synth_profiles(c).household != a.household);
  }
  SUBCASE("periodic without noise and walk") {
    c.noise_level = 0.0;
    c.walk_amplitude = 0.0;
    c.pv_cloud_depth = 0.0;
    const auto p = synth_profiles(c);
    for (const auto& h : p.household) {
      for (std::size_t t = 0; t + 1440 < h.size(); t += 37) CHECK(h[t] == h[t + 1440]);
    }
    for (std::size_t t = 0; t + 1440 < p.pv.size(); t += 37) CHECK(p.pv[t] == p.pv[t + 1440]);
  }
  SUBCASE("PV is zero at night and non-negative") {
    const auto p = synth_profiles(c);
    for (std::size_t t = 0; t < p.pv.size(); ++t) {
      const double hour = 24.0 * static_cast<double>(t % 1440) / 1440.0;
      CHECK(p.pv[t] >= 0.0);
      if (hour < 5.5 || hour > 18.5) CHECK(p.pv[t] == 0.0);
    }
    CHECK(*std::max_element(p.pv.begin(), p.pv.end()) > 0.0);
    for (const auto& h : p.household) CHECK(*std::min_element(h.begin(), h.end()) > 0.0);
  }
  SUBCASE("bad configuration") {
    c.duration_steps = 0;
    CHECK_THROWS_AS(synth_profiles(c), InvalidInput);
  }
}

TEST_CASE("bus assignment") {
  const auto g = load_case(test::data_path("ieee37.json"));
  const auto a = make_assignment(g, 25, 18, 8, 3);
  CHECK(a.n_load_buses() == 25);
  CHECK(a.n_pv_buses() == 18);
  CHECK(a.load_household[g.slack_index] == -1);
  CHECK(!a.pv_bus[g.slack_index]);
  // Circular order over 8 households: 25 = 3 * 8 + 1.
  std::vector<int> count(8, 0);
  for (int h : a.load_household) {
    if (h >= 0) ++count[static_cast<std::size_t>(h)];
  }
  CHECK(count[0] == 4);
  for (std::size_t h = 1; h < 8; ++h) CHECK(count[h] == 3);
  CHECK(make_assignment(g, 25, 18, 8, 3).load_household == a.load_household);
  CHECK_THROWS_AS(make_assignment(g, 36, 0, 8, 3), InvalidInput);
}

TEST_CASE("assigned demand sums load and PV where both apply") {
  const auto g = load_case(test::data_path("case4_dist.json"));
  BusAssignment a;
  a.load_household = {-1, 0, 1, -1};
  a.pv_bus = {false, true, false, true};
  const std::vector<ComplexVec> hh{{{1.0, 0.1}, {2.0, 0.2}}, {{3.0, 0.3}, {4.0, 0.4}}};
  const ComplexVec pv{{0.5, 0.0}, {0.25, 0.0}};
  const auto d = assign_buses(hh, pv, a, g);
  CHECK(d[0] == ComplexVec{{0, 0}, {0, 0}});
  CHECK(d[1] == ComplexVec{{0.5, 0.1}, {1.75, 0.2}});
  CHECK(d[2] == hh[1]);
  CHECK(d[3] == ComplexVec{{-0.5, 0.0}, {-0.25, 0.0}});

  a.pv_bus[0] = true;
  CHECK_THROWS_AS(assign_buses(hh, pv, a, g), InvalidInput);
}

TEST_CASE("standardizer") {
  Standardizer st;
  CHECK_THROWS_AS(st.apply(std::span<double>{}), InvalidInput);
  const std::vector<double> col{1.0, 2.0, 3.0};
  st.fit(col, 1);
  std::vector<double> x = col;
  for (auto& v : x) st.apply({&v, 1});
  CHECK(x[0] == doctest::Approx(-1.2247).epsilon(1e-4));
  CHECK(x[1] == doctest::Approx(0.0));
  CHECK(x[2] == doctest::Approx(1.2247).epsilon(1e-4));
  CHECK(x[0] == doctest::Approx(-std::sqrt(1.5)).epsilon(1e-14));
  for (auto& v : x) st.invert({&v, 1});
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(x[i] - col[i]) < 1e-14);

  // A constant column maps to zero and does not divide by zero.
  st.fit(std::vector<double>{5.0, 5.0, 5.0}, 1);
  std::vector<double> c{5.0};
  st.apply(c);
  CHECK(c[0] == 0.0);

  // Offset addressing and JSON round trip.
  st.fit(std::vector<double>{0, 10, 2, 30}, 2);
  std::vector<double> tail{20.0};
  st.apply(tail, 1);
  CHECK(tail[0] == doctest::Approx(0.0));
  const auto back = Standardizer::from_json(st.to_json());
  CHECK(back.mean() == st.mean());
  CHECK(back.stddev() == st.stddev());
  CHECK_THROWS_AS(st.apply(tail, 2), InvalidInput);
  CHECK_THROWS_AS(Standardizer::from_moments({0.0}, {0.0}), InvalidInput);
}

TEST_CASE("generated timeline and windowed datasets") {
  const auto g = load_case(test::data_path("case4_dist.json"));
  GenerationReport rep;
  auto tl = std::make_shared<Timeline>(generate_timeline(g, small_config(5), &rep));
  CHECK(tl->n_steps() == 2880);
  CHECK(tl->n_buses() == 4);
  CHECK(timeline_max_residual(g, *tl) < 1e-8);
  CHECK(rep.max_pf_mismatch <= 1e-10);
  CHECK(rep.assignment.n_load_buses() == 3);
  for (double pf : rep.power_factors) {
    CHECK(pf >= 0.96);
    CHECK(pf <= 0.98);
  }
  // Slack voltage pinned, other buses move.
  for (std::size_t t = 0; t < tl->n_steps(); t += 97) CHECK(tl->v(t)[0] == Complex(1.0, 0.0));
  CHECK(tl->v(0)[3] != tl->v(700)[3]);

  SUBCASE("split sizes, window length and time separation") {
    const auto mask = ObservabilityMask::from_counts(4, 2, 1);
    const auto ds = build_dataset(tl, 5, mask, 9000, 0.9, 1);
    CHECK(ds.train_targets.size() == 8100);
    CHECK(ds.test_targets.size() == 900);
    CHECK(ds.split_step == 2880 * 6 / 7);
    for (auto t : ds.train_targets) {
      CHECK(t >= 4);
      CHECK(t < ds.split_step);
    }
    for (auto t : ds.test_targets) CHECK(t >= ds.split_step + 4);

    const auto seq = ds.sequence(ds.test_targets[0]);
    CHECK(seq.history_s.size() == 4);
    CHECK(seq.history_v.size() == 4);
    CHECK(seq.partial_s.size() == 2);
    CHECK(seq.partial_v.size() == 1);
    CHECK(seq.partial_s[1] == seq.true_s[1]);
    CHECK(seq.history_v.back() == tl->v_vec(seq.target_step - 1));
    CHECK(seq.history_s.front() == tl->s_vec(seq.target_step - 4));
    CHECK(seq.true_v == tl->v_vec(seq.target_step));

    const auto again = build_dataset(tl, 5, mask, 9000, 0.9, 1);
    CHECK(again.train_targets == ds.train_targets);
    CHECK(build_dataset(tl, 5, mask, 9000, 0.9, 2).train_targets != ds.train_targets);
  }
  SUBCASE("scaler is fitted on the training time range only") {
    const auto ds = build_dataset(tl, 5, ObservabilityMask::full(4), 100, 0.9, 1);
    std::vector<double> ref_mean(16, 0.0);
    for (std::size_t t = 0; t < ds.split_step; ++t) {
      const auto f = tl->features(t);
      for (std::size_t k = 0; k < 16; ++k) ref_mean[k] += f[k];
    }
    for (std::size_t k = 0; k < 16; ++k) {
      CHECK(ds.scaler.mean()[k] ==
            doctest::Approx(ref_mean[k] / static_cast<double>(ds.split_step)).epsilon(1e-12));
    }
  }
  SUBCASE("invalid dataset requests") {
    const auto mask = ObservabilityMask::full(4);
    CHECK_THROWS_AS(build_dataset(tl, 1, mask, 100, 0.9, 1), InvalidInput);
    CHECK_THROWS_AS(build_dataset(tl, 5, mask, 100, 1.0, 1), InvalidInput);
    CHECK_THROWS_AS(build_dataset(tl, 5, ObservabilityMask::full(3), 100, 0.9, 1), InvalidInput);
    CHECK_THROWS_AS(build_dataset(tl, 500, mask, 100, 0.9, 1), InvalidInput);
  }
}

TEST_CASE("generation is reproducible and the on-disk format round-trips") {
  const auto g = load_case(test::data_path("case4_dist.json"));
  const auto a = generate_timeline(g, small_config(9));
  const auto b = generate_timeline(g, small_config(9));
  for (std::size_t t = 0; t < a.n_steps(); ++t) REQUIRE(a.v_vec(t) == b.v_vec(t));

  const auto d1 = scratch_dir("a");
  const auto d2 = scratch_dir("b");
  const nlohmann::json meta{{"seed", 9}};
  save_timeline(d1, a, meta);
  save_timeline(d2, b, meta);
  CHECK(hash_directory(d1) == hash_directory(d2));
  CHECK(std::filesystem::file_size(d1 / "timeline.bin") == a.n_steps() * 16 * sizeof(double));

  nlohmann::json back_meta;
  const auto back = load_timeline(d1, &back_meta);
  CHECK(back_meta.at("seed") == 9);
  REQUIRE(back->n_steps() == a.n_steps());
  for (std::size_t t = 0; t < a.n_steps(); ++t) {
    REQUIRE(back->s_vec(t) == a.s_vec(t));
    REQUIRE(back->v_vec(t) == a.v_vec(t));
  }

  std::ofstream(d2 / "timeline.bin", std::ios::app) << 'x';
  CHECK(hash_directory(d1) != hash_directory(d2));
  CHECK_THROWS_AS(load_timeline(d2, nullptr), InvalidInput);
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
}

TEST_CASE("sha256 known answer") {
  const std::string abc = "abc";
  CHECK(sha256_hex({reinterpret_cast<const unsigned char*>(abc.data()), abc.size()}) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
