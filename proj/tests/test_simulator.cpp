#include <doctest.h>

#include <cmath>

#include "httpwatt/dataset.hpp"
#include "httpwatt/error.hpp"
#include "httpwatt/simulator.hpp"

using namespace httpwatt;
using namespace httpwatt::sim;

namespace {

TransferPlan single_class_plan(SizeClass c, int cc, int pp, int p) {
  TransferPlan plan;
  plan.channel_bound = cc;
  plan.active[index_of(c)] = true;
  plan[c] = {pp, p, cc};
  return plan;
}

Grouping equal_files(std::uint64_t size, int n, const NetworkProfile& net) {
  std::vector<FileEntry> files(n, {"f", size});
  return planner::group_files(files, net);
}

SimProfile wide_buffer() {
  SimProfile p;
  p.network.tcp_buffer = 1e8;  // window never limits a stream
  return p;
}

}  // namespace

TEST_CASE("one file on one stream") {
  const auto prof = wide_buffer();
  const auto g = equal_files(125'000'000, 1, prof.network);
  const auto out = simulate_transfer(single_class_plan(SizeClass::Large, 1, 1, 1), g, prof);
  CHECK(std::fabs(out.duration - (0.060 + 0.001 + 1.0)) < 1e-9);
  CHECK(out.energy == doctest::Approx((10 + 0.5) * out.duration).epsilon(1e-12));
}

TEST_CASE("pipelining removes one RTT per extra file") {
  const auto prof = wide_buffer();
  const int n = 10;
  const auto g = equal_files(100'000, n, prof.network);
  const auto serial = simulate_transfer(single_class_plan(SizeClass::Small, 1, 1, 1), g, prof);
  const auto piped = simulate_transfer(single_class_plan(SizeClass::Small, 1, n, 1), g, prof);
  CHECK(std::fabs((serial.duration - piped.duration) - (n - 1) * 0.060) < 1e-9);
}

TEST_CASE("doubling concurrency below saturation halves the duration") {
  SimProfile prof;  // 1 MB buffer: 133 Mbit/s per stream, four streams stay below 1 Gbit/s
  const auto g = equal_files(200'000'000, 8, prof.network);
  const auto two = simulate_transfer(single_class_plan(SizeClass::Large, 2, 1, 1), g, prof);
  const auto four = simulate_transfer(single_class_plan(SizeClass::Large, 4, 1, 1), g, prof);
  CHECK(std::fabs(two.duration / four.duration - 2.0) < 1e-9);
  const double e2 = (prof.idle_power + 2 * prof.per_channel_power) * two.duration;
  const double e4 = (prof.idle_power + 4 * prof.per_channel_power) * four.duration;
  CHECK(std::fabs(two.energy - e2) <= 1e-9 * e2);
  CHECK(std::fabs(four.energy - e4) <= 1e-9 * e4);
}

TEST_CASE("conservation, rate bound and energy identity") {
  SimProfile prof;
  prof.rtt_jitter = 0.3;
  prof.seed = 5;
  auto files = dataset::reference("mixed", 3);
  files.resize(120);
  const auto g = planner::group_files(files, prof.network);
  SimulatedSession s(g, prof);
  const auto out = sla::run_max_throughput(g, prof.network, 7, s);
  CHECK(s.completed_bytes() == g.total_bytes());
  CHECK(s.bytes_delivered() == doctest::Approx(static_cast<double>(g.total_bytes())));
  CHECK(s.peak_aggregate_rate() <= prof.network.bandwidth / 8 * (1 + 1e-12));
  CHECK(s.outstanding_within_pipelining());
  double e = 0;
  double prev_end = 0;
  for (const auto& seg : s.power_timeline()) {
    CHECK(seg.start == doctest::Approx(prev_end));
    prev_end = seg.end;
    e += seg.watts * (seg.end - seg.start);
  }
  CHECK(std::fabs(e - out.energy) <= 1e-9 * out.energy);
  for (double t : s.file_completion_times()) CHECK(t > 0);
}

TEST_CASE("replay is bit-identical") {
  SimProfile prof;
  prof.rtt_jitter = 0.25;
  prof.seed = 99;
  auto files = dataset::reference("mixed", 8);
  files.resize(80);
  const auto g = planner::group_files(files, prof.network);
  auto once = [&] {
    SimulatedSession s(g, prof);
    return sla::run_energy_efficiency(g, prof.network, 8, s);
  };
  const auto a = once();
  const auto b = once();
  CHECK(a.duration == b.duration);
  CHECK(a.energy == b.energy);
  CHECK(a.windows.size() == b.windows.size());
  for (std::size_t i = 0; i < a.windows.size(); ++i) CHECK(a.windows[i].bytes == b.windows[i].bytes);
  prof.seed = 100;
  SimulatedSession other(g, prof);
  CHECK(sla::run_energy_efficiency(g, prof.network, 8, other).duration != a.duration);
}

TEST_CASE("sweep: singleton, ordering and serial agreement") {
  SimProfile prof;
  auto files = dataset::reference("html");
  files.resize(1500);
  const auto g = planner::group_files(files, prof.network);
  SweepSpec one{{1}, {}, {}};
  const auto single = throughput_energy_sweep(g, prof, one);
  REQUIRE(single.size() == 1);
  SimulatedSession s(g, prof);
  const auto direct = sla::run_fixed_level(g, prof.network, 1, s);
  CHECK(single[0].energy == direct.energy);
  CHECK(single[0].duration == direct.duration);

  SweepSpec spec{{9, 3, 1, 6}, {}, {}};
  const auto par = throughput_energy_sweep(g, prof, spec);
  const auto ser = throughput_energy_sweep_serial(g, prof, spec);
  REQUIRE(par.size() == 4);
  CHECK(par[0].concurrency == 1);
  CHECK(par[3].concurrency == 9);
  for (std::size_t i = 0; i < par.size(); ++i) {
    CHECK(par[i].energy == ser[i].energy);
    CHECK(par[i].throughput == ser[i].throughput);
    CHECK(par[i].ratio == doctest::Approx(par[i].throughput * par[i].duration / par[i].energy));
  }
  const auto csv = sweep_to_csv(par, "html");
  CHECK(csv.rfind("# html\nconcurrency,throughput_bps,energy_j,ratio\n1,", 0) == 0);

  SweepSpec empty;
  CHECK_THROWS_AS(throughput_energy_sweep(g, prof, empty), Error);
}

TEST_CASE("parallelism does not speed up files within one buffer") {
  SimProfile prof;
  const auto g = equal_files(800'000, 200, prof.network);
  const auto one = simulate_transfer(single_class_plan(SizeClass::Medium, 2, 1, 1), g, prof);
  for (int p = 2; p <= 6; ++p) {
    const auto many = simulate_transfer(single_class_plan(SizeClass::Medium, 2, 1, p), g, prof);
    CHECK(many.duration >= one.duration);
    CHECK(many.energy > one.energy);
  }
}

TEST_CASE("parallelism helps files far above one buffer") {
  SimProfile prof;
  const auto g = equal_files(50'000'000, 4, prof.network);
  const auto one = simulate_transfer(single_class_plan(SizeClass::Large, 1, 1, 1), g, prof);
  const auto four = simulate_transfer(single_class_plan(SizeClass::Large, 1, 1, 4), g, prof);
  CHECK(four.duration < one.duration / 3);
}

TEST_CASE("channel churn never exceeds the bound") {
  SimProfile prof;
  auto files = dataset::reference("mixed", 4);
  files.resize(150);
  const auto g = planner::group_files(files, prof.network);
  for (int bound : {1, 2, 5, 11}) {
    SimulatedSession s(g, prof);
    sla::run_flexible_throughput(g, prof.network, 9e8, bound, s);
    CHECK(s.max_live_channels() <= bound);
  }
}

TEST_CASE("profile JSON") {
  SimProfile p;
  p.network.rtt = 0.24;
  p.rtt_jitter = 0.1;
  p.seed = 42;
  const auto back = profile_from_json(profile_to_json(p));
  CHECK(back.network.rtt == 0.24);
  CHECK(back.seed == 42);
  CHECK(back.per_request_overhead == p.per_request_overhead);
  CHECK_THROWS_AS(profile_from_json("{\"rtt_s\": -1}"), Error);
  CHECK_THROWS_AS(profile_from_json("not json"), Error);
}

TEST_CASE("sizes must be known") {
  Grouping g;
  g.unknown_size.push_back("http://x/a");
  CHECK_THROWS_AS(SimulatedSession(g, SimProfile{}), Error);
}
