#include <doctest.h>

#include <algorithm>
#include <set>

#include "httpwatt/error.hpp"
#include "httpwatt/planner.hpp"
#include "httpwatt/simulator.hpp"
#include "httpwatt/sla.hpp"
#include "support/fake_session.hpp"
#include "support/oracles.hpp"

using namespace httpwatt;
using namespace httpwatt::sla;

namespace {

const NetworkProfile kTestbed{1e9, 0.060, 1e6};

Grouping three_groups(int small = 40, int medium = 10, int large = 2) {
  std::vector<FileEntry> files;
  for (int i = 0; i < small; ++i) files.push_back({"s" + std::to_string(i), 102'000});
  for (int i = 0; i < medium; ++i) files.push_back({"m" + std::to_string(i), 2'400'000});
  for (int i = 0; i < large; ++i) files.push_back({"l" + std::to_string(i), 222'000'000});
  return planner::group_files(files, kTestbed);
}

Grouping one_class(std::uint64_t size, int count) {
  std::vector<FileEntry> files(count, {"f", size});
  return planner::group_files(files, kTestbed);
}

std::array<int, 3> cc_of(const TransferPlan& p) {
  return {p[SizeClass::Small].concurrency, p[SizeClass::Medium].concurrency, p[SizeClass::Large].concurrency};
}

}  // namespace

TEST_CASE("mode names") {
  for (auto m : {Mode::MinEnergy, Mode::MaxThroughput, Mode::EnergyEfficiency, Mode::FlexibleThroughput}) {
    CHECK(parse_mode(mode_name(m)) == m);
  }
  CHECK_THROWS_AS(parse_mode("fastest"), Error);
}

TEST_CASE("request validation") {
  SlaRequest r;
  r.mode = Mode::FlexibleThroughput;
  r.max_channels = 8;
  r.target_fraction = 0.5;
  CHECK_THROWS_AS(r.validate(), Error);
  r.reference_throughput = 1e9;
  CHECK_NOTHROW(r.validate());
  CHECK(r.target_throughput() == 5e8);
  r.target_fraction = 1.5;
  CHECK_THROWS_AS(r.validate(), Error);
}

TEST_CASE("min-energy plan on the reference trio") {
  const auto g = three_groups();
  const auto p = plan_min_energy(g, kTestbed, 8);
  CHECK(cc_of(p) == std::array<int, 3>{5, 2, 1});
  CHECK(p[SizeClass::Small].pipelining == 32);
  CHECK(p[SizeClass::Medium].pipelining == 4);
  CHECK(p[SizeClass::Large].pipelining == 1);
  CHECK(p[SizeClass::Small].parallelism == 1);
  CHECK(p[SizeClass::Medium].parallelism == 3);
  CHECK(p[SizeClass::Large].parallelism == 8);
  CHECK(p.ledger() == std::vector<SizeClass>{SizeClass::Small, SizeClass::Small, SizeClass::Small, SizeClass::Small,
                                             SizeClass::Small, SizeClass::Medium, SizeClass::Medium,
                                             SizeClass::Large});

  CHECK(cc_of(plan_min_energy(g, kTestbed, 1)) == std::array<int, 3>{1, 0, 0});
  const auto no_medium = three_groups(40, 0, 2);
  CHECK(cc_of(plan_min_energy(no_medium, kTestbed, 8)) == std::array<int, 3>{5, 0, 1});
}

TEST_CASE("min-energy plan matches the grant-loop oracle") {
  const auto g = three_groups();
  for (int n = 1; n <= 64; ++n) {
    const auto p = plan_min_energy(g, kTestbed, n);
    const auto t = oracle::min_energy_trace({102e3, 2.4e6, 222e6}, {true, true, true}, 7.5e6, 1e6, n);
    CHECK(cc_of(p) == t.concurrency);
    CHECK(p.granted() <= n);
  }
}

TEST_CASE("max-throughput rotation") {
  const auto g = three_groups();
  CHECK(cc_of(plan_max_throughput(g, kTestbed, 8)) == std::array<int, 3>{2, 3, 3});
  CHECK(cc_of(plan_max_throughput(g, kTestbed, 3)) == std::array<int, 3>{1, 1, 1});
  const auto no_large = three_groups(40, 10, 0);
  CHECK(cc_of(plan_max_throughput(no_large, kTestbed, 4)) == std::array<int, 3>{2, 2, 0});
}

TEST_CASE("redistribution on completion") {
  const auto g = three_groups();
  auto p = plan_max_throughput(g, kTestbed, 8);
  p[SizeClass::Small].concurrency = 2;
  auto q = redistribute_on_completion(p, SizeClass::Small);
  CHECK(cc_of(q) == std::array<int, 3>{0, 4, 4});
  CHECK_FALSE(q.active[0]);
  auto r = redistribute_on_completion(q, SizeClass::Large);
  CHECK(cc_of(r) == std::array<int, 3>{0, 8, 0});
  try {
    redistribute_on_completion(r, SizeClass::Medium);
    FAIL("expected NoActiveGroups");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NoActiveGroups);
  }
}

TEST_CASE("probe schedule") {
  CHECK(probe_levels(16) == std::vector<int>{1, 4, 8, 12, 16});
  CHECK(probe_levels(1) == std::vector<int>{1});
  CHECK(probe_levels(4) == std::vector<int>{1, 4});
  CHECK(probe_levels(10) == std::vector<int>{1, 4, 8, 10});
  CHECK(probe_levels(32).size() == 9);
}

TEST_CASE("plan bound is enforced") {
  TransferPlan p;
  p.channel_bound = 2;
  p.active = {true, true, false};
  p[SizeClass::Small].concurrency = 2;
  p[SizeClass::Medium].concurrency = 1;
  CHECK_THROWS_AS(p.check(), Error);
  p[SizeClass::Medium].concurrency = 0;
  p[SizeClass::Large].concurrency = 0;
  CHECK_NOTHROW(p.check());
  p.active[0] = false;
  CHECK_THROWS_AS(p.check(), Error);
}

TEST_CASE("flexible: ratio jump then hold") {
  const auto g = one_class(100'000, 40'000);  // 4 GB
  FluidSession s(g, 25e6);
  const auto out = run_flexible_throughput(g, kTestbed, 100e6, 16, s);
  REQUIRE(out.level_trace.size() >= 2);
  CHECK(out.level_trace[0].second == 1);
  CHECK(out.level_trace[1].second == 4);
  CHECK(out.level_trace.size() == 2);
  CHECK(out.final_concurrency == 4);
  CHECK_FALSE(out.target_unreachable);
}

TEST_CASE("flexible: already fast enough") {
  const auto g = one_class(100'000, 4'000);
  FluidSession s(g, 50e6);
  const auto out = run_flexible_throughput(g, kTestbed, 20e6, 16, s);
  CHECK(out.level_trace.size() == 1);
  CHECK(out.final_concurrency == 1);
  CHECK(out.history.size() == 1);
}

TEST_CASE("flexible: a capped jump flags an unreachable target") {
  const auto g = one_class(100'000, 30'000);
  FluidSession s(g, 10e6);
  const auto out = run_flexible_throughput(g, kTestbed, 100e6, 6, s);
  std::vector<int> levels;
  for (const auto& [t, l] : out.level_trace) levels.push_back(l);
  CHECK(levels == std::vector<int>{1, 6});
  CHECK(out.target_unreachable);
  CHECK(out.final_concurrency == 6);

  FluidSession s2(g, 10e6);
  const auto out2 = run_flexible_throughput(g, kTestbed, 35e6, 16, s2);
  levels.clear();
  for (const auto& [t, l] : out2.level_trace) levels.push_back(l);
  CHECK(levels == std::vector<int>{1, 4});
  CHECK(std::is_sorted(levels.begin(), levels.end()));
}

TEST_CASE("flexible: additive steps once the jump falls short") {
  const auto g = one_class(100'000, 30'000);
  FluidSession s(g, 10e6, 50e6);
  const auto out = run_flexible_throughput(g, kTestbed, 60e6, 16, s);
  std::vector<int> levels;
  for (const auto& [t, l] : out.level_trace) levels.push_back(l);
  std::vector<int> expect{1};
  for (int l = 6; l <= 16; ++l) expect.push_back(l);
  CHECK(levels == expect);
  CHECK(out.target_unreachable);
}

TEST_CASE("energy efficiency needs an energy source") {
  struct Blind final : TransferSession {
    void apply(const TransferPlan&) override {}
    StepReason advance(double) override { return StepReason::AllDone; }
    std::vector<SizeClass> take_completed_groups() override { return {}; }
    double now() const override { return 0; }
    double bytes_delivered() const override { return 0; }
    double energy() const override { return 0; }
    bool energy_available() const override { return false; }
    bool done() const override { return false; }
    std::uint64_t total_bytes() const override { return 0; }
    int live_channels() const override { return 0; }
    int max_live_channels() const override { return 0; }
  } blind;
  const auto g = one_class(100'000, 10);
  CHECK_THROWS_AS(run_energy_efficiency(g, kTestbed, 4, blind), Error);
}

TEST_CASE("energy efficiency on the fluid model picks the best probe") {
  // Throughput saturates at 4 channels of 25 Mbps; extra channels only cost power.
  struct Saturating final : TransferSession {
    explicit Saturating(std::uint64_t total) : total_(total), left_(static_cast<double>(total)) {}
    void apply(const TransferPlan& p) override { cc_ = p.granted(); }
    StepReason advance(double deadline) override {
      const double rate = std::min(cc_, 4) * 25e6 / 8;
      const double t = std::min(deadline, now_ + left_ / rate);
      energy_ += (10.0 + 2.0 * cc_) * (t - now_);
      left_ -= rate * (t - now_);
      delivered_ = static_cast<double>(total_) - left_;
      now_ = t;
      if (left_ <= 1e-6) {
        left_ = 0;
        finished_ = true;
        return StepReason::AllDone;
      }
      return StepReason::Deadline;
    }
    std::vector<SizeClass> take_completed_groups() override {
      if (finished_ && !reported_) {
        reported_ = true;
        return {SizeClass::Small};
      }
      return {};
    }
    double now() const override { return now_; }
    double bytes_delivered() const override { return delivered_; }
    double energy() const override { return energy_; }
    bool energy_available() const override { return true; }
    bool done() const override { return finished_; }
    std::uint64_t total_bytes() const override { return total_; }
    int live_channels() const override { return cc_; }
    int max_live_channels() const override { return 16; }
    std::uint64_t total_;
    double left_;
    double delivered_ = 0, energy_ = 0, now_ = 0;
    int cc_ = 0;
    bool finished_ = false, reported_ = false;
  };
  const auto g = one_class(100'000, 20'000);
  Saturating s(g.total_bytes());
  const auto out = run_energy_efficiency(g, kTestbed, 16, s);
  REQUIRE(out.probes.size() == 5);
  CHECK(out.chosen_concurrency == 4);
  CHECK_FALSE(out.dataset_exhausted_during_search);
  for (const auto& p : out.probes) {
    CHECK(p.full_window);
    CHECK(p.ratio == doctest::Approx(p.window_throughput * p.window_seconds / p.window_energy));
    CHECK(p.ratio <= out.probes[1].ratio);
  }
  CHECK(out.level_trace.back().second == 4);
}

TEST_CASE("energy efficiency flags a dataset that ends during the search") {
  const auto g = one_class(100'000, 50);
  FluidSession s(g, 100e6);
  const auto out = run_energy_efficiency(g, kTestbed, 32, s);
  CHECK(out.dataset_exhausted_during_search);
  CHECK(out.total_bytes == g.total_bytes());
}

TEST_CASE("min-energy history has one entry per class and never exceeds the bound") {
  const auto g = three_groups(400, 60, 3);
  sim::SimProfile prof;
  for (int n : {1, 2, 3, 8}) {
    sim::SimulatedSession s(g, prof);
    const auto out = run_min_energy(g, kTestbed, n, s);
    std::set<SizeClass> seen;
    for (const auto& h : out.history) CHECK(seen.insert(h.group).second);
    CHECK(seen.size() == 3);
    CHECK(out.max_live_channels <= n);
    CHECK(out.total_bytes == g.total_bytes());
    CHECK(out.achieved_throughput == doctest::Approx(out.total_bytes * 8.0 / out.duration).epsilon(1e-6));
  }
}

TEST_CASE("every algorithm respects the channel bound on the simulator") {
  const auto g = three_groups(3000, 200, 6);
  sim::SimProfile prof;
  for (int n : {1, 5, 12}) {
    {
      sim::SimulatedSession s(g, prof);
      CHECK(run_max_throughput(g, kTestbed, n, s).max_live_channels <= n);
    }
    {
      sim::SimulatedSession s(g, prof);
      CHECK(run_energy_efficiency(g, kTestbed, n, s).max_live_channels <= n);
    }
    {
      sim::SimulatedSession s(g, prof);
      const auto out = run_flexible_throughput(g, kTestbed, 5e8, n, s);
      CHECK(out.max_live_channels <= n);
      for (std::size_t i = 1; i < out.level_trace.size(); ++i) {
        CHECK(out.level_trace[i].second >= out.level_trace[i - 1].second);
      }
    }
  }
}

TEST_CASE("algorithms replay identically on the simulator") {
  const auto g = three_groups(2000, 100, 4);
  sim::SimProfile prof;
  prof.rtt_jitter = 0.2;
  prof.seed = 77;
  SlaRequest req;
  req.mode = Mode::EnergyEfficiency;
  req.max_channels = 12;
  sim::SimulatedSession a(g, prof), b(g, prof);
  const auto x = run(req, g, kTestbed, a);
  const auto y = run(req, g, kTestbed, b);
  CHECK(x.duration == y.duration);
  CHECK(x.energy == y.energy);
  CHECK(x.chosen_concurrency == y.chosen_concurrency);
  CHECK(x.history.size() == y.history.size());
}
