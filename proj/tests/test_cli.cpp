#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <json.hpp>
#include <random>
#include <set>
#include <sstream>

#include "httpwatt/cli.hpp"
#include "httpwatt/power.hpp"
#include "httpwatt/transport.hpp"
#include "httpwatt/util.hpp"
#include "support/fixture_server.hpp"

using namespace httpwatt;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "httpwatt");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

std::vector<std::string> csv_rows(const std::string& csv) {
  std::vector<std::string> rows;
  std::istringstream in(csv);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') rows.push_back(line);
  return rows;
}

}  // namespace

TEST_CASE("calibrate round-trips known coefficients") {
  TempDir dir("httpwatt_cli_cal");
  std::string csv = "timestamp,cpu,mem,disk,nic,power_watts\n";
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 50; ++i) {
    const double c = u(rng), m = u(rng), d = u(rng), n = u(rng);
    csv += std::to_string(i) + "," + util::format_double(c) + "," + util::format_double(m) + "," + util::format_double(d) +
           "," + util::format_double(n) + "," + util::format_double(40 + 25 * c + 6 * m + 3 * d + 9 * n) + "\n";
  }
  util::write_file(dir / "cal.csv", csv);
  auto r = invoke({"calibrate", dir / "cal.csv", "--kind", "fine", "--out", dir / "model.json"});
  REQUIRE(r.code == cli::kOk);
  CHECK(r.out.find("coeff_cpu") != std::string::npos);
  const auto m = power::load_model(dir / "model.json");
  CHECK(m.intercept == doctest::Approx(40).epsilon(1e-9));
  CHECK(m.coeff_cpu == doctest::Approx(25).epsilon(1e-9));
  CHECK(m.coeff_mem == doctest::Approx(6).epsilon(1e-9));
  CHECK(m.coeff_disk == doctest::Approx(3).epsilon(1e-9));
  CHECK(m.coeff_nic == doctest::Approx(9).epsilon(1e-9));
}

TEST_CASE("calibrate names a missing column") {
  TempDir dir("httpwatt_cli_cal_bad");
  util::write_file(dir / "cal.csv", "timestamp,cpu,mem,disk,nic\n0,0.1,0.1,0.1,0.1\n");
  auto r = invoke({"calibrate", dir / "cal.csv"});
  CHECK(r.code == cli::kUsage);
  CHECK(r.err.find("power_watts") != std::string::npos);
}

TEST_CASE("usage errors") {
  CHECK(invoke({}).code == cli::kUsage);
  CHECK(invoke({"bogus"}).code == cli::kUsage);
  CHECK(invoke({"simulate", "--sweep", "5..3"}).code == cli::kUsage);
  CHECK(invoke({"simulate", "--sweep", "1..x"}).code == cli::kUsage);
  CHECK(invoke({"simulate"}).code == cli::kUsage);
  CHECK(invoke({"simulate", "--algo", "nope"}).code == cli::kUsage);
  CHECK(invoke({"transfer", "--sla", "min-energy", "--channels", "2"}).code == cli::kUsage);
  CHECK(invoke({"--help"}).code == cli::kOk);
}

TEST_CASE("sweep of the small-file set has a single-peaked ratio") {
  auto r = invoke({"simulate", "--sweep", "1..32", "--dataset", "html"});
  REQUIRE(r.code == cli::kOk);
  CHECK(r.out.rfind("# dataset=html", 0) == 0);
  auto rows = csv_rows(r.out);
  REQUIRE(rows.size() == 33);
  CHECK(rows[0] == "concurrency,throughput_bps,energy_j,ratio");
  std::vector<double> ratio;
  for (std::size_t i = 1; i < rows.size(); ++i) ratio.push_back(std::stod(util::split_csv_line(rows[i])[3]));
  std::size_t k = 0;
  while (k + 1 < ratio.size() && ratio[k + 1] >= ratio[k]) ++k;
  for (std::size_t i = k; i + 1 < ratio.size(); ++i) CHECK(ratio[i + 1] <= ratio[i]);
  // reproducible to the byte
  CHECK(invoke({"simulate", "--sweep", "1..32", "--dataset", "html"}).out == r.out);
}

TEST_CASE("energy-efficiency run names the sweep's best probe level") {
  for (const auto& [name, scale] : std::vector<std::pair<std::string, std::string>>{{"html", "4"}, {"image", "1"}, {"video", "1"}}) {
    CAPTURE(name);
    auto ee = invoke({"simulate", "--algo", "ee", "--max-channels", "16", "--dataset", name, "--scale", scale});
    REQUIRE(ee.code == cli::kOk);
    const auto at = ee.err.find("chosen level ");
    REQUIRE(at != std::string::npos);
    const int chosen = std::stoi(ee.err.substr(at + 13));
    auto sw = invoke({"simulate", "--sweep", "1..16", "--dataset", name, "--scale", scale});
    auto rows = csv_rows(sw.out);
    int best = 0;
    double best_ratio = -1;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      auto f = util::split_csv_line(rows[i]);
      const int cc = std::stoi(f[0]);
      if (cc != 1 && cc % 4 != 0) continue;
      if (std::stod(f[3]) > best_ratio) {
        best_ratio = std::stod(f[3]);
        best = cc;
      }
    }
    CHECK(chosen == best);
  }
}

TEST_CASE("simulated flexible run past the link limit exits with the unreachable code") {
  TempDir dir("httpwatt_cli_flex");
  auto r = invoke({"simulate", "--algo", "flexible", "--dataset", "image", "--max-channels", "4", "--target-pct", "95",
                   "--reference", "1e10", "--outcome", dir / "o.json"});
  CHECK(r.code == cli::kUnreachable);
  const auto j = nlohmann::json::parse(util::read_file(dir / "o.json"));
  CHECK(j["target_unreachable"] == true);
  CHECK(j["final_concurrency"] == 4);
}

TEST_CASE("transfer min-energy against the loopback server") {
  TempDir dir("httpwatt_cli_transfer");
  fixture::Server server;
  std::string manifest;
  std::map<std::string, std::string> bodies;
  const std::size_t sizes[] = {1500, 2500, 60'000, 80'000, 400'000, 700'000};
  for (std::size_t i = 0; i < std::size(sizes); ++i) {
    const std::string path = "/data/f" + std::to_string(i) + ".bin";
    bodies[path] = fixture::generate_content(sizes[i], i);
    server.add(path, bodies[path]);
    manifest += server.url(path) + (i % 2 ? "" : " " + std::to_string(sizes[i])) + "\n";
  }
  util::write_file(dir / "manifest.txt", manifest);
  auto r = invoke({"transfer", "--manifest", dir / "manifest.txt", "--out", dir / "files", "--profile", "1e9,0.002,65536",
                   "--sla", "min-energy", "--channels", "8", "--verify", "--outcome", dir / "outcome.json",
                   "--history", dir / "history.jsonl"});
  INFO(r.err);
  REQUIRE(r.code == cli::kOk);
  for (const auto& [path, body] : bodies) {
    const auto dest = (dir.path / "files").string() + path;
    CHECK(util::read_file(dest) == body);
    CHECK(fs::exists(dest + ".sha256"));
  }
  const auto j = nlohmann::json::parse(util::read_file(dir / "outcome.json"));
  CHECK(j["mode"] == "min-energy");
  CHECK(j["energy_j"].is_null());
  CHECK(j["failures"].empty());
  CHECK(j["total_bytes"] == 1'244'000);
  // a static plan: one parameter entry per subgroup
  std::set<std::string> seen;
  for (const auto& p : j["parameters"]) CHECK(seen.insert(p["subgroup"].get<std::string>()).second);
  CHECK(seen.size() == 3);
  auto lines = csv_rows(util::read_file(dir / "history.jsonl"));
  CHECK(lines.size() == 3);
  const auto first = nlohmann::json::parse(lines[0]);
  for (const char* k : {"timestamp", "subgroup", "pp", "p", "cc", "window_throughput_bps", "window_energy_j"})
    CHECK(first.contains(k));
}

TEST_CASE("flexible transfer against a throttled server meets the target or says so") {
  TempDir dir("httpwatt_cli_flex_real");
  fixture::Options o;
  o.bytes_per_sec = 2e6;
  fixture::Server server(o);
  std::string manifest;
  for (int i = 0; i < 12; ++i) {
    const std::string path = "/t" + std::to_string(i);
    server.add(path, fixture::generate_content(150'000, static_cast<std::uint64_t>(i)));
    manifest += server.url(path) + "\n";
  }
  util::write_file(dir / "m.txt", manifest);
  const double reference = 32e6;  // what two throttled connections can do
  auto r = invoke({"transfer", "--manifest", dir / "m.txt", "--out", dir / "files", "--profile", "1e9,0.002,65536",
                   "--sla", "flexible", "--target-pct", "50", "--reference", "32e6", "--max-channels", "4",
                   "--window-secs", "0.2", "--outcome", dir / "o.json", "--history", dir / "h.jsonl"});
  INFO(r.err);
  REQUIRE((r.code == cli::kOk || r.code == cli::kUnreachable));
  const auto j = nlohmann::json::parse(util::read_file(dir / "o.json"));
  if (r.code == cli::kOk) CHECK(j["throughput_bps"].get<double>() >= 0.5 * reference * 0.9);
  else CHECK(j["target_unreachable"] == true);
}

TEST_CASE("unreachable host: network exit code and no outcome") {
  TempDir dir("httpwatt_cli_unreach");
  util::write_file(dir / "m.txt", "http://127.0.0.1:1/nothing 100\n");
  auto r = invoke({"transfer", "--manifest", dir / "m.txt", "--out", dir / "files", "--profile", "1e9,0.002,65536",
                   "--sla", "max-throughput", "--channels", "2"});
  CHECK(r.code == cli::kNetwork);
  CHECK_FALSE(fs::exists(dir / "files/outcome.json"));
}

TEST_CASE("report recomputes ratios and rejects malformed input") {
  TempDir dir("httpwatt_cli_report");
  sla::TransferOutcome a;
  a.mode = sla::Mode::MaxThroughput;
  a.channel_bound = 8;
  a.achieved_throughput = 8e8;
  a.duration = 10;
  a.energy = 400;
  a.energy_available = true;
  sla::TransferOutcome b = a;
  b.mode = sla::Mode::MinEnergy;
  b.energy = 250;
  util::write_file(dir / "a.json", cli::outcome_to_json(a));
  util::write_file(dir / "b.json", cli::outcome_to_json(b));
  auto r = invoke({"report", dir / "a.json", dir / "b.json"});
  REQUIRE(r.code == cli::kOk);
  auto rows = csv_rows(r.out);
  REQUIRE(rows.size() == 3);
  auto fa = util::split_csv_line(rows[1]);
  CHECK(fa[1] == "max-throughput");
  CHECK(std::stod(fa[6]) == doctest::Approx(8e8 * 10 / 400));
  CHECK(std::stod(util::split_csv_line(rows[2])[6]) == doctest::Approx(8e8 * 10 / 250));

  util::write_file(dir / "bad.json", "{\"mode\": \"x\"");
  auto bad = invoke({"report", dir / "a.json", dir / "bad.json"});
  CHECK(bad.code == cli::kUsage);
  CHECK(bad.err.find("bad.json") != std::string::npos);
  CHECK(bad.err.find("SchemaMismatch") != std::string::npos);
  util::write_file(dir / "short.json", "{\"mode\": \"x\"}");
  auto shrt = invoke({"report", dir / "short.json"});
  CHECK(shrt.code == cli::kUsage);
  CHECK(shrt.err.find("short.json") != std::string::npos);
}

TEST_CASE("client and server telemetry add up") {
  TempDir dir("httpwatt_cli_merge");
  power::PowerModel m{power::ModelKind::CpuOnly, 20, 40};
  power::save_model(m, dir / "m.json");
  util::write_file(dir / "client.csv", "timestamp,cpu,mem,disk,nic,bytes_window\n0,0.5,0,0,0,0\n1,0.5,0,0,0,10\n3,0.25,0,0,0,0\n");
  util::write_file(dir / "server.csv", "timestamp,cpu,mem,disk,nic,bytes_window\n0,0,0,0,0,0\n2,1,0,0,0,0\n");
  auto r = invoke({"report", "--telemetry", dir / "client.csv", "--telemetry", dir / "server.csv", "--power-model",
                   dir / "m.json"});
  REQUIRE(r.code == cli::kOk);
  auto rows = csv_rows(r.out);
  REQUIRE(rows.size() == 4);
  const double client = std::stod(util::split_csv_line(rows[1])[3]);
  const double server = std::stod(util::split_csv_line(rows[2])[3]);
  const double total = std::stod(util::split_csv_line(rows[3])[3]);
  CHECK(client == doctest::Approx(40 + 2 * 0.5 * (40 + 30)));
  CHECK(server == doctest::Approx(2 * 0.5 * (20 + 60)));
  CHECK(std::abs(total - (client + server)) <= 1e-9);
}

TEST_CASE("config file from the environment, flags win") {
  TempDir dir("httpwatt_cli_config");
  util::write_file(dir / "cfg.json",
                   R"({"profile": {"bandwidth_bps": 1e9, "rtt_s": 0.06, "tcp_buffer_bytes": 1e6}, "sla": "ee", "max_channels": 8, "window_secs": 5})");
  ::setenv("HTTPWATT_CONFIG", (dir / "cfg.json").c_str(), 1);
  auto from_cfg = invoke({"simulate", "--algo", "ee", "--dataset", "video"});
  auto flag = invoke({"simulate", "--algo", "ee", "--dataset", "video", "--max-channels", "4"});
  util::write_file(dir / "broken.json", "[1,2]");
  ::setenv("HTTPWATT_CONFIG", (dir / "broken.json").c_str(), 1);
  auto broken = invoke({"simulate", "--algo", "ee", "--dataset", "video"});
  ::unsetenv("HTTPWATT_CONFIG");
  CHECK(from_cfg.code == cli::kOk);
  CHECK(from_cfg.out.find("\n8,") != std::string::npos);  // probes reach the configured bound
  CHECK(flag.code == cli::kOk);
  CHECK(flag.out.find("\n8,") == std::string::npos);
  CHECK(broken.code == cli::kUsage);
  CHECK(invoke({"simulate", "--algo", "ee", "--dataset", "video"}).code == cli::kUsage);  // no bound at all
}
