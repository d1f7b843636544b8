#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "httpwatt/error.hpp"
#include "httpwatt/simulator.hpp"
#include "httpwatt/sla.hpp"

namespace httpwatt::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,       // anything not listed below
  kUsage = 2,         // bad flags, bad config, bad input files
  kNetwork = 3,       // a server could not be reached
  kFileFailed = 4,    // at least one file was not delivered
  kUnreachable = 5,   // flexible target could not be met at max channels
};

int exit_code_for(const Error& e) noexcept;

/// Settings shared by every command. Loaded from the JSON file named by
/// HTTPWATT_CONFIG (if set), then overridden by flags.
struct RunConfig {
  std::string profile;           // JSON file, or "bandwidth_bps,rtt_s,tcp_buffer_bytes"
  std::optional<sim::SimProfile> profile_inline;  // "profile" object in the config
  std::string manifest;
  std::string out;
  std::string sla = "min-energy";
  int channels = 0;
  int max_channels = 0;
  double target_pct = 0.0;
  double reference = 0.0;        // bits/s
  std::string power_model;
  double window_secs = 5.0;
  int pp_cap = 32;
  bool verify = false;
  std::uint64_t seed = 1;
};

RunConfig config_from_json(const std::string& text);
sim::SimProfile resolve_profile(const RunConfig& cfg);
sla::SlaRequest make_request(const RunConfig& cfg);

std::string outcome_to_json(const sla::TransferOutcome& o, const std::vector<std::string>& warnings = {});
/// One JSON object per line: timestamp, subgroup, pp, p, cc, window throughput and joules.
std::string history_jsonl(const sla::TransferOutcome& o);
/// Same EfficiencySample columns as a sweep: probes for an energy-efficiency
/// run, the measured windows otherwise.
std::string samples_csv(const sla::TransferOutcome& o, const std::string& header_comment = {});

struct ReportRow {
  std::string source;
  std::string mode;
  int channels = 0;
  double throughput = 0.0;  // bits/s
  double energy = 0.0;      // joules, 0 when unavailable
  double duration = 0.0;
  double ratio = 0.0;       // recomputed: throughput * duration / energy
};

/// Throws Error{SchemaMismatch} naming `source` when fields are missing.
ReportRow report_row(const std::string& json_text, const std::string& source);
std::string report_csv(const std::vector<ReportRow>& rows);

/// "A..B" with 1 <= A <= B.
std::vector<int> parse_sweep(const std::string& text);

/// Entry point behind the httpwatt binary.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace httpwatt::cli
