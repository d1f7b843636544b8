#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "httpwatt/planner.hpp"
#include "httpwatt/session.hpp"
#include "httpwatt/sla.hpp"

namespace httpwatt::sim {

/// Network and host constants of the deterministic simulator. The affine
/// power law (idle + per connection + per extra parallel stream) is synthetic;
/// only the shape of the resulting curves is meant to be meaningful.
struct SimProfile {
  NetworkProfile network{1.0e9, 0.060, 1.0e6};
  double per_request_overhead = 0.001;  // seconds, server time per request
  double idle_power = 10.0;             // watts
  double per_channel_power = 0.5;       // watts per active connection
  double per_parallel_power = 0.5;      // watts per extra parallel stream
  double rtt_jitter = 0.0;              // relative, uniform in [-j, +j] per request
  std::uint64_t seed = 0;

  void validate() const;
};

std::string profile_to_json(const SimProfile& p);
SimProfile profile_from_json(const std::string& text);
SimProfile load_profile(const std::string& path);

/// Constant-power stretch of the simulated timeline.
struct PowerSegment {
  double start = 0.0;
  double end = 0.0;
  double watts = 0.0;
};

/// Event-driven transport over a shared link. A request waits one RTT plus the
/// per-request overhead for its first byte; pipelined requests overlap that
/// wait with their predecessors. A stream is window-limited to
/// tcp_buffer / rtt while it carries a range longer than one buffer or a
/// response that was queued behind another one; a lone short response is in
/// flight at once. Bandwidth is split max-min fairly among streams in their
/// data phase. The useful pipeline depth for a file is min(pp, ceil(BDP /
/// size)), so responses of at least one BDP gain nothing from pipelining.
class SimulatedSession final : public TransferSession {
 public:
  SimulatedSession(const Grouping& groups, const SimProfile& profile);

  void apply(const TransferPlan& plan) override;
  StepReason advance(double deadline) override;
  std::vector<SizeClass> take_completed_groups() override;

  double now() const override { return now_; }
  double bytes_delivered() const override { return progress_bytes_; }
  double energy() const override { return energy_; }
  bool energy_available() const override { return true; }
  bool done() const override { return files_left_total_ == 0; }
  std::uint64_t total_bytes() const override { return total_bytes_; }
  int live_channels() const override { return static_cast<int>(channels_.size()); }
  int max_live_channels() const override { return max_live_; }

  std::uint64_t completed_bytes() const noexcept { return completed_bytes_; }
  const std::vector<PowerSegment>& power_timeline() const noexcept { return segments_; }
  /// Largest instantaneous sum of stream rates seen, bytes/s.
  double peak_aggregate_rate() const noexcept { return peak_rate_; }
  /// Largest number of unfinished file requests seen on any one channel,
  /// alongside the pipelining value that channel was running with.
  int peak_outstanding() const noexcept { return peak_outstanding_; }
  bool outstanding_within_pipelining() const noexcept { return outstanding_ok_; }
  /// Completion time of every file, indexed like the flattened dataset.
  const std::vector<double>& file_completion_times() const noexcept { return file_done_at_; }

 private:
  struct QueuedRange {
    int request = 0;  // index into requests_
    std::uint64_t length = 0;
    double issued_at = 0.0;
    double rtt = 0.0;
  };
  struct Stream {
    std::deque<QueuedRange> queue;
    bool busy = false;
    bool in_data = false;
    double ready_at = 0.0;
    double remaining = 0.0;
    std::uint64_t length = 0;
    double cap = 0.0;  // bytes/s, 0 = uncapped
    int request = -1;
    double finish_at = 0.0;
    double rate = 0.0;
  };
  struct Channel {
    int id = 0;
    SizeClass cls = SizeClass::Small;
    int pipelining = 1;
    int parallelism = 1;
    bool closing = false;
    std::vector<Stream> streams;
    std::vector<int> outstanding;  // request indices in issue order
  };
  struct Request {
    int file = 0;
    int channel = 0;
    int ranges_left = 0;
  };
  struct FileRef {
    std::uint64_t size = 0;
    SizeClass cls = SizeClass::Small;
  };

  void reconcile();
  void issue_requests();
  void issue(Channel& ch, int file);
  void start_next_range(Channel& ch, Stream& s, double stream_free_at);
  double draw_rtt();
  double current_power() const;
  void finish_range(Channel& ch, Stream& s);

  SimProfile profile_;
  double bw_bytes_ = 0.0;
  double window_cap_ = 0.0;
  double bdp_ = 0.0;
  std::vector<FileRef> files_;
  std::array<std::deque<int>, 3> pending_;
  std::array<int, 3> files_left_{0, 0, 0};
  int files_left_total_ = 0;
  std::array<TransferParams, 3> params_{};
  std::array<int, 3> target_{0, 0, 0};
  int bound_ = 0;
  std::vector<Channel> channels_;
  std::vector<Request> requests_;
  int next_channel_id_ = 0;
  std::vector<SizeClass> completed_groups_;
  std::vector<double> file_done_at_;

  double now_ = 0.0;
  double energy_ = 0.0;
  double progress_bytes_ = 0.0;
  std::uint64_t range_bytes_done_ = 0;
  std::uint64_t completed_bytes_ = 0;
  std::uint64_t total_bytes_ = 0;
  std::vector<PowerSegment> segments_;
  double peak_rate_ = 0.0;
  int peak_outstanding_ = 0;
  bool outstanding_ok_ = true;
  int max_live_ = 0;
  std::mt19937_64 rng_;
};

/// Runs a fixed plan on a fresh simulated session.
sla::TransferOutcome simulate_transfer(const TransferPlan& plan, const Grouping& groups, const SimProfile& profile,
                                       const sla::SlaOptions& opts = {});

struct SweepSpec {
  std::vector<int> levels;             // concurrency levels to run
  std::optional<int> pipelining;       // unset: planner value per class
  std::optional<int> parallelism;      // unset: planner value per class
};

struct SweepPoint {
  int concurrency = 0;
  double throughput = 0.0;  // bits/s over the whole transfer
  double energy = 0.0;      // joules
  double duration = 0.0;    // seconds
  double ratio = 0.0;       // bits per joule
};

/// Brute-force concurrency sweep, one full simulation per level, levels run
/// in parallel. Results are sorted by concurrency and bit-identical to the
/// serial reference.
std::vector<SweepPoint> throughput_energy_sweep(const Grouping& groups, const SimProfile& profile,
                                                const SweepSpec& spec, const sla::SlaOptions& opts = {});

/// Serial reference for throughput_energy_sweep.
std::vector<SweepPoint> throughput_energy_sweep_serial(const Grouping& groups, const SimProfile& profile,
                                                       const SweepSpec& spec, const sla::SlaOptions& opts = {});

SweepPoint run_level(const Grouping& groups, const SimProfile& profile, int level, const SweepSpec& spec,
                     const sla::SlaOptions& opts = {});

std::string sweep_to_csv(const std::vector<SweepPoint>& points, const std::string& header_comment = {});

}  // namespace httpwatt::sim
