#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "httpwatt/power.hpp"

namespace httpwatt::telemetry {

/// Which fields of the latest sample could not be measured, and whether a
/// counter went backwards (wrap or device reset) since the previous read.
struct SampleFlags {
  bool cpu_missing = false;
  bool mem_missing = false;
  bool disk_missing = false;
  bool nic_missing = false;
  bool counter_reset = false;

  bool degraded() const noexcept { return mem_missing || disk_missing || nic_missing; }
};

class MetricsProvider {
 public:
  virtual ~MetricsProvider() = default;
  /// Utilization since the previous call. Throws Error{MetricsUnavailable}
  /// when not even CPU time can be read.
  virtual power::UtilizationSample sample(double timestamp) = 0;
  virtual SampleFlags last_flags() const { return {}; }
};

/// Throughput that counts as full utilization for the disk and NIC fields.
struct Capacity {
  double disk_bytes_per_sec = 500e6;
  double nic_bits_per_sec = 1e9;
};

/// Reads /proc/stat, /proc/meminfo, /proc/diskstats and /proc/net/dev under
/// `root`. Counters are primed on construction.
class ProcfsProvider final : public MetricsProvider {
 public:
  explicit ProcfsProvider(std::string root = "/proc", Capacity capacity = {});

  power::UtilizationSample sample(double timestamp) override;
  SampleFlags last_flags() const override { return flags_; }

 private:
  struct Counters {
    std::optional<std::uint64_t> cpu_busy, cpu_total;
    std::optional<double> mem_fraction;
    std::optional<std::uint64_t> disk_bytes, nic_bytes;
  };
  Counters read() const;

  std::string root_;
  Capacity capacity_;
  Counters prev_;
  double prev_time_ = 0.0;
  bool primed_ = false;
  SampleFlags flags_;
};

/// Replays a script of samples (the last one repeats), stamping each with the
/// requested timestamp.
class SyntheticProvider final : public MetricsProvider {
 public:
  explicit SyntheticProvider(std::vector<power::UtilizationSample> script, SampleFlags flags = {});
  power::UtilizationSample sample(double timestamp) override;
  SampleFlags last_flags() const override { return flags_; }

 private:
  std::vector<power::UtilizationSample> script_;
  std::size_t next_ = 0;
  SampleFlags flags_;
};

/// Background sampler: one sample per period on its own thread. The timeline
/// is readable while sampling continues.
class Sampler {
 public:
  using Clock = std::function<double()>;  // seconds since transfer start
  using Sink = std::function<void(const power::UtilizationSample&, const SampleFlags&)>;

  Sampler(MetricsProvider& provider, double period, Clock clock, Sink sink = {});
  ~Sampler();
  Sampler(const Sampler&) = delete;
  Sampler& operator=(const Sampler&) = delete;

  void start();
  void stop();
  /// Takes one sample on the caller's thread (used at start and stop edges).
  void sample_now();

  std::vector<power::UtilizationSample> timeline() const;
  bool degraded() const noexcept { return degraded_; }
  bool available() const noexcept { return available_; }
  std::vector<std::string> warnings() const;

 private:
  void loop();

  MetricsProvider& provider_;
  double period_;
  Clock clock_;
  Sink sink_;
  mutable std::mutex mu_;
  std::vector<power::UtilizationSample> timeline_;
  std::vector<std::string> warnings_;
  std::atomic<bool> running_{false};
  std::atomic<bool> degraded_{false};
  std::atomic<bool> available_{true};
  std::thread worker_;
  std::mutex wake_mu_;
  std::condition_variable_any wake_;
};

struct ProgressEvent {
  double timestamp = 0.0;
  std::uint64_t bytes = 0;
};

/// One tumbling window, [start, end).
struct Window {
  double start = 0.0;
  double end = 0.0;
  std::uint64_t bytes_moved = 0;
  std::vector<power::UtilizationSample> samples;

  double throughput() const noexcept { return end > start ? static_cast<double>(bytes_moved) * 8.0 / (end - start) : 0.0; }
};

/// Streaming tumbling-window builder. Events at exactly a boundary belong to
/// the window that starts there; empty windows are still emitted.
class WindowAccumulator {
 public:
  explicit WindowAccumulator(double window_length, double start = 0.0);

  /// Returns the windows closed by advancing to the event's timestamp.
  std::vector<Window> add(const ProgressEvent& e);
  std::vector<Window> add_sample(const power::UtilizationSample& s);
  /// Closes every window that ends at or before `t`.
  std::vector<Window> advance_to(double t);
  /// Emits the open window truncated at `t` (end = t) if it has any extent.
  std::optional<Window> flush(double t);

  const Window& current() const noexcept { return open_; }

 private:
  double length_;
  double origin_;
  long index_ = 0;
  Window open_;
};

/// Batch form over a progress log, covering [start, last event] at least.
std::vector<Window> window_throughput(std::span<const ProgressEvent> events, double window_length, double start = 0.0,
                                      std::span<const power::UtilizationSample> samples = {});

/// `timestamp,cpu,mem,disk,nic,bytes_window`; bytes_window is the progress
/// since the previous sample.
std::string telemetry_csv(std::span<const power::UtilizationSample> samples, std::span<const ProgressEvent> events);

/// Reads the samples back from a telemetry CSV (bytes_window is ignored).
std::vector<power::UtilizationSample> read_telemetry_csv(const std::string& path);

}  // namespace httpwatt::telemetry
