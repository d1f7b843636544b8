#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "httpwatt/dataset.hpp"
#include "httpwatt/event_queue.hpp"
#include "httpwatt/http.hpp"
#include "httpwatt/planner.hpp"
#include "httpwatt/power.hpp"
#include "httpwatt/session.hpp"
#include "httpwatt/telemetry.hpp"

namespace httpwatt::transport {

/// What one server told us about itself.
struct Capabilities {
  bool range_supported = false;
  bool keep_alive = true;
  bool head_allowed = true;
  std::optional<std::uint64_t> size;  // of the probed URL
};

/// HEAD on `url`; on 405 falls back to a one-byte ranged GET. Throws
/// Error{Unreachable} when the host cannot be reached.
Capabilities probe_capabilities(const std::string& url, double timeout_s = 10.0);

struct ResolvedDataset {
  std::vector<FileEntry> files;             // sizes known
  std::vector<std::string> unknown_size;    // no Content-Length anywhere
  std::map<std::string, Capabilities> hosts;  // by authority
  std::vector<std::string> warnings;
};

/// Probes every host once and backfills missing sizes.
ResolvedDataset resolve_manifest(const std::vector<dataset::ManifestEntry>& manifest, double timeout_s = 10.0);

/// `root` + URL path; rejects paths that would escape the root.
std::string destination_path(const std::string& root, const std::string& url);

/// Lower-case hex SHA-256 of a file's contents.
std::string sha256_file(const std::string& path);

enum class EventKind { BytesProgress, FileComplete, FileFailed, SubgroupComplete, ChannelError, ChannelClosed, Warning };

struct TransferEvent {
  EventKind kind = EventKind::BytesProgress;
  double timestamp = 0.0;
  std::uint64_t bytes = 0;
  int file = -1;
  int channel = -1;
  SizeClass size_class = SizeClass::Small;
  std::string detail;
};

struct EngineOptions {
  std::string output_root = ".";
  bool verify = false;
  double io_timeout = 30.0;
  std::optional<power::PowerModel> power_model;
  telemetry::MetricsProvider* metrics = nullptr;  // required for energy
  double sample_period = 1.0;
  std::function<void(const TransferEvent&)> observer;  // called on the control thread
};

struct Shared;
class ChannelWorker;

/// Real HTTP/1.1 execution of a TransferPlan. Each channel is a worker thread
/// owning `parallelism` persistent connections to which it pipelines range
/// requests; everything it observes flows back through one event queue.
class RealSession final : public TransferSession {
 public:
  RealSession(const Grouping& groups, std::map<std::string, Capabilities> hosts, EngineOptions opts);
  ~RealSession() override;

  void apply(const TransferPlan& plan) override;
  StepReason advance(double deadline) override;
  std::vector<SizeClass> take_completed_groups() override;

  double now() const override;
  double bytes_delivered() const override { return static_cast<double>(bytes_); }
  double energy() const override;
  bool energy_available() const override;
  bool done() const override { return files_left_total_ == 0; }
  std::uint64_t total_bytes() const override { return total_bytes_; }
  int live_channels() const override { return static_cast<int>(workers_.size()); }
  int max_live_channels() const override { return max_live_; }
  std::vector<std::string> failures() const override { return failures_; }

  std::vector<std::string> warnings() const;
  std::vector<power::UtilizationSample> telemetry_timeline() const;
  const std::vector<telemetry::ProgressEvent>& progress_log() const noexcept { return progress_; }
  /// Largest number of unanswered requests seen on any single connection.
  int peak_outstanding() const noexcept;

 private:
  void reconcile();
  void handle(const TransferEvent& e);

  std::shared_ptr<Shared> shared_;
  EngineOptions opts_;
  std::unique_ptr<telemetry::Sampler> sampler_;
  std::vector<std::unique_ptr<ChannelWorker>> workers_;
  TransferPlan plan_;
  std::array<int, 3> files_left_{0, 0, 0};
  int files_left_total_ = 0;
  std::uint64_t total_bytes_ = 0;
  std::uint64_t bytes_ = 0;
  std::vector<SizeClass> completed_;
  std::vector<std::string> failures_;
  std::vector<std::string> warnings_;
  std::vector<telemetry::ProgressEvent> progress_;
  int next_channel_ = 0;
  int max_live_ = 0;
};

}  // namespace httpwatt::transport
