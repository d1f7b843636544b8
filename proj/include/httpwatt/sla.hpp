#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "httpwatt/planner.hpp"
#include "httpwatt/session.hpp"

namespace httpwatt::sla {

enum class Mode { MinEnergy, MaxThroughput, EnergyEfficiency, FlexibleThroughput };

const char* mode_name(Mode m) noexcept;  // CLI spelling: min-energy, max-throughput, ...
Mode parse_mode(const std::string& name);

struct SlaRequest {
  Mode mode = Mode::MinEnergy;
  int channel_count = 0;             // MinEnergy, MaxThroughput
  int max_channels = 0;              // EnergyEfficiency, FlexibleThroughput
  double target_fraction = 0.0;      // FlexibleThroughput, (0,1]
  double reference_throughput = 0.0; // FlexibleThroughput, bits/s

  double target_throughput() const noexcept { return target_fraction * reference_throughput; }
  /// The bound every plan derived from this request must respect.
  int channel_bound() const noexcept;
  void validate() const;
};

struct SlaOptions {
  PlannerOptions planner;
  double window_seconds = 5.0;
  int probe_step = 4;
};

struct EfficiencySample {
  int concurrency = 0;
  double window_throughput = 0.0;  // bits/s
  double window_energy = 0.0;      // joules
  double window_seconds = 0.0;
  double ratio = 0.0;              // bits per joule
  bool full_window = true;
};

struct HistoryEntry {
  double timestamp = 0.0;
  SizeClass group = SizeClass::Small;
  TransferParams params;
  double window_throughput = 0.0;  // most recent completed window, bits/s
  double window_energy = 0.0;      // joules in that window
};

struct WindowRecord {
  double start = 0.0;
  double end = 0.0;
  double bytes = 0.0;
  double energy = 0.0;
  int concurrency = 0;

  double throughput() const noexcept { return end > start ? bytes * 8.0 / (end - start) : 0.0; }
};

struct GroupStats {
  std::size_t files = 0;
  std::uint64_t bytes = 0;
  double completed_at = 0.0;  // seconds; 0 for empty groups
};

struct TransferOutcome {
  Mode mode = Mode::MinEnergy;
  int channel_bound = 0;
  double achieved_throughput = 0.0;  // bits/s
  double energy = 0.0;               // joules
  bool energy_available = false;
  double duration = 0.0;             // seconds
  std::uint64_t total_bytes = 0;
  std::array<GroupStats, 3> groups{};
  std::vector<HistoryEntry> history;
  std::vector<WindowRecord> windows;
  std::vector<EfficiencySample> probes;           // EnergyEfficiency search phase
  std::vector<std::pair<double, int>> level_trace; // (time, total concurrency) decisions
  std::optional<int> chosen_concurrency;
  int final_concurrency = 0;
  int max_live_channels = 0;
  bool target_unreachable = false;
  bool dataset_exhausted_during_search = false;
  std::vector<std::string> failures;

  double ratio() const noexcept { return energy > 0 ? achieved_throughput * duration / energy : 0.0; }
};

// Planning. All plans leave empty classes inactive with zero channels.

TransferParams optimal_params(const Grouping& groups, SizeClass c, const NetworkProfile& profile,
                              const PlannerOptions& opts = {});

/// Small -> Medium -> Large, concurrency from the running channel decrement.
TransferPlan plan_min_energy(const Grouping& groups, const NetworkProfile& profile, int channel_count,
                             const PlannerOptions& opts = {});

/// Channel i goes to the (i mod k)-th non-empty class in Large, Medium, Small order.
TransferPlan plan_max_throughput(const Grouping& groups, const NetworkProfile& profile, int channel_count,
                                 const PlannerOptions& opts = {});

/// Hands the finished class's channels back one at a time in Large, Medium,
/// Small rotation over the classes that still have work. Throws
/// Error{NoActiveGroups} (leaving `plan` untouched) when nothing is left.
TransferPlan redistribute_on_completion(const TransferPlan& plan, SizeClass finished);

/// Total concurrency `level` split by subgroup proportions over active classes.
TransferPlan plan_proportional(const Grouping& groups, const NetworkProfile& profile, int level,
                               const std::array<bool, 3>& active, const PlannerOptions& opts = {});

/// Total concurrency `level` with small-file priority: the min-energy formula
/// over active classes, leftovers to the smallest active class.
TransferPlan plan_small_first(const Grouping& groups, const NetworkProfile& profile, int level,
                              const std::array<bool, 3>& active, const PlannerOptions& opts = {});

/// {1, step, 2*step, ...} below max plus max itself.
std::vector<int> probe_levels(int max_channels, int step = 4);

// Execution.

TransferOutcome run_min_energy(const Grouping& groups, const NetworkProfile& profile, int channel_count,
                               TransferSession& session, const SlaOptions& opts = {});
TransferOutcome run_max_throughput(const Grouping& groups, const NetworkProfile& profile, int channel_count,
                                   TransferSession& session, const SlaOptions& opts = {});
TransferOutcome run_energy_efficiency(const Grouping& groups, const NetworkProfile& profile, int max_channels,
                                      TransferSession& session, const SlaOptions& opts = {});
TransferOutcome run_flexible_throughput(const Grouping& groups, const NetworkProfile& profile,
                                        double target_throughput, int max_channels, TransferSession& session,
                                        const SlaOptions& opts = {});

/// Executes `plan` as given; a finished class simply releases its channels.
TransferOutcome run_static(const TransferPlan& plan, const Grouping& groups, TransferSession& session,
                           const SlaOptions& opts = {});

/// Brute-force reference run: total concurrency `level` from the start, split
/// like the energy-efficiency transfer phase (proportional, redistributed on
/// completion). Optional overrides pin pipelining/parallelism for every class.
TransferOutcome run_fixed_level(const Grouping& groups, const NetworkProfile& profile, int level,
                                TransferSession& session, const SlaOptions& opts = {},
                                std::optional<int> pipelining = std::nullopt,
                                std::optional<int> parallelism = std::nullopt);

/// Dispatches on request.mode.
TransferOutcome run(const SlaRequest& request, const Grouping& groups, const NetworkProfile& profile,
                    TransferSession& session, const SlaOptions& opts = {});

}  // namespace httpwatt::sla
