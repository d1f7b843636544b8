#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace httpwatt {

struct FileEntry {
  std::string id;           // URL or URL path
  std::uint64_t size = 0;   // bytes, > 0
};

struct NetworkProfile {
  double bandwidth = 0.0;   // bits/second
  double rtt = 0.0;         // seconds
  double tcp_buffer = 0.0;  // bytes

  /// Bandwidth-delay product in bytes.
  double bdp() const noexcept { return bandwidth * rtt / 8.0; }
  void validate() const;
};

enum class SizeClass : int { Small = 0, Medium = 1, Large = 2 };

inline constexpr std::array<SizeClass, 3> kAllClasses{SizeClass::Small, SizeClass::Medium, SizeClass::Large};

constexpr int index_of(SizeClass c) noexcept { return static_cast<int>(c); }
const char* class_name(SizeClass c) noexcept;

struct SubGroup {
  SizeClass size_class = SizeClass::Small;
  std::vector<FileEntry> files;
  double avg_file_size = 0.0;  // bytes; total_bytes / files.size()
  std::uint64_t total_bytes = 0;

  bool empty() const noexcept { return files.empty(); }
};

/// The Small/Medium/Large partition of a dataset. Files whose size could not
/// be discovered ride with the Medium group but never influence its averages.
struct Grouping {
  std::array<SubGroup, 3> groups;
  std::vector<std::string> unknown_size;

  SubGroup& operator[](SizeClass c) { return groups[index_of(c)]; }
  const SubGroup& operator[](SizeClass c) const { return groups[index_of(c)]; }
  std::uint64_t total_bytes() const noexcept;
  std::size_t file_count() const noexcept;
  bool has_work(SizeClass c) const noexcept;
};

struct TransferParams {
  int pipelining = 1;
  int parallelism = 1;
  int concurrency = 0;  // 0: waiting for a channel grant

  bool operator==(const TransferParams&) const = default;
};

struct PlannerOptions {
  int pipelining_cap = 32;
  double small_fraction = 0.1;   // Small when size < small_fraction * BDP
  double byte_share_weight = 0.5;  // proportion blend between byte and count shares
};

namespace planner {

/// Smallest integer k >= 1 with k * den >= num (num, den > 0).
std::int64_t ceil_ratio(double num, double den);

SizeClass classify(std::uint64_t size, const NetworkProfile& profile, const PlannerOptions& opts = {});

/// Partition into Small/Medium/Large against the profile's BDP.
/// Throws Error{EmptyDataset} on an empty file list.
Grouping group_files(std::span<const FileEntry> files, const NetworkProfile& profile,
                     const PlannerOptions& opts = {});

/// ceil(BDP / avg) floored at 1 and capped at opts.pipelining_cap.
int optimal_pipelining(const SubGroup& group, const NetworkProfile& profile, const PlannerOptions& opts = {});

/// min(ceil(BDP / buffer), ceil(avg / buffer)), floored at 1.
int optimal_parallelism(const SubGroup& group, const NetworkProfile& profile);

/// min(ceil(BDP / avg), ceil((remaining + 1) / 2)), capped at remaining.
int min_energy_concurrency(const SubGroup& group, const NetworkProfile& profile, int remaining_channels);

/// Blend of byte share and file-count share per class; empty classes get 0.
std::array<double, 3> subgroup_proportions(const Grouping& groups, const PlannerOptions& opts = {});

/// Largest-remainder apportionment of `channels` by `weights`.
std::array<int, 3> apportion(int channels, const std::array<double, 3>& weights);

}  // namespace planner
}  // namespace httpwatt
