#include "httpwatt/planner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "httpwatt/error.hpp"

namespace httpwatt {

const char* class_name(SizeClass c) noexcept {
  switch (c) {
    case SizeClass::Small: return "small";
    case SizeClass::Medium: return "medium";
    case SizeClass::Large: return "large";
  }
  return "?";
}

void NetworkProfile::validate() const {
  if (!(bandwidth > 0) || !(rtt > 0) || !(tcp_buffer > 0)) {
    throw Error(Errc::InvalidArgument, "network profile needs positive bandwidth, rtt and tcp buffer");
  }
}

std::uint64_t Grouping::total_bytes() const noexcept {
  std::uint64_t t = 0;
  for (const auto& g : groups) t += g.total_bytes;
  return t;
}

std::size_t Grouping::file_count() const noexcept {
  std::size_t n = unknown_size.size();
  for (const auto& g : groups) n += g.files.size();
  return n;
}

bool Grouping::has_work(SizeClass c) const noexcept {
  return !(*this)[c].empty() || (c == SizeClass::Medium && !unknown_size.empty());
}

namespace planner {

std::int64_t ceil_ratio(double num, double den) {
  if (!(num > 0) || !(den > 0)) return 1;
  const double q = std::ceil(num / den);
  if (q >= 9.0e15) return static_cast<std::int64_t>(9.0e15);
  auto k = std::max<std::int64_t>(1, static_cast<std::int64_t>(q));
  // ceil of a rounded quotient can be off by one; settle on the exact definition.
  while (k > 1 && static_cast<double>(k - 1) * den >= num) --k;
  while (static_cast<double>(k) * den < num) ++k;
  return k;
}

SizeClass classify(std::uint64_t size, const NetworkProfile& profile, const PlannerOptions& opts) {
  const double bdp = profile.bdp();
  const auto s = static_cast<double>(size);
  if (s < opts.small_fraction * bdp) return SizeClass::Small;
  if (s < bdp) return SizeClass::Medium;
  return SizeClass::Large;
}

Grouping group_files(std::span<const FileEntry> files, const NetworkProfile& profile, const PlannerOptions& opts) {
  if (files.empty()) throw Error(Errc::EmptyDataset, "no files to group");
  profile.validate();
  Grouping out;
  for (auto c : kAllClasses) out[c].size_class = c;
  for (const auto& f : files) {
    if (f.size == 0) throw Error(Errc::InvalidArgument, "file '" + f.id + "' has zero size");
    auto& g = out[classify(f.size, profile, opts)];
    g.files.push_back(f);
    g.total_bytes += f.size;
  }
  for (auto& g : out.groups) {
    if (!g.files.empty()) g.avg_file_size = static_cast<double>(g.total_bytes) / static_cast<double>(g.files.size());
  }
  return out;
}

int optimal_pipelining(const SubGroup& group, const NetworkProfile& profile, const PlannerOptions& opts) {
  if (group.empty()) throw Error(Errc::InvalidArgument, "pipelining of an empty subgroup");
  const auto pp = ceil_ratio(profile.bdp(), group.avg_file_size);
  return static_cast<int>(std::clamp<std::int64_t>(pp, 1, std::max(1, opts.pipelining_cap)));
}

int optimal_parallelism(const SubGroup& group, const NetworkProfile& profile) {
  if (group.empty()) throw Error(Errc::InvalidArgument, "parallelism of an empty subgroup");
  const auto by_bdp = ceil_ratio(profile.bdp(), profile.tcp_buffer);
  const auto by_size = ceil_ratio(group.avg_file_size, profile.tcp_buffer);
  return static_cast<int>(std::clamp<std::int64_t>(std::min(by_bdp, by_size), 1, 1 << 20));
}

int min_energy_concurrency(const SubGroup& group, const NetworkProfile& profile, int remaining_channels) {
  if (remaining_channels <= 0) return 0;
  if (group.empty()) return 0;
  const auto by_bdp = ceil_ratio(profile.bdp(), group.avg_file_size);
  const std::int64_t half = (static_cast<std::int64_t>(remaining_channels) + 2) / 2;  // ceil((n+1)/2)
  return static_cast<int>(std::min({by_bdp, half, static_cast<std::int64_t>(remaining_channels)}));
}

std::array<double, 3> subgroup_proportions(const Grouping& groups, const PlannerOptions& opts) {
  std::uint64_t total_bytes = 0;
  std::size_t total_count = 0;
  for (const auto& g : groups.groups) {
    total_bytes += g.total_bytes;
    total_count += g.files.size();
  }
  std::array<double, 3> w{0.0, 0.0, 0.0};
  if (total_count == 0) {
    if (groups.unknown_size.empty()) throw Error(Errc::EmptyDataset, "no subgroup holds any file");
    w[index_of(SizeClass::Medium)] = 1.0;
    return w;
  }
  const double a = std::clamp(opts.byte_share_weight, 0.0, 1.0);
  for (auto c : kAllClasses) {
    const auto& g = groups[c];
    if (g.empty()) continue;
    const double byte_share = total_bytes ? static_cast<double>(g.total_bytes) / static_cast<double>(total_bytes) : 0.0;
    const double count_share = static_cast<double>(g.files.size()) / static_cast<double>(total_count);
    w[index_of(c)] = a * byte_share + (1.0 - a) * count_share;
  }
  const double sum = w[0] + w[1] + w[2];
  for (auto& x : w) x /= sum;
  return w;
}

std::array<int, 3> apportion(int channels, const std::array<double, 3>& weights) {
  std::array<int, 3> out{0, 0, 0};
  if (channels <= 0 || !(weights[0] + weights[1] + weights[2] > 0)) return out;
  std::array<double, 3> rem{};
  int used = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = weights[i] * channels;
    out[i] = static_cast<int>(std::floor(exact));
    rem[i] = weights[i] > 0 ? exact - out[i] : -1.0;
    used += out[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (int k = 0; used < channels; k = (k + 1) % 3) {
    if (rem[order[k]] < 0) continue;
    ++out[order[k]];
    ++used;
  }
  return out;
}

}  // namespace planner
}  // namespace httpwatt
