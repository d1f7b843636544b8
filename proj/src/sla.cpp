#include "httpwatt/sla.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "httpwatt/error.hpp"

namespace httpwatt {

int TransferPlan::granted() const noexcept {
  int n = 0;
  for (const auto& p : params) n += p.concurrency;
  return n;
}

std::vector<SizeClass> TransferPlan::ledger() const {
  std::vector<SizeClass> out;
  for (auto c : kAllClasses) out.insert(out.end(), static_cast<std::size_t>((*this)[c].concurrency), c);
  return out;
}

void TransferPlan::check() const {
  if (granted() > channel_bound) {
    throw Error(Errc::InvalidArgument, "plan grants " + std::to_string(granted()) + " channels, bound is " +
                                           std::to_string(channel_bound));
  }
  for (auto c : kAllClasses) {
    const auto& p = (*this)[c];
    if (p.concurrency < 0 || p.pipelining < 1 || p.parallelism < 1) {
      throw Error(Errc::InvalidArgument, std::string("invalid parameters for ") + class_name(c));
    }
    if (!active[index_of(c)] && p.concurrency > 0) {
      throw Error(Errc::InvalidArgument, std::string("inactive class ") + class_name(c) + " holds channels");
    }
  }
}

namespace sla {

const char* mode_name(Mode m) noexcept {
  switch (m) {
    case Mode::MinEnergy: return "min-energy";
    case Mode::MaxThroughput: return "max-throughput";
    case Mode::EnergyEfficiency: return "energy-efficiency";
    case Mode::FlexibleThroughput: return "flexible";
  }
  return "?";
}

Mode parse_mode(const std::string& name) {
  if (name == "min-energy" || name == "mine") return Mode::MinEnergy;
  if (name == "max-throughput" || name == "maxthr") return Mode::MaxThroughput;
  if (name == "energy-efficiency" || name == "ee") return Mode::EnergyEfficiency;
  if (name == "flexible" || name == "flexible-throughput") return Mode::FlexibleThroughput;
  throw Error(Errc::InvalidArgument, "unknown SLA mode '" + name + "'");
}

int SlaRequest::channel_bound() const noexcept {
  return mode == Mode::MinEnergy || mode == Mode::MaxThroughput ? channel_count : max_channels;
}

void SlaRequest::validate() const {
  switch (mode) {
    case Mode::MinEnergy:
    case Mode::MaxThroughput:
      if (channel_count < 1) throw Error(Errc::InvalidArgument, "--channels must be >= 1");
      break;
    case Mode::EnergyEfficiency:
      if (max_channels < 1) throw Error(Errc::InvalidArgument, "--max-channels must be >= 1");
      break;
    case Mode::FlexibleThroughput:
      if (max_channels < 1) throw Error(Errc::InvalidArgument, "--max-channels must be >= 1");
      if (!(target_fraction > 0.0) || target_fraction > 1.0) {
        throw Error(Errc::InvalidArgument, "target fraction must lie in (0,1]");
      }
      if (!(reference_throughput > 0.0)) throw Error(Errc::InvalidArgument, "--reference must be positive");
      break;
  }
}

namespace {

std::array<bool, 3> work_mask(const Grouping& groups) {
  return {groups.has_work(SizeClass::Small), groups.has_work(SizeClass::Medium), groups.has_work(SizeClass::Large)};
}

void require_work(const Grouping& groups) {
  const auto mask = work_mask(groups);
  if (!(mask[0] || mask[1] || mask[2])) throw Error(Errc::EmptyDataset, "dataset has no files");
}

TransferPlan base_plan(const Grouping& groups, const NetworkProfile& profile, int bound,
                       const std::array<bool, 3>& active, const PlannerOptions& opts) {
  TransferPlan plan;
  plan.channel_bound = bound;
  plan.active = active;
  for (auto c : kAllClasses) {
    if (groups.has_work(c)) plan[c] = optimal_params(groups, c, profile, opts);
  }
  return plan;
}

// Concurrency term of the min-energy formula; a class known only through
// unknown-size files contributes a single channel.
int min_energy_share(const Grouping& groups, SizeClass c, const NetworkProfile& profile, int remaining) {
  if (!groups[c].empty()) return planner::min_energy_concurrency(groups[c], profile, remaining);
  return remaining > 0 ? 1 : 0;
}

constexpr std::array<SizeClass, 3> kRotation{SizeClass::Large, SizeClass::Medium, SizeClass::Small};

}  // namespace

TransferParams optimal_params(const Grouping& groups, SizeClass c, const NetworkProfile& profile,
                              const PlannerOptions& opts) {
  TransferParams p;
  const auto& g = groups[c];
  if (!g.empty()) {
    p.pipelining = planner::optimal_pipelining(g, profile, opts);
    p.parallelism = planner::optimal_parallelism(g, profile);
  }
  return p;
}

TransferPlan plan_min_energy(const Grouping& groups, const NetworkProfile& profile, int channel_count,
                             const PlannerOptions& opts) {
  require_work(groups);
  if (channel_count < 1) throw Error(Errc::InvalidArgument, "channel count must be >= 1");
  auto plan = base_plan(groups, profile, channel_count, work_mask(groups), opts);
  int remaining = channel_count;
  for (auto c : kAllClasses) {
    if (!plan.active[index_of(c)]) continue;
    const int cc = min_energy_share(groups, c, profile, remaining);
    plan[c].concurrency = cc;
    remaining -= cc;
  }
  plan.check();
  return plan;
}

TransferPlan plan_max_throughput(const Grouping& groups, const NetworkProfile& profile, int channel_count,
                                 const PlannerOptions& opts) {
  require_work(groups);
  if (channel_count < 1) throw Error(Errc::InvalidArgument, "channel count must be >= 1");
  auto plan = base_plan(groups, profile, channel_count, work_mask(groups), opts);
  std::vector<SizeClass> order;
  for (auto c : kRotation) {
    if (plan.active[index_of(c)]) order.push_back(c);
  }
  for (int i = 0; i < channel_count; ++i) ++plan[order[static_cast<std::size_t>(i) % order.size()]].concurrency;
  plan.check();
  return plan;
}

TransferPlan redistribute_on_completion(const TransferPlan& plan, SizeClass finished) {
  std::vector<SizeClass> order;
  for (auto c : kRotation) {
    if (c != finished && plan.active[index_of(c)]) order.push_back(c);
  }
  if (order.empty()) throw Error(Errc::NoActiveGroups, "every subgroup has finished");
  TransferPlan next = plan;
  const int freed = next[finished].concurrency;
  next[finished].concurrency = 0;
  next.active[index_of(finished)] = false;
  for (int i = 0; i < freed; ++i) ++next[order[static_cast<std::size_t>(i) % order.size()]].concurrency;
  return next;
}

TransferPlan plan_proportional(const Grouping& groups, const NetworkProfile& profile, int level,
                               const std::array<bool, 3>& active, const PlannerOptions& opts) {
  auto plan = base_plan(groups, profile, level, active, opts);
  auto w = planner::subgroup_proportions(groups, opts);
  double sum = 0.0;
  for (auto c : kAllClasses) {
    const int i = index_of(c);
    if (!active[i]) w[i] = 0.0;
    // A class with work but no weight (unknown sizes only) still deserves a share.
    if (active[i] && w[i] == 0.0) w[i] = 1e-9;
    sum += w[i];
  }
  if (sum > 0) {
    for (auto& x : w) x /= sum;
  }
  const auto alloc = planner::apportion(level, w);
  for (auto c : kAllClasses) plan[c].concurrency = alloc[index_of(c)];
  plan.check();
  return plan;
}

TransferPlan plan_small_first(const Grouping& groups, const NetworkProfile& profile, int level,
                              const std::array<bool, 3>& active, const PlannerOptions& opts) {
  auto plan = base_plan(groups, profile, level, active, opts);
  int remaining = level;
  std::optional<SizeClass> first;
  for (auto c : kAllClasses) {
    if (!active[index_of(c)]) continue;
    if (!first) first = c;
    const int cc = min_energy_share(groups, c, profile, remaining);
    plan[c].concurrency = cc;
    remaining -= cc;
  }
  if (first) plan[*first].concurrency += remaining;
  plan.check();
  return plan;
}

std::vector<int> probe_levels(int max_channels, int step) {
  std::vector<int> out;
  if (max_channels < 1) return out;
  out.push_back(1);
  for (int level = step; level < max_channels; level += step) {
    if (level > 1) out.push_back(level);
  }
  if (out.back() != max_channels) out.push_back(max_channels);
  return out;
}

namespace {

/// Single control loop: owns the plan, applies it to the session, and keeps
/// the window/history bookkeeping shared by every algorithm.
class Controller {
 public:
  using CompletionPolicy = std::function<void(SizeClass)>;

  Controller(Mode mode, const Grouping& groups, TransferSession& session, const SlaOptions& opts, int bound)
      : groups_(groups), session_(session), opts_(opts) {
    outcome_.mode = mode;
    outcome_.channel_bound = bound;
    plan_.channel_bound = bound;
    plan_.active = work_mask(groups);
    for (auto c : kAllClasses) {
      outcome_.groups[index_of(c)].files = groups[c].files.size() + (c == SizeClass::Medium ? groups.unknown_size.size() : 0);
      outcome_.groups[index_of(c)].bytes = groups[c].total_bytes;
    }
  }

  TransferPlan& plan() { return plan_; }
  TransferOutcome& outcome() { return outcome_; }
  TransferSession& session() { return session_; }
  void set_policy(CompletionPolicy policy) { policy_ = std::move(policy); }

  void schedule(const TransferPlan& next) {
    next.check();
    if (next.granted() > outcome_.channel_bound) {
      throw Error(Errc::InvalidArgument, "scheduling would exceed the request's channel bound");
    }
    const double t = session_.now();
    for (auto c : kAllClasses) {
      const auto& p = next[c];
      if (p.concurrency > 0 && !(recorded_[index_of(c)] && last_[index_of(c)] == p)) {
        outcome_.history.push_back({t, c, p, last_window_.throughput(), last_window_.energy});
        last_[index_of(c)] = p;
        recorded_[index_of(c)] = true;
      }
    }
    plan_ = next;
    session_.apply(plan_);
  }

  void note_level(int level) { outcome_.level_trace.emplace_back(session_.now(), level); }

  /// One tumbling window; `full` is false when the dataset ended inside it.
  WindowRecord run_window(bool& full) {
    WindowRecord w;
    w.start = session_.now();
    w.concurrency = plan_.granted();
    const double bytes0 = session_.bytes_delivered();
    const double energy0 = session_.energy();
    const double deadline = w.start + opts_.window_seconds;
    full = false;
    while (true) {
      const auto reason = session_.advance(deadline);
      handle_completions();
      if (reason == StepReason::AllDone || session_.done()) break;
      if (reason == StepReason::Deadline) {
        full = true;
        break;
      }
    }
    w.end = session_.now();
    w.bytes = session_.bytes_delivered() - bytes0;
    w.energy = session_.energy() - energy0;
    if (w.end > w.start) {
      outcome_.windows.push_back(w);
      last_window_ = w;
    }
    return w;
  }

  void run_to_completion() {
    bool full = true;
    while (!session_.done()) run_window(full);
  }

  TransferOutcome finish() {
    outcome_.duration = session_.now();
    outcome_.total_bytes = session_.total_bytes();
    outcome_.energy_available = session_.energy_available();
    outcome_.energy = session_.energy_available() ? session_.energy() : 0.0;
    outcome_.achieved_throughput =
        outcome_.duration > 0 ? static_cast<double>(outcome_.total_bytes) * 8.0 / outcome_.duration : 0.0;
    outcome_.max_live_channels = session_.max_live_channels();
    outcome_.failures = session_.failures();
    return outcome_;
  }

 private:
  void handle_completions() {
    for (auto c : session_.take_completed_groups()) {
      outcome_.groups[index_of(c)].completed_at = session_.now();
      if (!plan_.active[index_of(c)]) continue;
      if (policy_) {
        policy_(c);
      } else {
        retire(c);
      }
    }
  }

  void retire(SizeClass c) {
    auto next = plan_;
    next[c].concurrency = 0;
    next.active[index_of(c)] = false;
    schedule(next);
  }

  const Grouping& groups_;
  TransferSession& session_;
  SlaOptions opts_;
  TransferPlan plan_;
  TransferOutcome outcome_;
  CompletionPolicy policy_;
  std::array<TransferParams, 3> last_{};
  std::array<bool, 3> recorded_{false, false, false};
  WindowRecord last_window_;
};

void redistribute_policy(Controller& ctl, SizeClass c) {
  try {
    ctl.schedule(redistribute_on_completion(ctl.plan(), c));
  } catch (const Error& e) {
    if (e.code() != Errc::NoActiveGroups) throw;
  }
}

}  // namespace

TransferOutcome run_min_energy(const Grouping& groups, const NetworkProfile& profile, int channel_count,
                               TransferSession& session, const SlaOptions& opts) {
  Controller ctl(Mode::MinEnergy, groups, session, opts, channel_count);
  ctl.schedule(plan_min_energy(groups, profile, channel_count, opts.planner));
  ctl.note_level(ctl.plan().granted());
  // Static plan: freed channels only wake classes that never received a grant.
  ctl.set_policy([&](SizeClass c) {
    auto next = ctl.plan();
    int freed = next[c].concurrency;
    next[c].concurrency = 0;
    next.active[index_of(c)] = false;
    for (auto d : kAllClasses) {
      if (!next.active[index_of(d)] || next[d].concurrency > 0) continue;
      const int cc = min_energy_share(groups, d, profile, freed);
      next[d].concurrency = cc;
      freed -= cc;
    }
    ctl.schedule(next);
  });
  ctl.run_to_completion();
  auto out = ctl.finish();
  out.final_concurrency = channel_count;
  return out;
}

TransferOutcome run_max_throughput(const Grouping& groups, const NetworkProfile& profile, int channel_count,
                                   TransferSession& session, const SlaOptions& opts) {
  Controller ctl(Mode::MaxThroughput, groups, session, opts, channel_count);
  ctl.schedule(plan_max_throughput(groups, profile, channel_count, opts.planner));
  ctl.note_level(ctl.plan().granted());
  ctl.set_policy([&](SizeClass c) { redistribute_policy(ctl, c); });
  ctl.run_to_completion();
  auto out = ctl.finish();
  out.final_concurrency = channel_count;
  return out;
}

TransferOutcome run_energy_efficiency(const Grouping& groups, const NetworkProfile& profile, int max_channels,
                                      TransferSession& session, const SlaOptions& opts) {
  require_work(groups);
  if (max_channels < 1) throw Error(Errc::InvalidArgument, "max channels must be >= 1");
  if (!session.energy_available()) {
    throw Error(Errc::InvalidArgument, "energy-efficiency search needs an energy source (power model)");
  }
  Controller ctl(Mode::EnergyEfficiency, groups, session, opts, max_channels);
  ctl.set_policy([&](SizeClass c) { redistribute_policy(ctl, c); });

  auto& out = ctl.outcome();
  for (int level : probe_levels(max_channels, opts.probe_step)) {
    if (session.done()) {
      out.dataset_exhausted_during_search = true;
      break;
    }
    ctl.schedule(plan_proportional(groups, profile, level, ctl.plan().active, opts.planner));
    ctl.note_level(level);
    bool full = false;
    const auto w = ctl.run_window(full);
    if (!full) out.dataset_exhausted_during_search = true;
    if (w.end <= w.start) continue;
    EfficiencySample s;
    s.concurrency = level;
    s.window_seconds = w.end - w.start;
    s.window_throughput = w.throughput();
    s.window_energy = w.energy;
    s.ratio = w.energy > 0 ? w.bytes * 8.0 / w.energy : 0.0;
    s.full_window = full;
    out.probes.push_back(s);
  }

  // Argmax over full windows when any exist; lowest concurrency wins ties.
  const bool any_full = std::any_of(out.probes.begin(), out.probes.end(), [](const auto& s) { return s.full_window; });
  const EfficiencySample* best = nullptr;
  for (const auto& s : out.probes) {
    if (any_full && !s.full_window) continue;
    if (!best || s.ratio > best->ratio) best = &s;
  }
  const int chosen = best ? best->concurrency : 1;
  out.chosen_concurrency = chosen;
  if (!session.done()) {
    ctl.schedule(plan_proportional(groups, profile, chosen, ctl.plan().active, opts.planner));
    ctl.note_level(chosen);
    ctl.run_to_completion();
  }
  auto result = ctl.finish();
  result.final_concurrency = chosen;
  return result;
}

TransferOutcome run_flexible_throughput(const Grouping& groups, const NetworkProfile& profile,
                                        double target_throughput, int max_channels, TransferSession& session,
                                        const SlaOptions& opts) {
  require_work(groups);
  if (max_channels < 1) throw Error(Errc::InvalidArgument, "max channels must be >= 1");
  if (!(target_throughput > 0)) throw Error(Errc::InvalidArgument, "target throughput must be positive");
  Controller ctl(Mode::FlexibleThroughput, groups, session, opts, max_channels);
  int level = 1;
  ctl.set_policy([&](SizeClass c) {
    auto active = ctl.plan().active;
    active[index_of(c)] = false;
    if (!(active[0] || active[1] || active[2])) {
      auto next = ctl.plan();
      next[c].concurrency = 0;
      next.active = active;
      ctl.schedule(next);
      return;
    }
    ctl.schedule(plan_small_first(groups, profile, level, active, opts.planner));
  });
  ctl.schedule(plan_small_first(groups, profile, level, ctl.plan().active, opts.planner));
  ctl.note_level(level);

  auto& out = ctl.outcome();
  bool jumped = false;
  while (!session.done()) {
    bool full = false;
    const auto w = ctl.run_window(full);
    if (!full) break;
    const double actual = w.throughput();
    if (actual >= target_throughput) continue;
    if (level >= max_channels) {
      out.target_unreachable = true;
      continue;
    }
    int next = level + 1;
    if (!jumped) {
      jumped = true;
      const auto ratio = actual > 0 ? planner::ceil_ratio(target_throughput, actual) : max_channels;
      next = static_cast<int>(std::max<std::int64_t>(next, std::min<std::int64_t>(ratio, max_channels)));
    }
    level = std::min(next, max_channels);
    ctl.schedule(plan_small_first(groups, profile, level, ctl.plan().active, opts.planner));
    ctl.note_level(level);
  }
  auto result = ctl.finish();
  result.final_concurrency = level;
  return result;
}

TransferOutcome run_static(const TransferPlan& plan, const Grouping& groups, TransferSession& session,
                           const SlaOptions& opts) {
  Controller ctl(Mode::MaxThroughput, groups, session, opts, plan.channel_bound);
  ctl.schedule(plan);
  ctl.note_level(plan.granted());
  ctl.run_to_completion();
  auto out = ctl.finish();
  out.final_concurrency = plan.granted();
  return out;
}

TransferOutcome run_fixed_level(const Grouping& groups, const NetworkProfile& profile, int level,
                                TransferSession& session, const SlaOptions& opts, std::optional<int> pipelining,
                                std::optional<int> parallelism) {
  require_work(groups);
  if (level < 1) throw Error(Errc::InvalidArgument, "concurrency level must be >= 1");
  Controller ctl(Mode::EnergyEfficiency, groups, session, opts, level);
  auto plan = plan_proportional(groups, profile, level, ctl.plan().active, opts.planner);
  for (auto c : kAllClasses) {
    if (pipelining) plan[c].pipelining = *pipelining;
    if (parallelism) plan[c].parallelism = *parallelism;
  }
  ctl.set_policy([&](SizeClass c) { redistribute_policy(ctl, c); });
  ctl.schedule(plan);
  ctl.note_level(level);
  ctl.run_to_completion();
  auto out = ctl.finish();
  out.chosen_concurrency = level;
  out.final_concurrency = level;
  return out;
}

TransferOutcome run(const SlaRequest& request, const Grouping& groups, const NetworkProfile& profile,
                    TransferSession& session, const SlaOptions& opts) {
  request.validate();
  switch (request.mode) {
    case Mode::MinEnergy: return run_min_energy(groups, profile, request.channel_count, session, opts);
    case Mode::MaxThroughput: return run_max_throughput(groups, profile, request.channel_count, session, opts);
    case Mode::EnergyEfficiency: return run_energy_efficiency(groups, profile, request.max_channels, session, opts);
    case Mode::FlexibleThroughput:
      return run_flexible_throughput(groups, profile, request.target_throughput(), request.max_channels, session,
                                     opts);
  }
  throw Error(Errc::InvalidArgument, "unhandled SLA mode");
}

}  // namespace sla
}  // namespace httpwatt
