#include "httpwatt/simulator.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "httpwatt/error.hpp"
#include "httpwatt/ranges.hpp"
#include "httpwatt/util.hpp"

namespace httpwatt::sim {

void SimProfile::validate() const {
  network.validate();
  if (per_request_overhead < 0 || idle_power < 0 || per_channel_power < 0 || per_parallel_power < 0) {
    throw Error(Errc::InvalidArgument, "simulator power and overhead constants must be non-negative");
  }
  if (rtt_jitter < 0 || rtt_jitter >= 1) throw Error(Errc::InvalidArgument, "rtt jitter must lie in [0,1)");
}

std::string profile_to_json(const SimProfile& p) {
  nlohmann::ordered_json j;
  j["bandwidth_bps"] = p.network.bandwidth;
  j["rtt_s"] = p.network.rtt;
  j["tcp_buffer_bytes"] = p.network.tcp_buffer;
  j["per_request_overhead_s"] = p.per_request_overhead;
  j["idle_power_w"] = p.idle_power;
  j["per_channel_power_w"] = p.per_channel_power;
  j["per_parallel_power_w"] = p.per_parallel_power;
  j["rtt_jitter"] = p.rtt_jitter;
  j["seed"] = p.seed;
  return j.dump(2);
}

SimProfile profile_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    SimProfile p;
    p.network.bandwidth = j.value("bandwidth_bps", p.network.bandwidth);
    p.network.rtt = j.value("rtt_s", p.network.rtt);
    p.network.tcp_buffer = j.value("tcp_buffer_bytes", p.network.tcp_buffer);
    p.per_request_overhead = j.value("per_request_overhead_s", p.per_request_overhead);
    p.idle_power = j.value("idle_power_w", p.idle_power);
    p.per_channel_power = j.value("per_channel_power_w", p.per_channel_power);
    p.per_parallel_power = j.value("per_parallel_power_w", p.per_parallel_power);
    p.rtt_jitter = j.value("rtt_jitter", p.rtt_jitter);
    p.seed = j.value("seed", p.seed);
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::SchemaMismatch, std::string("simulator profile JSON: ") + e.what());
  }
}

SimProfile load_profile(const std::string& path) {
  try {
    return profile_from_json(util::read_file(path));
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

SimulatedSession::SimulatedSession(const Grouping& groups, const SimProfile& profile)
    : profile_(profile), rng_(profile.seed) {
  profile_.validate();
  if (!groups.unknown_size.empty()) {
    throw Error(Errc::InvalidArgument, "the simulator needs the size of every file");
  }
  bw_bytes_ = profile_.network.bandwidth / 8.0;
  window_cap_ = profile_.network.tcp_buffer / profile_.network.rtt;
  bdp_ = profile_.network.bdp();
  for (auto c : kAllClasses) {
    for (const auto& f : groups[c].files) {
      pending_[index_of(c)].push_back(static_cast<int>(files_.size()));
      files_.push_back({f.size, c});
      ++files_left_[index_of(c)];
      total_bytes_ += f.size;
    }
  }
  files_left_total_ = static_cast<int>(files_.size());
  if (files_left_total_ == 0) throw Error(Errc::EmptyDataset, "nothing to simulate");
  file_done_at_.assign(files_.size(), -1.0);
}

void SimulatedSession::apply(const TransferPlan& plan) {
  plan.check();
  params_ = plan.params;
  bound_ = plan.channel_bound;
  for (auto c : kAllClasses) {
    target_[index_of(c)] = plan.active[index_of(c)] ? plan[c].concurrency : 0;
  }
  for (auto& ch : channels_) {
    ch.pipelining = params_[index_of(ch.cls)].pipelining;
    ch.parallelism = params_[index_of(ch.cls)].parallelism;
  }
  reconcile();
  issue_requests();
}

std::vector<SizeClass> SimulatedSession::take_completed_groups() {
  auto out = std::move(completed_groups_);
  completed_groups_.clear();
  return out;
}

double SimulatedSession::draw_rtt() {
  if (profile_.rtt_jitter == 0.0) return profile_.network.rtt;
  const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
  return profile_.network.rtt * (1.0 + profile_.rtt_jitter * (2.0 * u - 1.0));
}

void SimulatedSession::reconcile() {
  std::erase_if(channels_, [](const Channel& ch) { return ch.closing && ch.outstanding.empty(); });
  for (auto c : kAllClasses) {
    const int target = target_[index_of(c)];
    std::vector<Channel*> live;
    std::vector<Channel*> closing;
    for (auto& ch : channels_) {
      if (ch.cls != c) continue;
      (ch.closing ? closing : live).push_back(&ch);
    }
    int count = static_cast<int>(live.size());
    for (int i = count - 1; i >= target; --i) live[i]->closing = true;
    for (std::size_t i = 0; i < closing.size() && count < target; ++i, ++count) closing[i]->closing = false;
    while (count < target && static_cast<int>(channels_.size()) < bound_) {
      Channel ch;
      ch.id = next_channel_id_++;
      ch.cls = c;
      ch.pipelining = params_[index_of(c)].pipelining;
      ch.parallelism = params_[index_of(c)].parallelism;
      channels_.push_back(std::move(ch));
      ++count;
    }
  }
  std::sort(channels_.begin(), channels_.end(), [](const Channel& a, const Channel& b) { return a.id < b.id; });
  max_live_ = std::max(max_live_, static_cast<int>(channels_.size()));
}

void SimulatedSession::issue_requests() {
  for (auto& ch : channels_) {
    if (ch.closing) continue;
    auto& queue = pending_[index_of(ch.cls)];
    while (!queue.empty()) {
      const auto size = static_cast<double>(files_[queue.front()].size);
      const auto useful = planner::ceil_ratio(bdp_, size);
      const auto depth = std::min<std::int64_t>(ch.pipelining, useful);
      if (static_cast<std::int64_t>(ch.outstanding.size()) >= depth) break;
      const int file = queue.front();
      queue.pop_front();
      issue(ch, file);
    }
  }
}

void SimulatedSession::issue(Channel& ch, int file) {
  const auto ranges = split_ranges(files_[file].size, ch.parallelism);
  const int req = static_cast<int>(requests_.size());
  requests_.push_back({file, ch.id, static_cast<int>(ranges.size())});
  ch.outstanding.push_back(req);
  peak_outstanding_ = std::max(peak_outstanding_, static_cast<int>(ch.outstanding.size()));
  if (static_cast<int>(ch.outstanding.size()) > ch.pipelining) outstanding_ok_ = false;
  if (ch.streams.size() < ranges.size()) ch.streams.resize(ranges.size());
  for (const auto& r : ranges) {
    auto& s = ch.streams[r.index];
    s.queue.push_back({req, r.length, now_, draw_rtt()});
    if (!s.busy) start_next_range(ch, s, now_);
  }
}

void SimulatedSession::start_next_range(Channel& /*ch*/, Stream& s, double stream_free_at) {
  if (s.queue.empty()) {
    s.busy = false;
    s.in_data = false;
    s.request = -1;
    return;
  }
  const auto q = s.queue.front();
  s.queue.pop_front();
  s.busy = true;
  s.in_data = false;
  s.request = q.request;
  s.ready_at = std::max(q.issued_at + q.rtt, stream_free_at) + profile_.per_request_overhead;
  s.remaining = static_cast<double>(q.length);
  s.length = q.length;
  // A lone response no longer than the buffer is in flight all at once. Long
  // ranges and responses queued behind a predecessor share one TCP window.
  const bool backlogged = q.issued_at + q.rtt < stream_free_at;
  s.cap = (backlogged || static_cast<double>(q.length) > profile_.network.tcp_buffer) ? window_cap_ : 0.0;
}

void SimulatedSession::finish_range(Channel& ch, Stream& s) {
  range_bytes_done_ += s.length;
  auto& req = requests_[s.request];
  if (--req.ranges_left == 0) {
    const auto& f = files_[req.file];
    completed_bytes_ += f.size;
    file_done_at_[req.file] = now_;
    std::erase(ch.outstanding, s.request);
    --files_left_total_;
    if (--files_left_[index_of(f.cls)] == 0) completed_groups_.push_back(f.cls);
  }
  start_next_range(ch, s, now_);
}

double SimulatedSession::current_power() const {
  double p = profile_.idle_power;
  for (const auto& ch : channels_) {
    if (ch.outstanding.empty()) continue;
    p += profile_.per_channel_power;
    int busy = 0;
    for (const auto& s : ch.streams) busy += s.busy ? 1 : 0;
    if (busy > 1) p += profile_.per_parallel_power * (busy - 1);
  }
  return p;
}

StepReason SimulatedSession::advance(double deadline) {
  if (done()) return StepReason::AllDone;
  const std::size_t completions_before = completed_groups_.size();
  while (true) {
    int capped = 0;
    int uncapped = 0;
    bool any_busy = false;
    for (const auto& ch : channels_) {
      for (const auto& s : ch.streams) {
        if (s.busy && s.in_data) ++(s.cap > 0 ? capped : uncapped);
        any_busy = any_busy || s.busy;
      }
    }
    // Max-min fair split: window-limited streams keep their cap when it is
    // below the equal share and the rest goes to the others.
    double share = (capped + uncapped) ? bw_bytes_ / (capped + uncapped) : 0.0;
    if (capped && uncapped && window_cap_ < share) {
      share = (bw_bytes_ - capped * window_cap_) / uncapped;
    }
    double t_next = deadline;
    double sum_rate = 0.0;
    for (auto& ch : channels_) {
      for (auto& s : ch.streams) {
        if (!s.busy) continue;
        if (s.in_data) {
          s.rate = s.cap > 0 ? std::min(share, s.cap) : share;
          s.finish_at = now_ + s.remaining / s.rate;
          t_next = std::min(t_next, s.finish_at);
          sum_rate += s.rate;
        } else {
          t_next = std::min(t_next, s.ready_at);
        }
      }
    }
    if (!any_busy && std::isinf(t_next)) {
      throw Error(Errc::InvalidArgument, "simulation stalled: remaining work holds no channels");
    }
    peak_rate_ = std::max(peak_rate_, sum_rate);

    const double dt = t_next - now_;
    if (dt > 0) {
      const double watts = current_power();
      energy_ += watts * dt;
      if (!segments_.empty() && segments_.back().watts == watts && segments_.back().end == now_) {
        segments_.back().end = t_next;
      } else {
        segments_.push_back({now_, t_next, watts});
      }
    }

    std::vector<std::pair<Channel*, Stream*>> finished;
    double partial = 0.0;
    for (auto& ch : channels_) {
      for (auto& s : ch.streams) {
        if (!(s.busy && s.in_data)) continue;
        if (s.finish_at == t_next) {
          s.remaining = 0.0;
          finished.emplace_back(&ch, &s);
        } else {
          s.remaining = std::max(0.0, s.remaining - s.rate * dt);
          partial += static_cast<double>(s.length) - s.remaining;
        }
      }
    }
    now_ = t_next;
    for (auto [ch, s] : finished) {
      s->in_data = false;
      finish_range(*ch, *s);
    }
    for (auto& ch : channels_) {
      for (auto& s : ch.streams) {
        if (s.busy && !s.in_data && s.ready_at <= now_) s.in_data = true;
      }
    }
    // Streams that picked up a new range this step have not moved any bytes yet.
    progress_bytes_ = static_cast<double>(range_bytes_done_) + partial;

    reconcile();
    issue_requests();

    if (done()) return StepReason::AllDone;
    if (completed_groups_.size() > completions_before) return StepReason::GroupComplete;
    if (now_ >= deadline) return StepReason::Deadline;
  }
}

sla::TransferOutcome simulate_transfer(const TransferPlan& plan, const Grouping& groups, const SimProfile& profile,
                                       const sla::SlaOptions& opts) {
  SimulatedSession session(groups, profile);
  return sla::run_static(plan, groups, session, opts);
}

SweepPoint run_level(const Grouping& groups, const SimProfile& profile, int level, const SweepSpec& spec,
                     const sla::SlaOptions& opts) {
  SimulatedSession session(groups, profile);
  const auto out = sla::run_fixed_level(groups, profile.network, level, session, opts, spec.pipelining,
                                        spec.parallelism);
  return {level, out.achieved_throughput, out.energy, out.duration, out.ratio()};
}

namespace {

void check_spec(const SweepSpec& spec) {
  if (spec.levels.empty()) throw Error(Errc::InvalidArgument, "sweep range is empty");
  for (int level : spec.levels) {
    if (level < 1) throw Error(Errc::InvalidArgument, "sweep levels must be >= 1");
  }
}

void sort_points(std::vector<SweepPoint>& points) {
  std::stable_sort(points.begin(), points.end(),
                   [](const SweepPoint& a, const SweepPoint& b) { return a.concurrency < b.concurrency; });
}

}  // namespace

std::vector<SweepPoint> throughput_energy_sweep_serial(const Grouping& groups, const SimProfile& profile,
                                                       const SweepSpec& spec, const sla::SlaOptions& opts) {
  check_spec(spec);
  std::vector<SweepPoint> out;
  out.reserve(spec.levels.size());
  for (int level : spec.levels) out.push_back(run_level(groups, profile, level, spec, opts));
  sort_points(out);
  return out;
}

std::vector<SweepPoint> throughput_energy_sweep(const Grouping& groups, const SimProfile& profile,
                                                const SweepSpec& spec, const sla::SlaOptions& opts) {
  check_spec(spec);
  const auto n = static_cast<std::ptrdiff_t>(spec.levels.size());
  std::vector<SweepPoint> out(spec.levels.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      out[i] = run_level(groups, profile, spec.levels[i], spec, opts);
    } catch (...) {
#pragma omp critical(sweep_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  sort_points(out);
  return out;
}

std::string sweep_to_csv(const std::vector<SweepPoint>& points, const std::string& header_comment) {
  std::string csv;
  if (!header_comment.empty()) csv += "# " + header_comment + "\n";
  csv += "concurrency,throughput_bps,energy_j,ratio\n";
  for (const auto& p : points) {
    csv += std::to_string(p.concurrency) + "," + util::format_double(p.throughput) + "," +
           util::format_double(p.energy) + "," + util::format_double(p.ratio) + "\n";
  }
  return csv;
}

}  // namespace httpwatt::sim
