#include "httpwatt/telemetry.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "httpwatt/error.hpp"
#include "httpwatt/util.hpp"

namespace httpwatt::telemetry {

namespace {

std::optional<std::string> slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool ends_with_digit(const std::string& s) { return !s.empty() && std::isdigit(static_cast<unsigned char>(s.back())); }

// Whole block devices only; partitions would double count.
bool is_whole_disk(const std::string& name) {
  for (const char* skip : {"loop", "ram", "zram", "dm-", "md", "sr", "fd"}) {
    if (name.rfind(skip, 0) == 0) return false;
  }
  if (name.rfind("nvme", 0) == 0 || name.rfind("mmcblk", 0) == 0) return name.find('p', 4) == std::string::npos;
  return !ends_with_digit(name);
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

ProcfsProvider::ProcfsProvider(std::string root, Capacity capacity) : root_(std::move(root)), capacity_(capacity) {
  if (capacity_.disk_bytes_per_sec <= 0 || capacity_.nic_bits_per_sec <= 0) {
    throw Error(Errc::InvalidArgument, "metric capacities must be positive");
  }
}

ProcfsProvider::Counters ProcfsProvider::read() const {
  Counters c;
  if (auto stat = slurp(root_ + "/stat")) {
    std::istringstream in(*stat);
    std::string label;
    in >> label;
    if (label == "cpu") {
      std::vector<std::uint64_t> v;
      std::uint64_t x;
      for (int i = 0; i < 8 && in >> x; ++i) v.push_back(x);
      if (v.size() >= 4) {
        std::uint64_t total = 0;
        for (auto t : v) total += t;
        const std::uint64_t idle = v[3] + (v.size() > 4 ? v[4] : 0);
        c.cpu_total = total;
        c.cpu_busy = total - idle;
      }
    }
  }
  if (auto mem = slurp(root_ + "/meminfo")) {
    std::istringstream in(*mem);
    std::string key;
    double value = 0;
    std::string unit;
    std::optional<double> total, avail;
    while (in >> key >> value) {
      std::getline(in, unit);
      if (key == "MemTotal:") total = value;
      if (key == "MemAvailable:") avail = value;
    }
    if (total && avail && *total > 0) c.mem_fraction = clamp01(1.0 - *avail / *total);
  }
  if (auto disks = slurp(root_ + "/diskstats")) {
    std::istringstream in(*disks);
    std::string line;
    std::uint64_t sectors = 0;
    bool any = false;
    while (std::getline(in, line)) {
      std::istringstream f(line);
      std::string major, minor, name;
      std::uint64_t v[7] = {};
      if (!(f >> major >> minor >> name)) continue;
      int n = 0;
      while (n < 7 && f >> v[n]) ++n;
      if (n < 7 || !is_whole_disk(name)) continue;
      sectors += v[2] + v[6];  // sectors read + sectors written
      any = true;
    }
    if (any) c.disk_bytes = sectors * 512;
  }
  if (auto net = slurp(root_ + "/net/dev")) {
    std::istringstream in(*net);
    std::string line;
    std::uint64_t bytes = 0;
    bool any = false;
    while (std::getline(in, line)) {
      const auto colon = line.find(':');
      if (colon == std::string::npos) continue;
      const auto name = util::trim(line.substr(0, colon));
      if (name == "lo" || name.empty()) continue;
      std::istringstream f(line.substr(colon + 1));
      std::uint64_t v[9] = {};
      int n = 0;
      while (n < 9 && f >> v[n]) ++n;
      if (n < 9) continue;
      bytes += v[0] + v[8];  // rx + tx bytes
      any = true;
    }
    if (any) c.nic_bytes = bytes;
  }
  return c;
}

power::UtilizationSample ProcfsProvider::sample(double timestamp) {
  if (!primed_) {
    prev_ = read();
    prev_time_ = timestamp;
    primed_ = true;
  }
  const Counters now = read();
  flags_ = {};
  if (!now.cpu_total) throw Error(Errc::MetricsUnavailable, "cannot read CPU counters from " + root_ + "/stat");

  power::UtilizationSample s;
  s.timestamp = timestamp;
  const double dt = timestamp - prev_time_;

  // A counter that went backwards wrapped or was reset: count nothing for it.
  auto delta = [&](const std::optional<std::uint64_t>& a, const std::optional<std::uint64_t>& b) -> std::uint64_t {
    if (!a || !b) return 0;
    if (*b < *a) {
      flags_.counter_reset = true;
      return 0;
    }
    return *b - *a;
  };

  const auto total = delta(prev_.cpu_total, now.cpu_total);
  const auto busy = delta(prev_.cpu_busy, now.cpu_busy);
  s.cpu = total > 0 ? clamp01(static_cast<double>(busy) / static_cast<double>(total)) : 0.0;

  if (now.mem_fraction) {
    s.mem = *now.mem_fraction;
  } else {
    flags_.mem_missing = true;
  }
  if (now.disk_bytes) {
    const auto d = delta(prev_.disk_bytes, now.disk_bytes);
    s.disk = dt > 0 ? clamp01(static_cast<double>(d) / dt / capacity_.disk_bytes_per_sec) : 0.0;
  } else {
    flags_.disk_missing = true;
  }
  if (now.nic_bytes) {
    const auto d = delta(prev_.nic_bytes, now.nic_bytes);
    s.nic = dt > 0 ? clamp01(static_cast<double>(d) * 8.0 / dt / capacity_.nic_bits_per_sec) : 0.0;
  } else {
    flags_.nic_missing = true;
  }
  prev_ = now;
  prev_time_ = timestamp;
  return s;
}

SyntheticProvider::SyntheticProvider(std::vector<power::UtilizationSample> script, SampleFlags flags)
    : script_(std::move(script)), flags_(flags) {
  if (script_.empty()) throw Error(Errc::InvalidArgument, "synthetic provider needs at least one sample");
}

power::UtilizationSample SyntheticProvider::sample(double timestamp) {
  auto s = script_[std::min(next_, script_.size() - 1)];
  if (next_ < script_.size()) ++next_;
  s.timestamp = timestamp;
  return s;
}

Sampler::Sampler(MetricsProvider& provider, double period, Clock clock, Sink sink)
    : provider_(provider), period_(period), clock_(std::move(clock)), sink_(std::move(sink)) {
  if (!(period_ > 0)) throw Error(Errc::InvalidArgument, "sampling period must be positive");
}

Sampler::~Sampler() { stop(); }

void Sampler::start() {
  if (running_.exchange(true)) return;
  sample_now();
  worker_ = std::thread([this] { loop(); });
}

void Sampler::stop() {
  if (!running_.exchange(false)) return;
  {
    std::lock_guard lock(wake_mu_);
  }
  wake_.notify_all();
  if (worker_.joinable()) worker_.join();
  sample_now();
}

void Sampler::sample_now() {
  if (!available_) return;
  power::UtilizationSample s;
  SampleFlags flags;
  try {
    s = provider_.sample(clock_());
    flags = provider_.last_flags();
  } catch (const Error& e) {
    if (e.code() != Errc::MetricsUnavailable) throw;
    available_ = false;
    std::lock_guard lock(mu_);
    warnings_.push_back(std::string("telemetry disabled: ") + e.what());
    return;
  }
  std::lock_guard lock(mu_);
  if (!timeline_.empty() && s.timestamp <= timeline_.back().timestamp) return;  // keep timestamps strictly increasing
  if (flags.degraded() && !degraded_.exchange(true)) {
    warnings_.push_back("memory/disk/NIC metrics unavailable; energy uses CPU utilization only");
  }
  if (flags.counter_reset) warnings_.push_back("counter reset at t=" + util::format_double(s.timestamp));
  timeline_.push_back(s);
  if (sink_) sink_(s, flags);
}

void Sampler::loop() {
  auto next = std::chrono::steady_clock::now();
  const auto step = std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(period_));
  while (running_) {
    next += step;
    {
      std::unique_lock lock(wake_mu_);
      wake_.wait_until(lock, next, [&] { return !running_; });
    }
    if (!running_) break;
    sample_now();
  }
}

std::vector<power::UtilizationSample> Sampler::timeline() const {
  std::lock_guard lock(mu_);
  return timeline_;
}

std::vector<std::string> Sampler::warnings() const {
  std::lock_guard lock(mu_);
  return warnings_;
}

WindowAccumulator::WindowAccumulator(double window_length, double start) : length_(window_length), origin_(start) {
  if (!(window_length > 0)) throw Error(Errc::InvalidArgument, "window length must be positive");
  open_.start = origin_;
  open_.end = origin_ + length_;
}

std::vector<Window> WindowAccumulator::advance_to(double t) {
  std::vector<Window> closed;
  // Boundaries come from the index so they never drift.
  while (t >= open_.end) {
    closed.push_back(std::move(open_));
    ++index_;
    open_ = Window{};
    open_.start = origin_ + static_cast<double>(index_) * length_;
    open_.end = origin_ + static_cast<double>(index_ + 1) * length_;
  }
  return closed;
}

std::vector<Window> WindowAccumulator::add(const ProgressEvent& e) {
  auto closed = advance_to(e.timestamp);
  open_.bytes_moved += e.bytes;
  return closed;
}

std::vector<Window> WindowAccumulator::add_sample(const power::UtilizationSample& s) {
  auto closed = advance_to(s.timestamp);
  open_.samples.push_back(s);
  return closed;
}

std::optional<Window> WindowAccumulator::flush(double t) {
  if (t <= open_.start) return std::nullopt;
  Window w = open_;
  w.end = std::min(t, open_.end);
  return w;
}

std::vector<Window> window_throughput(std::span<const ProgressEvent> events, double window_length, double start,
                                      std::span<const power::UtilizationSample> samples) {
  WindowAccumulator acc(window_length, start);
  std::vector<Window> out;
  auto take = [&](std::vector<Window> w) { out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end())); };
  std::size_t i = 0, j = 0;
  while (i < events.size() || j < samples.size()) {
    const bool event_next = j >= samples.size() || (i < events.size() && events[i].timestamp <= samples[j].timestamp);
    if (event_next) {
      if (events[i].timestamp < start) throw Error(Errc::UnsortedTimeline, "progress event before window origin");
      take(acc.add(events[i++]));
    } else {
      take(acc.add_sample(samples[j++]));
    }
  }
  out.push_back(acc.current());
  return out;
}

std::string telemetry_csv(std::span<const power::UtilizationSample> samples, std::span<const ProgressEvent> events) {
  std::string csv = "timestamp,cpu,mem,disk,nic,bytes_window\n";
  std::size_t e = 0;
  for (const auto& s : samples) {
    std::uint64_t bytes = 0;
    while (e < events.size() && events[e].timestamp <= s.timestamp) bytes += events[e++].bytes;
    csv += util::format_double(s.timestamp) + "," + util::format_double(s.cpu) + "," + util::format_double(s.mem) +
           "," + util::format_double(s.disk) + "," + util::format_double(s.nic) + "," + std::to_string(bytes) + "\n";
  }
  return csv;
}

std::vector<power::UtilizationSample> read_telemetry_csv(const std::string& path) {
  std::istringstream in(util::read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::SchemaMismatch, path + ": empty telemetry file");
  const auto header = util::split_csv_line(line);
  constexpr std::array<const char*, 5> need{"timestamp", "cpu", "mem", "disk", "nic"};
  std::array<std::size_t, 5> col{};
  for (std::size_t k = 0; k < need.size(); ++k) {
    auto it = std::find(header.begin(), header.end(), need[k]);
    if (it == header.end()) throw Error(Errc::SchemaMismatch, path + ": missing column '" + need[k] + "'");
    col[k] = static_cast<std::size_t>(it - header.begin());
  }
  std::vector<power::UtilizationSample> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (util::trim(line).empty()) continue;
    const auto f = util::split_csv_line(line);
    std::array<double, 5> v{};
    for (std::size_t k = 0; k < need.size(); ++k) {
      if (col[k] >= f.size() || !util::parse_double(f[col[k]], v[k]))
        throw Error(Errc::SchemaMismatch, path + ":" + std::to_string(line_no) + ": bad '" + need[k] + "'");
    }
    out.push_back({v[0], v[1], v[2], v[3], v[4]});
  }
  return out;
}

}  // namespace httpwatt::telemetry
