#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "httpwatt/planner.hpp"

namespace httpwatt {

/// Per-subgroup parameters plus the channel ledger the transports execute.
struct TransferPlan {
  std::array<TransferParams, 3> params{};
  std::array<bool, 3> active{false, false, false};  // class still has pending work
  int channel_bound = 0;

  TransferParams& operator[](SizeClass c) { return params[index_of(c)]; }
  const TransferParams& operator[](SizeClass c) const { return params[index_of(c)]; }

  int granted() const noexcept;
  /// Channel id -> subgroup, ids handed out Small, Medium, Large in order.
  std::vector<SizeClass> ledger() const;
  /// Throws Error{InvalidArgument} if granted channels exceed the bound or an
  /// inactive class holds channels.
  void check() const;
};

enum class StepReason { Deadline, GroupComplete, AllDone };

/// Transport contract shared by the simulator and the HTTP engine. All times
/// are seconds since the session started. Plan changes take effect at file
/// boundaries: surplus channels stop issuing requests and close once drained.
class TransferSession {
 public:
  virtual ~TransferSession() = default;

  virtual void apply(const TransferPlan& plan) = 0;
  /// Runs until `deadline`, the completion of a subgroup, or the end of the
  /// dataset, whichever comes first.
  virtual StepReason advance(double deadline) = 0;
  /// Subgroups that finished since the previous call, in completion order.
  virtual std::vector<SizeClass> take_completed_groups() = 0;

  virtual double now() const = 0;
  virtual double bytes_delivered() const = 0;  // cumulative, includes partial files
  virtual double energy() const = 0;           // cumulative joules
  virtual bool energy_available() const = 0;
  virtual bool done() const = 0;
  virtual std::uint64_t total_bytes() const = 0;
  virtual int live_channels() const = 0;
  virtual int max_live_channels() const = 0;
  virtual std::vector<std::string> failures() const { return {}; }

  static constexpr double kForever = std::numeric_limits<double>::infinity();
};

}  // namespace httpwatt
