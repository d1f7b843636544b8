#pragma once

#include <stdexcept>
#include <string>

namespace httpwatt {

enum class Errc {
  // power
  UnderDetermined,
  DegenerateDesign,
  OutOfRangeSample,
  UnsortedTimeline,
  TooFewSamples,
  // planner / sla
  EmptyDataset,
  InvalidArgument,
  NoActiveGroups,
  // transport
  Unreachable,
  HeadNotAllowed,
  ProtocolError,
  FileFailed,
  // telemetry
  MetricsUnavailable,
  // io
  SchemaMismatch,
};

const char* errc_name(Errc code) noexcept;

/// Base exception for every recoverable failure raised by the library.
/// The code lets callers map failures onto exit codes without string matching.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace httpwatt
