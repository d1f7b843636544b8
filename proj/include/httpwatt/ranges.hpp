#pragma once

#include <cstdint>
#include <vector>

namespace httpwatt {

/// One byte range of a file, fetched as a single HTTP request.
struct RangeTask {
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
  int index = 0;  // stream slot within the channel
};

/// min(parallelism, size) contiguous ranges covering [0, size). Range sizes
/// differ by at most one byte; the longer ones come first.
std::vector<RangeTask> split_ranges(std::uint64_t size, int parallelism);

}  // namespace httpwatt
