#include "httpwatt/ranges.hpp"

#include <algorithm>

#include "httpwatt/error.hpp"

namespace httpwatt {

std::vector<RangeTask> split_ranges(std::uint64_t size, int parallelism) {
  if (parallelism < 1) throw Error(Errc::InvalidArgument, "parallelism must be >= 1");
  std::vector<RangeTask> out;
  if (size == 0) return out;
  const std::uint64_t n = std::min<std::uint64_t>(static_cast<std::uint64_t>(parallelism), size);
  const std::uint64_t base = size / n;
  const std::uint64_t extra = size % n;
  std::uint64_t offset = 0;
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint64_t len = base + (i < extra ? 1 : 0);
    out.push_back({offset, len, static_cast<int>(i)});
    offset += len;
  }
  return out;
}

}  // namespace httpwatt
