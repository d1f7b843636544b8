#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "httpwatt/planner.hpp"

namespace httpwatt::dataset {

/// One manifest line: `<url> [size_bytes]`. A missing size is discovered
/// over HTTP before planning.
struct ManifestEntry {
  std::string url;
  std::optional<std::uint64_t> size;
};

std::vector<ManifestEntry> parse_manifest(const std::string& text);
std::vector<ManifestEntry> read_manifest(const std::string& path);
std::string format_manifest(const std::vector<ManifestEntry>& entries);

/// Synthetic datasets shaped like the HTML, image and video collections
/// (5000 x 50-150 KB, 500 x 2-3 MB, 20 x 202-249 MB) and a mixed 7 GB set
/// of 150 KB - 250 MB files. Sizes are uniform (log-uniform for "mixed")
/// and fully determined by `seed`. `scale` multiplies the file count (the
/// byte total for "mixed") without changing the size distribution.
std::vector<FileEntry> reference(const std::string& name, std::uint64_t seed = 1, int scale = 1);
std::vector<std::string> reference_names();

}  // namespace httpwatt::dataset
