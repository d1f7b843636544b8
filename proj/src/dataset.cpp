#include "httpwatt/dataset.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "httpwatt/error.hpp"
#include "httpwatt/util.hpp"

namespace httpwatt::dataset {

std::vector<ManifestEntry> parse_manifest(const std::string& text) {
  std::vector<ManifestEntry> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = util::trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream fields(t);
    ManifestEntry e;
    std::string size_text;
    fields >> e.url >> size_text;
    if (!size_text.empty()) {
      std::uint64_t size = 0;
      if (!util::parse_u64(size_text, size) || size == 0) {
        throw Error(Errc::SchemaMismatch, "manifest line " + std::to_string(line_no) + ": bad size '" + size_text + "'");
      }
      e.size = size;
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  try {
    return parse_manifest(util::read_file(path));
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

std::string format_manifest(const std::vector<ManifestEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    out += e.url;
    if (e.size) out += " " + std::to_string(*e.size);
    out += "\n";
  }
  return out;
}

namespace {

// Portable uniform draw in [0,1); std distributions differ between libraries.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::vector<FileEntry> uniform_set(const std::string& prefix, int count, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<FileEntry> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    const auto size = static_cast<std::uint64_t>(std::llround(lo + (hi - lo) * unit(rng)));
    out.push_back({"/" + prefix + "/" + std::to_string(i), size});
  }
  return out;
}

}  // namespace

std::vector<std::string> reference_names() { return {"html", "image", "video", "mixed"}; }

std::vector<FileEntry> reference(const std::string& name, std::uint64_t seed, int scale) {
  if (scale < 1) throw Error(Errc::InvalidArgument, "dataset scale must be >= 1");
  if (name == "html") return uniform_set("html", 5000 * scale, 50e3, 150e3, seed);
  if (name == "image") return uniform_set("image", 500 * scale, 2e6, 3e6, seed);
  if (name == "video") return uniform_set("video", 20 * scale, 202e6, 249e6, seed);
  if (name == "mixed") {
    std::mt19937_64 rng(seed);
    std::vector<FileEntry> out;
    const double lo = std::log(150e3);
    const double hi = std::log(250e6);
    std::uint64_t total = 0;
    const std::uint64_t goal = 7'000'000'000ULL * static_cast<std::uint64_t>(scale);
    for (int i = 0; total < goal; ++i) {
      const auto size = static_cast<std::uint64_t>(std::llround(std::exp(lo + (hi - lo) * unit(rng))));
      out.push_back({"/mixed/" + std::to_string(i), size});
      total += size;
    }
    return out;
  }
  throw Error(Errc::InvalidArgument, "unknown reference dataset '" + name + "'");
}

}  // namespace httpwatt::dataset
