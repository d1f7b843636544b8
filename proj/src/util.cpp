#include "httpwatt/util.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "httpwatt/error.hpp"

namespace httpwatt {

const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::UnderDetermined: return "UnderDetermined";
    case Errc::DegenerateDesign: return "DegenerateDesign";
    case Errc::OutOfRangeSample: return "OutOfRangeSample";
    case Errc::UnsortedTimeline: return "UnsortedTimeline";
    case Errc::TooFewSamples: return "TooFewSamples";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::NoActiveGroups: return "NoActiveGroups";
    case Errc::Unreachable: return "Unreachable";
    case Errc::HeadNotAllowed: return "HeadNotAllowed";
    case Errc::ProtocolError: return "ProtocolError";
    case Errc::FileFailed: return "FileFailed";
    case Errc::MetricsUnavailable: return "MetricsUnavailable";
    case Errc::SchemaMismatch: return "SchemaMismatch";
  }
  return "Unknown";
}

namespace util {

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string trim(std::string_view text) {
  std::size_t b = 0;
  std::size_t e = text.size();
  while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
  return std::string(text.substr(b, e - b));
}

bool parse_double(std::string_view text, double& out) {
  const std::string s = trim(text);
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

bool parse_u64(std::string_view text, std::uint64_t& out) {
  const std::string s = trim(text);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::InvalidArgument, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::InvalidArgument, "cannot write " + path);
  out << content;
}

std::string format_double(double v) {
  char buf[64];
  for (int prec = 6; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

}  // namespace util
}  // namespace httpwatt
