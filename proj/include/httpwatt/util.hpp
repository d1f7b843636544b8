#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace httpwatt::util {

std::vector<std::string> split_csv_line(std::string_view line);
bool parse_double(std::string_view text, double& out);
bool parse_u64(std::string_view text, std::uint64_t& out);
std::string trim(std::string_view text);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

/// Shortest round-trippable decimal form; keeps CSV output bit-reproducible.
std::string format_double(double v);

}  // namespace httpwatt::util
