#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace binheads {

/// Shortest-exact decimal form: 17 significant digits, round-trips bit-for-bit.
std::string format_real(double value);

/// Strict decimal parse of the whole field; throws std::invalid_argument.
double parse_real(std::string_view field);
long long parse_integer(std::string_view field);

std::vector<std::string_view> split_fields(std::string_view line, char sep = ',');

/// Lines of `text` without terminators; a trailing '\r' is dropped.
std::vector<std::string_view> split_lines(std::string_view text);

std::string read_text_file(const std::filesystem::path& path);

/// Writes `path.tmp` and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

/// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace binheads
