#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bmeta::csv {

// Splits one line on commas. No quoting support: none of our schemas need it.
std::vector<std::string> split(std::string_view line);

std::string_view trim(std::string_view s);

// Shortest round-trip decimal representation.
std::string format(double value);

std::string format_optional(const std::optional<double>& value);

std::string join(const std::vector<std::string>& cells);

void write_file(const std::string& path, const std::string& contents);
std::string read_file(const std::string& path);

}  // namespace bmeta::csv
