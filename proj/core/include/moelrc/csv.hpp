#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace moelrc::csv {

/// %.9g; CSV output across the project uses this for every float.
std::string format_double(double v);

/// Quotes fields containing separators, quotes or newlines.
std::string escape(const std::string& field);

std::string join(const std::vector<std::string>& fields);

/// Minimal reader for files written by this project (RFC 4180 quoting).
std::vector<std::vector<std::string>> parse(const std::string& text);

}  // namespace moelrc::csv
