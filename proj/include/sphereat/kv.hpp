#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sphereat {

/// One `key = value` entry with the 1-based line it came from.
struct KvEntry {
  std::string key;
  std::string value;
  int line = 0;
};

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// whitespace around keys and values is trimmed. Throws ParseError on a
/// line without '=' or with an empty key.
std::vector<KvEntry> parse_kv(std::string_view text);

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);
double parse_double(std::string_view text);
long long parse_int(std::string_view text);
bool parse_bool(std::string_view text);

}  // namespace sphereat
