#include "sphereat/kv.hpp"

#include <charconv>
#include <cmath>
#include <system_error>

#include "sphereat/errors.hpp"

namespace sphereat {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<KvEntry> parse_kv(std::string_view text) {
  std::vector<KvEntry> out;
  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    const auto raw = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    ++line_no;
    std::string line = trim(raw);
    if (!line.empty() && line[0] != '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ParseError("line " + std::to_string(line_no) + ": expected `key = value`");
      }
      KvEntry e{trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1)), line_no};
      if (e.key.empty()) throw ParseError("line " + std::to_string(line_no) + ": empty key");
      out.push_back(std::move(e));
    }
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw ContractViolation("format_double failed");
  return std::string(buf, ptr);
}

double parse_double(std::string_view text) {
  const std::string t = trim(text);
  double v = 0.0;
  // Allow simple fractions such as 8/255.
  if (const auto slash = t.find('/'); slash != std::string::npos) {
    return parse_double(t.substr(0, slash)) / parse_double(t.substr(slash + 1));
  }
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty() || !std::isfinite(v)) {
    throw ParseError("not a number: '" + t + "'");
  }
  return v;
}

long long parse_int(std::string_view text) {
  const std::string t = trim(text);
  long long v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) throw ParseError("not an integer: '" + t + "'");
  return v;
}

bool parse_bool(std::string_view text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ParseError("not a boolean: '" + t + "'");
}

}  // namespace sphereat
