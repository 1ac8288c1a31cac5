#pragma once

// Flat key=value text: one pair per line, '#' starts a comment line.

#include <charconv>
#include <cstdint>
#include <istream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "idn/errors.hpp"

namespace idn::kv {

struct Entry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

/// Reads key=value lines until EOF or a line equal to `stop` (when non-empty).
inline std::vector<Entry> parse(std::istream& in, std::string_view origin,
                                std::string_view stop = {}) {
  std::vector<Entry> out;
  std::map<std::string, std::size_t, std::less<>> seen;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (!stop.empty() && raw == stop) break;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) +
                        ": expected key=value, got '" + std::string(line) + "'");
    }
    Entry e{std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))), line_no};
    if (e.key.empty()) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": empty key");
    }
    if (auto it = seen.find(e.key); it != seen.end()) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": duplicate key '" +
                        e.key + "' (first on line " + std::to_string(it->second) + ")");
    }
    seen.emplace(e.key, line_no);
    out.push_back(std::move(e));
  }
  return out;
}

template <class T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size()) {
    throw ConfigError("bad value for " + std::string(key) + ": '" + std::string(value) + "'");
  }
  return out;
}

inline std::size_t parse_size(std::string_view key, std::string_view value) {
  return parse_number<std::size_t>(key, value);
}

inline std::uint64_t parse_u64(std::string_view key, std::string_view value) {
  return parse_number<std::uint64_t>(key, value);
}

inline double parse_double(std::string_view key, std::string_view value) {
  return parse_number<double>(key, value);
}

inline bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw ConfigError("bad value for " + std::string(key) + ": '" + std::string(value) +
                    "' (expected true or false)");
}

inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace idn::kv
