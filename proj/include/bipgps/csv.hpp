#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "bipgps/error.hpp"

namespace bipgps::csv {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split(std::string_view line, char delim = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(delim, start);
    out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

struct Row {
  std::size_t line;
  std::vector<std::string> fields;
};

/// Reads a header-bearing comma-delimited table. The header must match
/// `expected` exactly (after trimming); blank lines are skipped.
inline std::vector<Row> read_table(std::istream& in, const std::vector<std::string>& expected) {
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = line;
    if (lineno == 1 && view.size() >= 3 && view.substr(0, 3) == "\xEF\xBB\xBF") view.remove_prefix(3);
    if (trim(view).empty()) continue;
    auto fields = split(view);
    if (!have_header) {
      if (fields != expected) {
        std::string want;
        for (std::size_t k = 0; k < expected.size(); ++k) want += (k ? "," : "") + expected[k];
        throw ParseError(lineno, "expected header '" + want + "'");
      }
      have_header = true;
      continue;
    }
    if (fields.size() != expected.size()) {
      throw ParseError(lineno, "expected " + std::to_string(expected.size()) + " fields, got " +
                                   std::to_string(fields.size()));
    }
    rows.push_back({lineno, std::move(fields)});
  }
  if (!have_header) throw ParseError(lineno, "missing header");
  return rows;
}

inline double parse_double(const std::string& s, std::size_t line, const char* what) {
  double value = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || s.empty()) {
    throw ParseError(line, std::string("invalid ") + what + " '" + s + "'");
  }
  return value;
}

/// Shortest representation that round-trips a double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) return std::to_string(v);
  return std::string(buf, ptr);
}

inline std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace bipgps::csv
