#pragma once

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dode/error.hpp"

namespace dode::csv {

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view line, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

// A parsed CSV table: header names plus string cells. Blank lines and lines
// starting with '#' are skipped.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line_numbers;

  int column(std::string_view name) const {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  }
};

inline Table parse(std::istream& in, std::string_view source, bool has_header = true) {
  Table t;
  std::string line;
  int lineno = 0;
  bool need_header = has_header;
  while (std::getline(in, line)) {
    ++lineno;
    auto trimmed = trim(line);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    auto cells = split(trimmed);
    if (need_header) {
      t.header = std::move(cells);
      need_header = false;
      continue;
    }
    if (has_header && cells.size() != t.header.size()) {
      throw ParseError(std::string(source) + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(t.header.size()) + " columns, got " +
                       std::to_string(cells.size()));
    }
    t.rows.push_back(std::move(cells));
    t.line_numbers.push_back(lineno);
  }
  if (need_header) throw ParseError(std::string(source) + ": missing header");
  return t;
}

inline Table read_file(const std::string& path, bool has_header = true) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  return parse(in, path, has_header);
}

inline double to_double(const std::string& s, std::string_view what) {
  const char* begin = s.c_str();
  char* end = nullptr;
  errno = 0;
  double v = std::strtod(begin, &end);
  if (s.empty() || end != begin + s.size() || errno == ERANGE) {
    throw ParseError("invalid number for " + std::string(what) + ": '" + s + "'");
  }
  return v;
}

inline long long to_int(const std::string& s, std::string_view what) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ParseError("invalid integer for " + std::string(what) + ": '" + s + "'");
  }
  return v;
}

inline bool to_bool(const std::string& s, std::string_view what) {
  std::string l;
  std::transform(s.begin(), s.end(), std::back_inserter(l), [](unsigned char c) { return std::tolower(c); });
  if (l == "1" || l == "true" || l == "yes") return true;
  if (l == "0" || l == "false" || l == "no") return false;
  throw ParseError("invalid boolean for " + std::string(what) + ": '" + s + "'");
}

// Shortest representation that parses back to the same double.
inline std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace dode::csv
