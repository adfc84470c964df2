#pragma once

#include <charconv>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "mosaiks/error.hpp"

namespace mosaiks {

/// Minimal comma-separated table: one header row, no quoting.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::string name;

  std::size_t column(std::string_view col) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == col) return i;
    throw DataError(name + ": missing column '" + std::string(col) + "'");
  }

  double number(std::size_t row, std::size_t col) const {
    const std::string& s = rows[row].at(col);
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
      throw DataError(name + ": line " + std::to_string(row + 2) + ": not a number: '" + s + "'");
    return v;
  }
};

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    std::string_view cell = line.substr(start, comma == std::string_view::npos ? line.npos : comma - start);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\r')) cell.remove_suffix(1);
    while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
    out.emplace_back(cell);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open: " + path);
  CsvTable t;
  t.name = path;
  std::string line;
  if (!std::getline(f, line)) throw DataError(path + ": empty file");
  t.header = split_csv_line(line);
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (cells.size() != t.header.size())
      throw DataError(path + ": line " + std::to_string(lineno) + " has " +
                      std::to_string(cells.size()) + " fields, expected " +
                      std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

}  // namespace mosaiks
