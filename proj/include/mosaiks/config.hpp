#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mosaiks/error.hpp"

namespace mosaiks {

/// Flat key=value run configuration. Lines starting with '#' are comments.
/// Serialization is sorted by key so equal configs give equal bytes.
class RunConfig {
 public:
  static RunConfig parse(const std::string& text, const std::string& name = "config") {
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw InvalidArgument(name + ":" + std::to_string(lineno) + ": expected key=value");
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return c;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InvalidArgument("cannot open config: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
  }

  void set(const std::string& key, const std::string& value) {
    if (key.empty()) throw InvalidArgument("config: empty key");
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string str(const std::string& key, const std::string& fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) {
      values_[key] = fallback;
      return fallback;
    }
    return it->second;
  }

  std::string require(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end() || it->second.empty())
      throw InvalidArgument("missing required setting: " + key);
    return it->second;
  }

  double real(const std::string& key, double fallback) {
    if (!has(key)) set(key, format(fallback));
    return to_real(key, values_.at(key));
  }

  std::uint64_t integer(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) set(key, std::to_string(fallback));
    const std::string& s = values_.at(key);
    std::uint64_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
      throw InvalidArgument("setting " + key + " is not a nonnegative integer: " + s);
    return v;
  }

  bool flag(const std::string& key, bool fallback) {
    if (!has(key)) set(key, fallback ? "true" : "false");
    const std::string& s = values_.at(key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw InvalidArgument("setting " + key + " is not a boolean: " + s);
  }

  std::vector<double> reals(const std::string& key, const std::vector<double>& fallback) {
    if (!has(key)) {
      std::string joined;
      for (std::size_t i = 0; i < fallback.size(); ++i) joined += (i ? "," : "") + format(fallback[i]);
      set(key, joined);
    }
    std::vector<double> out;
    const std::string& s = values_.at(key);
    std::size_t start = 0;
    while (start <= s.size()) {
      auto comma = s.find(',', start);
      if (comma == std::string::npos) comma = s.size();
      const std::string item = trim(s.substr(start, comma - start));
      if (!item.empty()) out.push_back(to_real(key, item));
      start = comma + 1;
    }
    return out;
  }

  std::string serialize() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot write config: " + path);
    f << serialize();
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  static std::string format(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  static double to_real(const std::string& key, const std::string& s) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
      throw InvalidArgument("setting " + key + " is not a number: " + s);
    return v;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace mosaiks
