#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mpr/errors.hpp"

namespace mpr {

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(const std::string& text, const std::string& field) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(text, &pos);
    if (trim(text.substr(pos)).empty()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(field + ": expected a real number, got '" + text + "'");
}

inline long parse_long(const std::string& text, const std::string& field) {
  long v = 0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw ConfigError(field + ": expected an integer, got '" + text + "'");
  }
  return v;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace detail

/// Flat `key = value` configuration (UTF-8 text, `#` starts a comment).
class Config {
 public:
  Config() = default;

  static Config parse(std::string_view text) {
    Config cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string t = detail::trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
      }
      const std::string key = detail::trim(t.substr(0, eq));
      if (key.empty()) {
        throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
      }
      cfg.values_[key] = detail::trim(t.substr(eq + 1));
    }
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::optional<std::string> find(const std::string& key) const {
    if (auto it = values_.find(key); it != values_.end()) return it->second;
    return std::nullopt;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    return find(key).value_or(fallback);
  }
  double get_double(const std::string& key, double fallback) const {
    const auto v = find(key);
    return v ? detail::parse_double(*v, key) : fallback;
  }
  long get_int(const std::string& key, long fallback) const {
    const auto v = find(key);
    return v ? detail::parse_long(*v, key) : fallback;
  }
  bool get_bool(const std::string& key, bool fallback) const {
    const auto v = find(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError(key + ": expected a boolean, got '" + *v + "'");
  }
  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const {
    const auto v = find(key);
    if (!v) return fallback;
    std::vector<double> out;
    for (const auto& item : detail::split(*v, ',')) out.push_back(detail::parse_double(item, key));
    return out;
  }
  std::vector<long> get_ints(const std::string& key, std::vector<long> fallback) const {
    const auto v = find(key);
    if (!v) return fallback;
    std::vector<long> out;
    for (const auto& item : detail::split(*v, ',')) out.push_back(detail::parse_long(item, key));
    return out;
  }
  std::vector<std::string> get_strings(const std::string& key) const {
    const auto v = find(key);
    return v ? detail::split(*v, ',') : std::vector<std::string>{};
  }

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace mpr
