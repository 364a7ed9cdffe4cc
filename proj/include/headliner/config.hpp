#pragma once

#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "headliner/common.hpp"
#include "headliner/text.hpp"

namespace headliner {

/// Layered key=value run configuration. Keys are declared once with their
/// defaults; later layers (preset, config file, command line) may only
/// override declared keys, so typos surface as errors instead of silently
/// falling back to defaults.
class RunConfig {
 public:
  void declare(std::string key, std::string default_value) {
    auto [it, inserted] = values_.emplace(std::move(key), std::move(default_value));
    if (!inserted) {
      throw ConfigError("config: key '" + it->first + "' declared twice");
    }
  }

  bool has(std::string_view key) const {
    return values_.find(std::string(key)) != values_.end();
  }

  void set(std::string_view key, std::string value) {
    auto it = values_.find(std::string(key));
    if (it == values_.end()) {
      throw ConfigError("config: unknown key '" + std::string(key) + "'");
    }
    it->second = std::move(value);
  }

  /// Applies a file of `key = value` lines. Blank lines and lines starting
  /// with '#' are skipped; unknown keys are rejected.
  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("config: cannot open " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::string_view s = trim(line);
      if (s.empty() || s.front() == '#') continue;
      std::size_t eq = s.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError("config: " + path + " line " +
                          std::to_string(line_no) + ": expected key = value");
      }
      std::string key(trim(s.substr(0, eq)));
      std::string value(trim(s.substr(eq + 1)));
      if (key.empty()) {
        throw ConfigError("config: " + path + " line " +
                          std::to_string(line_no) + ": empty key");
      }
      set(key, std::move(value));
    }
  }

  const std::string& str(std::string_view key) const {
    auto it = values_.find(std::string(key));
    if (it == values_.end()) {
      throw ConfigError("config: unknown key '" + std::string(key) + "'");
    }
    return it->second;
  }

  std::size_t u64(std::string_view key) const {
    const std::string& v = str(key);
    try {
      std::size_t pos = 0;
      unsigned long long n = std::stoull(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
      throw ConfigError("config: key '" + std::string(key) +
                        "' wants an integer, got '" + v + "'");
    }
  }

  double f64(std::string_view key) const {
    const std::string& v = str(key);
    try {
      std::size_t pos = 0;
      double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("config: key '" + std::string(key) +
                        "' wants a number, got '" + v + "'");
    }
  }

  bool flag(std::string_view key) const {
    const std::string& v = str(key);
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError("config: key '" + std::string(key) +
                      "' wants a boolean, got '" + v + "'");
  }

  const std::map<std::string, std::string>& items() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace headliner
