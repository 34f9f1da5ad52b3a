#pragma once

// Declarative `key = value` configuration files. '#' starts a comment,
// blank lines are ignored, keys are unique.

#include <filesystem>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "srmap/common.hpp"

namespace srmap {

class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text) {
    KeyValueConfig cfg;
    int line_no = 0;
    for (const auto& raw : split(text, '\n')) {
      ++line_no;
      std::string_view line = raw;
      if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ParseError("config: expected 'key = value'", line_no, 1);
      std::string key(trim(line.substr(0, eq)));
      std::string value(trim(line.substr(eq + 1)));
      if (key.empty()) throw ParseError("config: empty key", line_no, 1);
      if (cfg.values_.count(key)) throw ParseError("config: duplicate key '" + key + "'", line_no, 1);
      cfg.order_.push_back(key);
      cfg.values_.emplace(std::move(key), std::move(value));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("config: cannot open " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    try {
      return parse(ss.str());
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::vector<std::string>& keys() const { return order_; }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw Error("config: missing key '" + key + "'");
    return it->second;
  }

  double number(const std::string& key) const {
    double v;
    if (!parse_double(get(key), v)) throw Error("config: '" + key + "' is not a number");
    return v;
  }

  double number_or(const std::string& key, double fallback) const {
    return has(key) ? number(key) : fallback;
  }

  std::vector<double> numbers(const std::string& key) const {
    std::vector<double> out;
    for (const auto& tok : split_whitespace(get(key))) {
      double v;
      if (!parse_double(tok, v)) throw Error("config: '" + key + "' has non-numeric entry '" + tok + "'");
      out.push_back(v);
    }
    return out;
  }

  void set(const std::string& key, std::string value) {
    if (!has(key)) order_.push_back(key);
    values_[key] = std::move(value);
  }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

}  // namespace srmap

namespace srmap {

#ifndef SRMAP_DATA_DIR
#define SRMAP_DATA_DIR "data"
#endif

/// Directory holding the bundled fixtures (scene, audiograms, calibration
/// tables). Overridable at runtime with the SRMAP_DATA_DIR environment variable.
inline std::filesystem::path data_dir() {
  if (const char* env = std::getenv("SRMAP_DATA_DIR"); env && *env) return env;
  return SRMAP_DATA_DIR;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace srmap
