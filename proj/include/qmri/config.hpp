#pragma once
#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "qmri/errors.hpp"

namespace qmri {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Formats a double so that reading it back reproduces the exact bits.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Flat key-value configuration: one `key = value` pair per line, `#`
// comments, dotted section prefixes (solver., data., seq.). Readers must
// consume every key; leftovers (misspellings, stale keys) are a hard error.
class KeyValueConfig {
 public:
  static KeyValueConfig from_string(const std::string& text, const std::string& origin = "<string>") {
    KeyValueConfig c;
    c.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      if (key.empty())
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
      if (c.kv_.count(key))
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
      c.kv_[key] = val;
    }
    return c;
  }

  static KeyValueConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_string(buf.str(), path);
  }

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    used_.insert(key);
    return it->second;
  }

  std::string require_string(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError(origin_ + ": missing required key '" + key + "'");
    used_.insert(key);
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    used_.insert(key);
    return parse_double(key, it->second);
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    used_.insert(key);
    return parse_int(key, it->second);
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    used_.insert(key);
    return parse_u64(key, it->second);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    used_.insert(key);
    const std::string v = it->second;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(origin_ + ": key '" + key + "': expected boolean, got '" + v + "'");
  }

  // Comma-separated list of doubles.
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    used_.insert(key);
    std::vector<double> out;
    std::stringstream ss(it->second);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      tok = trim(tok);
      if (tok.empty()) continue;
      out.push_back(parse_double(key, tok));
    }
    return out;
  }

  // Misspelled or unsupported keys must not be silently ignored.
  void check_all_consumed() const {
    std::vector<std::string> unknown;
    for (const auto& [k, v] : kv_)
      if (!used_.count(k)) unknown.push_back(k);
    if (!unknown.empty()) {
      std::string msg = origin_ + ": unknown config key(s):";
      for (const auto& k : unknown) msg += " '" + k + "'";
      throw ConfigError(msg);
    }
  }

 private:
  double parse_double(const std::string& key, const std::string& v) const {
    try {
      size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (trim(v.substr(pos)).empty()) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError(origin_ + ": key '" + key + "': expected number, got '" + v + "'");
  }

  long long parse_int(const std::string& key, const std::string& v) const {
    try {
      size_t pos = 0;
      const long long d = std::stoll(v, &pos);
      if (trim(v.substr(pos)).empty()) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError(origin_ + ": key '" + key + "': expected integer, got '" + v + "'");
  }

  std::uint64_t parse_u64(const std::string& key, const std::string& v) const {
    try {
      size_t pos = 0;
      const std::uint64_t d = std::stoull(v, &pos);
      if (trim(v.substr(pos)).empty()) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError(origin_ + ": key '" + key + "': expected unsigned integer, got '" + v + "'");
  }

  std::string origin_;
  std::map<std::string, std::string> kv_;
  mutable std::set<std::string> used_;
};

// Deterministic config echo: keys written in sorted order, doubles at full
// precision, so a resolved config reproduces the run byte for byte.
class ConfigWriter {
 public:
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  void set(const std::string& key, double v) { kv_[key] = format_double(v); }
  void set(const std::string& key, int v) { kv_[key] = std::to_string(v); }
  void set(const std::string& key, long long v) { kv_[key] = std::to_string(v); }
  void set(const std::string& key, std::uint64_t v) { kv_[key] = std::to_string(v); }
  void set(const std::string& key, bool v) { kv_[key] = v ? "true" : "false"; }
  void set(const std::string& key, const std::vector<double>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
      if (i) s += ",";
      s += format_double(v[i]);
    }
    kv_[key] = s;
  }

  std::string str() const {
    std::string out;
    for (const auto& [k, v] : kv_) out += k + " = " + v + "\n";
    return out;
  }

  void write(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write config file: " + path);
    f << str();
  }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace qmri
