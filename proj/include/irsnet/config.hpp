#pragma once

#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "irsnet/geometry.hpp"

namespace irsnet {

struct Box3 {
  Vec3 lo;
  Vec3 hi;
};

// Static description of one deployment: array sizes, user population,
// link budget, and geometry. Powers are carried in dBm here and converted
// to milliwatts at the point of use.
struct SystemConfig {
  int bs_antennas = 4;
  int irs_rows = 4;
  int irs_cols = 4;
  int users = 2;
  double downlink_power_dbm = 20.0;
  double uplink_power_dbm = 15.0;
  double downlink_noise_dbm = -85.0;
  double uplink_noise_dbm = -100.0;
  double rician_factor = 10.0;  // +inf selects the pure line-of-sight limit
  Vec3 bs_location{100.0, 100.0, 0.0};
  Vec3 irs_location{0.0, 0.0, 0.0};
  Box3 user_region{{5.0, -35.0, -20.0}, {35.0, 35.0, -20.0}};
  std::vector<Vec3> fixed_users;  // when non-empty, overrides region sampling

  int irs_elements() const { return irs_rows * irs_cols; }
  double downlink_power_mw() const { return dbm_to_mw(downlink_power_dbm); }
  double uplink_power_mw() const { return dbm_to_mw(uplink_power_dbm); }
  double downlink_noise_mw() const { return dbm_to_mw(downlink_noise_dbm); }
  double uplink_noise_mw() const { return dbm_to_mw(uplink_noise_dbm); }

  void validate() const {
    if (bs_antennas < 1) throw ConfigError("bs_antennas must be at least 1");
    if (irs_rows < 1 || irs_cols < 1) throw ConfigError("irs grid dimensions must be at least 1");
    if (users < 1) throw ConfigError("users must be at least 1");
    if (std::isnan(rician_factor) || rician_factor < 0.0)
      throw ConfigError("rician_factor must be non-negative");
    if (user_region.lo.x > user_region.hi.x || user_region.lo.y > user_region.hi.y ||
        user_region.lo.z > user_region.hi.z)
      throw ConfigError("user_region bounds are inverted");
    if (!(distance(bs_location, irs_location) > 0.0))
      throw ConfigError("bs_location and irs_location must differ");
    if (!fixed_users.empty() && static_cast<int>(fixed_users.size()) != users)
      throw ConfigError("fixed_users must list exactly one location per user");
  }

  uint64_t hash() const {
    Hasher h;
    h.i64(bs_antennas).i64(irs_rows).i64(irs_cols).i64(users);
    h.f64(downlink_power_dbm).f64(uplink_power_dbm);
    h.f64(downlink_noise_dbm).f64(uplink_noise_dbm);
    h.f64(rician_factor);
    for (const Vec3* v : {&bs_location, &irs_location, &user_region.lo, &user_region.hi})
      h.f64(v->x).f64(v->y).f64(v->z);
    h.u64(fixed_users.size());
    for (const auto& u : fixed_users) h.f64(u.x).f64(u.y).f64(u.z);
    return h.digest();
  }
};

// Line-oriented "key = value" text with optional [section] headers and '#'
// comments. Keys are exposed as "section.key". Unknown keys are rejected by
// the callers once every expected key has been consumed.
class KeyValueFile {
 public:
  static KeyValueFile parse(const std::string& text) {
    KeyValueFile kv;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::string t = trim(line);
      if (t.empty()) continue;
      if (t.front() == '[') {
        if (t.back() != ']') throw ConfigError("unterminated section header at line " + std::to_string(lineno));
        section = trim(t.substr(1, t.size() - 2));
        continue;
      }
      auto eq = t.find('=');
      if (eq == std::string::npos) throw ConfigError("expected key = value at line " + std::to_string(lineno));
      std::string key = trim(t.substr(0, eq));
      std::string value = trim(t.substr(eq + 1));
      if (key.empty()) throw ConfigError("empty key at line " + std::to_string(lineno));
      std::string full = section.empty() ? key : section + "." + key;
      if (kv.values_.count(full)) throw ConfigError("duplicate key: " + full);
      kv.values_[full] = value;
    }
    return kv;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(it->first);
    return it->second;
  }

  std::string require_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required key: " + key);
    consumed_.insert(it->first);
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(it->first);
    return parse_double(it->second, key);
  }

  int get_int(const std::string& key, int fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(it->first);
    return parse_int(it->second, key);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(it->first);
    if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
    if (it->second == "false" || it->second == "0" || it->second == "no") return false;
    throw ConfigError("key " + key + " expects a boolean, got '" + it->second + "'");
  }

  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(it->first);
    std::vector<double> out;
    std::istringstream in(it->second);
    std::string tok;
    while (in >> tok) out.push_back(parse_double(tok, key));
    if (out.empty()) throw ConfigError("key " + key + " expects at least one number");
    return out;
  }

  std::vector<std::string> get_words(const std::string& key, std::vector<std::string> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(it->first);
    std::vector<std::string> out;
    std::istringstream in(it->second);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
  }

  Vec3 get_vec3(const std::string& key, Vec3 fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    auto v = get_doubles(key, {});
    if (v.size() != 3) throw ConfigError("key " + key + " expects three coordinates");
    return {v[0], v[1], v[2]};
  }

  // Semicolon-separated list of 3-vectors, e.g. "30 20 -20 ; 10 -5 -20".
  std::vector<Vec3> get_vec3_list(const std::string& key, std::vector<Vec3> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(it->first);
    std::vector<Vec3> out;
    std::string item;
    std::istringstream groups(it->second);
    while (std::getline(groups, item, ';')) {
      std::istringstream in(item);
      std::vector<double> v;
      std::string tok;
      while (in >> tok) v.push_back(parse_double(tok, key));
      if (v.empty()) continue;
      if (v.size() != 3) throw ConfigError("key " + key + " expects groups of three coordinates");
      out.push_back({v[0], v[1], v[2]});
    }
    return out;
  }

  // Keys present in the file but never consumed; used to reject typos.
  std::vector<std::string> unconsumed() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!consumed_.count(k)) out.push_back(k);
    return out;
  }

  void reject_unconsumed() const {
    auto leftover = unconsumed();
    if (!leftover.empty()) {
      std::string msg = "unknown configuration keys:";
      for (const auto& k : leftover) msg += " " + k;
      throw ConfigError(msg);
    }
  }

 private:
  static std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }
  static double parse_double(const std::string& s, const std::string& key) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    std::size_t pos = 0;
    double v = 0;
    try {
      v = std::stod(s, &pos);
    } catch (const std::exception&) {
      throw ConfigError("key " + key + " expects a number, got '" + s + "'");
    }
    if (pos != s.size()) throw ConfigError("key " + key + " expects a number, got '" + s + "'");
    return v;
  }
  static int parse_int(const std::string& s, const std::string& key) {
    std::size_t pos = 0;
    long v = 0;
    try {
      v = std::stol(s, &pos);
    } catch (const std::exception&) {
      throw ConfigError("key " + key + " expects an integer, got '" + s + "'");
    }
    if (pos != s.size()) throw ConfigError("key " + key + " expects an integer, got '" + s + "'");
    return static_cast<int>(v);
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
};

inline SystemConfig system_config_from_kv(const KeyValueFile& kv, SystemConfig sys = {}) {
  sys.bs_antennas = kv.get_int("system.bs_antennas", sys.bs_antennas);
  sys.irs_rows = kv.get_int("system.irs_rows", sys.irs_rows);
  sys.irs_cols = kv.get_int("system.irs_cols", sys.irs_cols);
  sys.users = kv.get_int("system.users", sys.users);
  sys.downlink_power_dbm = kv.get_double("system.downlink_power_dbm", sys.downlink_power_dbm);
  sys.uplink_power_dbm = kv.get_double("system.uplink_power_dbm", sys.uplink_power_dbm);
  sys.downlink_noise_dbm = kv.get_double("system.downlink_noise_dbm", sys.downlink_noise_dbm);
  sys.uplink_noise_dbm = kv.get_double("system.uplink_noise_dbm", sys.uplink_noise_dbm);
  sys.rician_factor = kv.get_double("system.rician_factor", sys.rician_factor);
  sys.bs_location = kv.get_vec3("system.bs_location", sys.bs_location);
  sys.irs_location = kv.get_vec3("system.irs_location", sys.irs_location);
  sys.user_region.lo = kv.get_vec3("system.user_region_min", sys.user_region.lo);
  sys.user_region.hi = kv.get_vec3("system.user_region_max", sys.user_region.hi);
  sys.fixed_users = kv.get_vec3_list("system.fixed_users", sys.fixed_users);
  sys.validate();
  return sys;
}

}  // namespace irsnet
