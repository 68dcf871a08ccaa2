#include "cmda/config.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>

namespace cmda {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open config: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) lines.push_back(line);
  return from_lines(lines, path);
}

ExperimentConfig ExperimentConfig::from_lines(const std::vector<std::string>& lines,
                                              const std::string& origin) {
  ExperimentConfig cfg;
  std::vector<std::string> bad;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string s = lines[i];
    const std::size_t hash = s.find('#');
    if (hash != std::string::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos || trim(s.substr(0, eq)).empty()) {
      bad.push_back(origin + ":" + std::to_string(i + 1));
      continue;
    }
    cfg.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  if (!bad.empty()) {
    std::string msg = "malformed config lines:";
    for (const auto& b : bad) msg += " " + b;
    throw DataError(msg);
  }
  return cfg;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  kv_[key] = value;
}

void ExperimentConfig::apply_overrides(const std::vector<std::string>& assignments) {
  std::vector<std::string> bad;
  for (const auto& a : assignments) {
    const std::size_t eq = a.find('=');
    if (eq == std::string::npos || trim(a.substr(0, eq)).empty()) {
      bad.push_back(a);
      continue;
    }
    set(trim(a.substr(0, eq)), trim(a.substr(eq + 1)));
  }
  if (!bad.empty()) {
    std::string msg = "malformed --set overrides (expected key=value):";
    for (const auto& b : bad) msg += " '" + b + "'";
    throw UsageError(msg);
  }
}

bool ExperimentConfig::has(const std::string& key) const { return kv_.count(key) > 0; }

std::string ExperimentConfig::get_str(const std::string& key,
                                      const std::string& def) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? def : it->second;
}

std::string ExperimentConfig::require_str(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) throw DataError("missing required config key '" + key + "'");
  return it->second;
}

long ExperimentConfig::get_long(const std::string& key, long def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  std::size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(it->second, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != it->second.size() || it->second.empty())
    throw DataError("config key '" + key + "': expected integer, got '" +
                    it->second + "'");
  return v;
}

double ExperimentConfig::get_double(const std::string& key, double def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(it->second, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != it->second.size() || it->second.empty())
    throw DataError("config key '" + key + "': expected number, got '" +
                    it->second + "'");
  return v;
}

bool ExperimentConfig::get_bool(const std::string& key, bool def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  const std::string& s = it->second;
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw DataError("config key '" + key + "': expected boolean, got '" + s + "'");
}

std::string ExperimentConfig::digest() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
  };
  for (const auto& [k, v] : kv_) {
    mix(k);
    mix("=");
    mix(v);
    mix("\n");
  }
  std::ostringstream os;
  os << std::hex;
  for (int shift = 60; shift >= 0; shift -= 4)
    os << ((h >> shift) & 0xF);
  return os.str();
}

}  // namespace cmda
