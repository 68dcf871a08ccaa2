#pragma once

#include <map>
#include <string>
#include <vector>

#include "cmda/errors.hpp"

namespace cmda {

// Flat key=value settings. File syntax: one assignment per line, '#' starts
// a comment, blank lines ignored. Values are strings until a typed getter
// parses them; a value that fails to parse names the key in the error.
class ExperimentConfig {
 public:
  ExperimentConfig() = default;
  static ExperimentConfig from_file(const std::string& path);
  static ExperimentConfig from_lines(const std::vector<std::string>& lines,
                                     const std::string& origin);

  void set(const std::string& key, const std::string& value);
  // Each assignment must look like key=value; all malformed ones are
  // reported together in a UsageError.
  void apply_overrides(const std::vector<std::string>& assignments);

  bool has(const std::string& key) const;
  std::string get_str(const std::string& key, const std::string& def) const;
  std::string require_str(const std::string& key) const;
  long get_long(const std::string& key, long def) const;
  double get_double(const std::string& key, double def) const;
  bool get_bool(const std::string& key, bool def) const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

  // FNV-1a over the sorted assignments; stable across runs and platforms.
  std::string digest() const;

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace cmda
