#pragma once

// Flat `key = value` configuration files. Lines starting with '#' and blank
// lines are ignored; list values are comma-separated.

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace mansy {

class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig load(const std::filesystem::path& path);
  static KeyValueConfig parse(const std::string& text, const std::string& source = "<memory>");

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value);

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;

  /// Throws std::runtime_error listing every key that no getter has read.
  void reject_unused() const;

  /// Canonical text form, keys sorted.
  std::string dump() const;

 private:
  struct Entry {
    std::string value;
    std::string where;  ///< "file:line"
  };
  const Entry* find(const std::string& key) const;
  [[noreturn]] void bad_value(const std::string& key, const std::string& expected) const;

  std::string source_ = "<memory>";
  std::map<std::string, Entry> values_;
  mutable std::set<std::string> used_;
};

}  // namespace mansy
