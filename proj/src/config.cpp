#include "mansy/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mansy {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& text, double& out) {
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& source) {
  KeyValueConfig c;
  c.source_ = source;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    const std::string where = source + ":" + std::to_string(n);
    if (eq == std::string::npos) throw std::runtime_error(where + ": expected 'key = value'");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw std::runtime_error(where + ": empty key");
    if (c.values_.count(key)) throw std::runtime_error(where + ": duplicate key '" + key + "'");
    c.values_[key] = {trim(t.substr(eq + 1)), where};
  }
  return c;
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  values_[key] = {value, "override"};
}

const KeyValueConfig::Entry* KeyValueConfig::find(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return nullptr;
  used_.insert(key);
  return &it->second;
}

void KeyValueConfig::bad_value(const std::string& key, const std::string& expected) const {
  const Entry& e = values_.at(key);
  throw std::runtime_error(e.where + ": '" + key + "' must be " + expected + ", got '" + e.value + "'");
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  const Entry* e = find(key);
  return e ? e->value : fallback;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  double v = 0.0;
  if (!parse_double(e->value, v)) bad_value(key, "a number");
  return v;
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  int v = 0;
  const char* end = e->value.data() + e->value.size();
  const auto [ptr, ec] = std::from_chars(e->value.data(), end, v);
  if (ec != std::errc() || ptr != end) bad_value(key, "an integer");
  return v;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  if (e->value == "true" || e->value == "1") return true;
  if (e->value == "false" || e->value == "0") return false;
  bad_value(key, "true or false");
}

std::vector<double> KeyValueConfig::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  std::vector<double> out;
  std::istringstream in(e->value);
  std::string item;
  while (std::getline(in, item, ',')) {
    double v = 0.0;
    if (!parse_double(trim(item), v)) bad_value(key, "a comma-separated list of numbers");
    out.push_back(v);
  }
  if (out.empty()) bad_value(key, "a non-empty list");
  return out;
}

void KeyValueConfig::reject_unused() const {
  std::string unknown;
  for (const auto& [key, e] : values_)
    if (!used_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key + " (" + e.where + ")";
  if (!unknown.empty()) throw std::runtime_error("unknown config keys: " + unknown);
}

std::string KeyValueConfig::dump() const {
  std::string out;
  for (const auto& [key, e] : values_) out += key + " = " + e.value + "\n";
  return out;
}

}  // namespace mansy
