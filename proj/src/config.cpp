#include "evc/config.hpp"

#include <fstream>
#include <stdexcept>

#include "evc/errors.hpp"

namespace evc {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::from_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open " + path.string());
  KeyValueConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw IoError("config: missing '=' at " + path.string() + ":" +
                    std::to_string(line_no));
    }
    cfg.values_[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return cfg;
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

bool KeyValueConfig::has(const std::string& key) const { return values_.count(key) > 0; }

std::string KeyValueConfig::get_string(const std::string& key,
                                       const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw InputError("config: key '" + key + "' is not a number: " + it->second);
  }
}

std::size_t KeyValueConfig::get_size(const std::string& key, std::size_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return static_cast<std::size_t>(std::stoull(it->second));
  } catch (const std::exception&) {
    throw InputError("config: key '" + key + "' is not an integer: " + it->second);
  }
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key,
                                      std::uint64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw InputError("config: key '" + key + "' is not an integer: " + it->second);
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw InputError("config: key '" + key + "' is not a boolean: " + it->second);
}

void KeyValueConfig::write(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("config: cannot open " + path.string() + " for writing");
  for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
  if (!os) throw IoError("config: write failure for " + path.string());
}

}  // namespace evc
