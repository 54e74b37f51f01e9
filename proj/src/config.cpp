#include "tafnet/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tafnet {

namespace {

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& source) {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(source + ":" + std::to_string(lineno) +
                                  ": expected 'key = value', got '" + t + "'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": empty key");
    }
    if (out.count(key)) {
      throw std::invalid_argument(source + ":" + std::to_string(lineno) +
                                  ": duplicate key '" + key + "'");
    }
    out[key] = val;
  }
  return out;
}

std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) {
    throw std::invalid_argument("config: cannot open '" + path.string() + "'");
  }
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

ConfigReader::ConfigReader(std::map<std::string, std::string> values, std::string source)
    : values_(std::move(values)), source_(std::move(source)) {}

std::string ConfigReader::take(const std::string& key) {
  consumed_[key] = true;
  return values_.at(key);
}

std::string ConfigReader::get_string(const std::string& key, const std::string& fallback) {
  return has(key) ? take(key) : fallback;
}

double ConfigReader::get_double(const std::string& key, double fallback) {
  if (!has(key)) return fallback;
  const std::string v = take(key);
  try {
    size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return d;
  } catch (const std::exception&) {
    throw std::invalid_argument(source_ + ": key '" + key + "': expected number, got '" +
                                v + "'");
  }
}

int ConfigReader::get_int(const std::string& key, int fallback) {
  if (!has(key)) return fallback;
  const std::string v = take(key);
  try {
    size_t used = 0;
    const int i = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return i;
  } catch (const std::exception&) {
    throw std::invalid_argument(source_ + ": key '" + key + "': expected integer, got '" +
                                v + "'");
  }
}

uint64_t ConfigReader::get_u64(const std::string& key, uint64_t fallback) {
  if (!has(key)) return fallback;
  const std::string v = take(key);
  try {
    size_t used = 0;
    const uint64_t u = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return u;
  } catch (const std::exception&) {
    throw std::invalid_argument(source_ + ": key '" + key +
                                "': expected unsigned integer, got '" + v + "'");
  }
}

bool ConfigReader::get_on_off(const std::string& key, bool fallback) {
  if (!has(key)) return fallback;
  const std::string v = take(key);
  if (v == "on") return true;
  if (v == "off") return false;
  throw std::invalid_argument(source_ + ": key '" + key + "': expected on|off, got '" +
                              v + "'");
}

void ConfigReader::finish() const {
  for (const auto& [key, _] : values_) {
    if (!consumed_.count(key)) {
      throw std::invalid_argument(source_ + ": unknown key '" + key + "'");
    }
  }
}

}  // namespace tafnet
