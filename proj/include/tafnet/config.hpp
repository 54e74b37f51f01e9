#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace tafnet {

// Flat "key = value" text config. Blank lines and lines starting with '#'
// are ignored. Duplicate keys are rejected.
std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& source);
std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path);

// Typed access with unknown-key rejection: consumers pull the keys they
// understand, then call finish(), which throws naming any leftovers.
class ConfigReader {
 public:
  ConfigReader(std::map<std::string, std::string> values, std::string source);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get_string(const std::string& key, const std::string& fallback);
  double get_double(const std::string& key, double fallback);
  int get_int(const std::string& key, int fallback);
  uint64_t get_u64(const std::string& key, uint64_t fallback);
  bool get_on_off(const std::string& key, bool fallback);

  void finish() const;

 private:
  std::string take(const std::string& key);

  std::map<std::string, std::string> values_;
  std::map<std::string, bool> consumed_;
  std::string source_;
};

}  // namespace tafnet
