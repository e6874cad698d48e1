#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace timt::util {

// Flat INI-style config: [section] headers over key = value lines, '#' or ';'
// comments. Section and key order is preserved so dumps are deterministic.
class IniConfig {
 public:
  static IniConfig parse_file(const std::filesystem::path& path);
  static IniConfig parse_string(const std::string& text);

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) const;
  int get_int(const std::string& section, const std::string& key, int fallback) const;
  uint64_t get_u64(const std::string& section, const std::string& key,
                   uint64_t fallback) const;
  double get_double(const std::string& section, const std::string& key,
                    double fallback) const;
  bool get_bool(const std::string& section, const std::string& key,
                bool fallback) const;

  void set(const std::string& section, const std::string& key,
           const std::string& value);

  std::string dump() const;
  void write_file(const std::filesystem::path& path) const;

 private:
  using Section = std::pair<std::string, std::vector<std::pair<std::string, std::string>>>;
  std::vector<Section> sections_;

  const std::string* find(const std::string& section, const std::string& key) const;
};

}  // namespace timt::util
