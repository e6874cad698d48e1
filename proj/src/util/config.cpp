#include "timt/util/config.hpp"

#include "timt/common.hpp"

#include <fstream>
#include <sstream>

namespace timt::util {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

IniConfig IniConfig::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str());
}

IniConfig IniConfig::parse_string(const std::string& text) {
  IniConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": unterminated section header");
      }
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    }
    cfg.set(section, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

const std::string* IniConfig::find(const std::string& section,
                                   const std::string& key) const {
  for (const auto& [name, entries] : sections_) {
    if (name != section) continue;
    for (const auto& [k, v] : entries) {
      if (k == key) return &v;
    }
  }
  return nullptr;
}

bool IniConfig::has(const std::string& section, const std::string& key) const {
  return find(section, key) != nullptr;
}

std::string IniConfig::get(const std::string& section, const std::string& key,
                           const std::string& fallback) const {
  const std::string* v = find(section, key);
  return v ? *v : fallback;
}

int IniConfig::get_int(const std::string& section, const std::string& key,
                       int fallback) const {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  try {
    return std::stoi(*v);
  } catch (const std::exception&) {
    throw std::invalid_argument("config " + section + "." + key +
                                ": not an integer: " + *v);
  }
}

uint64_t IniConfig::get_u64(const std::string& section, const std::string& key,
                            uint64_t fallback) const {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  try {
    return std::stoull(*v);
  } catch (const std::exception&) {
    throw std::invalid_argument("config " + section + "." + key +
                                ": not an unsigned integer: " + *v);
  }
}

double IniConfig::get_double(const std::string& section, const std::string& key,
                             double fallback) const {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  try {
    return std::stod(*v);
  } catch (const std::exception&) {
    throw std::invalid_argument("config " + section + "." + key +
                                ": not a number: " + *v);
  }
}

bool IniConfig::get_bool(const std::string& section, const std::string& key,
                         bool fallback) const {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  throw std::invalid_argument("config " + section + "." + key +
                              ": not a boolean: " + *v);
}

void IniConfig::set(const std::string& section, const std::string& key,
                    const std::string& value) {
  for (auto& [name, entries] : sections_) {
    if (name != section) continue;
    for (auto& [k, v] : entries) {
      if (k == key) {
        v = value;
        return;
      }
    }
    entries.emplace_back(key, value);
    return;
  }
  sections_.push_back({section, {{key, value}}});
}

std::string IniConfig::dump() const {
  std::ostringstream out;
  bool first = true;
  for (const auto& [name, entries] : sections_) {
    if (!first) out << "\n";
    first = false;
    if (!name.empty()) out << "[" << name << "]\n";
    for (const auto& [k, v] : entries) out << k << " = " << v << "\n";
  }
  return out.str();
}

void IniConfig::write_file(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config file: " + path.string());
  out << dump();
}

}  // namespace timt::util
