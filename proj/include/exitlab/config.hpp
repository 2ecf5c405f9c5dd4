#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "exitlab/core.hpp"

namespace exitlab {

/// Flat sectioned config:
///
///   # comment
///   seed = 7
///   [model]
///   name = sirs
///   lambda = 2
///
/// Keys before the first section header belong to the "run" section.
/// Every key must appear in the schema given to parse_config.
struct ConfigFile {
  // section -> key -> raw value
  std::map<std::string, std::map<std::string, std::string>> values;

  const std::string* find(const std::string& section, const std::string& key) const {
    auto s = values.find(section);
    if (s == values.end()) return nullptr;
    auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
  }
};

using ConfigSchema = std::map<std::string, std::set<std::string>>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

inline ConfigFile parse_config(std::istream& in, const ConfigSchema& schema, const std::string& origin = "config") {
  ConfigFile cfg;
  std::string line, section = "run";
  int lineno = 0;
  auto fail = [&](const std::string& key, const std::string& what) {
    std::ostringstream os;
    os << origin << ':' << lineno << ": " << what << " '" << key << "'";
    throw Error(ErrorKind::ConfigError, os.str());
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(line, "malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (!schema.count(section)) fail(section, "unknown section");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(line, "expected key = value, got");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    const auto& keys = schema.at(section);
    if (!keys.count(key)) fail(section == "run" ? key : section + "." + key, "unknown key");
    if (cfg.values[section].count(key)) fail(section + "." + key, "duplicate key");
    cfg.values[section][key] = val;
  }
  return cfg;
}

inline ConfigFile load_config(const std::string& path, const ConfigSchema& schema) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::ConfigError, "cannot read config file '" + path + "'");
  return parse_config(f, schema, path);
}

}  // namespace exitlab
