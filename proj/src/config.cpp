/* Copyright 2026 The gwap Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "gwap/config.hpp"

#include <cctype>
#include <fstream>

#include "gwap/error.hpp"

namespace gwap {
namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

Config Config::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError(path + ": cannot open config file");
  }
  Config cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(path + ":" + std::to_string(line_no) +
                            ": expected 'key = value'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw ValidationError(path + ":" + std::to_string(line_no) +
                            ": empty key");
    }
    if (cfg.values_.count(key)) {
      throw ValidationError(path + ":" + std::to_string(line_no) +
                            ": duplicate key '" + key + "'");
    }
    cfg.values_[key] = value;
  }
  return cfg;
}

void Config::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

bool Config::has(const std::string& key) const {
  return values_.count(key) != 0;
}

const std::string* Config::find(const std::string& key) const {
  consumed_.insert(key);
  const auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

std::string Config::get_string(const std::string& key,
                               const std::string& def) const {
  const std::string* v = find(key);
  return v ? *v : def;
}

std::int64_t Config::get_int(const std::string& key, std::int64_t def) const {
  const std::string* v = find(key);
  if (!v) return def;
  std::size_t pos = 0;
  std::int64_t out = 0;
  try {
    out = std::stoll(*v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v->size() || v->empty()) {
    throw ValidationError("config: key '" + key + "' has non-integer value '" +
                          *v + "'");
  }
  return out;
}

std::uint64_t Config::get_uint(const std::string& key,
                               std::uint64_t def) const {
  const std::string* v = find(key);
  if (!v) return def;
  if (v->empty() || v->front() == '-') {
    throw ValidationError("config: key '" + key +
                          "' must be a non-negative integer, got '" + *v + "'");
  }
  std::size_t pos = 0;
  std::uint64_t out = 0;
  try {
    out = std::stoull(*v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v->size()) {
    throw ValidationError("config: key '" + key + "' has non-integer value '" +
                          *v + "'");
  }
  return out;
}

double Config::get_double(const std::string& key, double def) const {
  const std::string* v = find(key);
  if (!v) return def;
  std::size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(*v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v->size() || v->empty()) {
    throw ValidationError("config: key '" + key + "' has non-numeric value '" +
                          *v + "'");
  }
  return out;
}

bool Config::get_bool(const std::string& key, bool def) const {
  const std::string* v = find(key);
  if (!v) return def;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  throw ValidationError("config: key '" + key + "' has non-boolean value '" +
                        *v + "'");
}

void Config::require_known() const {
  std::string unknown;
  for (const auto& [key, value] : values_) {
    if (!consumed_.count(key)) {
      unknown += (unknown.empty() ? "" : ", ") + key;
    }
  }
  if (!unknown.empty()) {
    throw ValidationError("config: unknown keys: " + unknown);
  }
}

}  // namespace gwap
