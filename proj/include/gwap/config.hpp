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

// Flat "key = value" configuration. Lines starting with '#' are comments.
// Typed getters record which keys were consumed; require_known() then
// rejects anything left over, so a typo in a config file fails loudly
// instead of silently using a default.

#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

namespace gwap {

class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path);

  /// Inserts or overwrites one key. Command-line flags go through here,
  /// after from_file, so flags win over file values.
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& def) const;
  std::int64_t get_int(const std::string& key, std::int64_t def) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t def) const;
  double get_double(const std::string& key, double def) const;
  bool get_bool(const std::string& key, bool def) const;

  /// Throws ValidationError naming every key that no getter has consumed.
  void require_known() const;

 private:
  const std::string* find(const std::string& key) const;

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
};

}  // namespace gwap
