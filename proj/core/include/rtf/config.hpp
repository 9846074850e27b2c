/*
 * Copyright 2026-present the rtfusion authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace rtf {

/// Flat `dotted.key=value` text config. One file fully determines a run, and
/// serialization is sorted so archived configs diff cleanly.
class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse_text(const std::string& text);
  static KeyValues parse_file(const std::filesystem::path& path);

  bool has(const std::string& key) const { return kv_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) {
    kv_[key] = value;
  }
  void set_u64(const std::string& key, std::uint64_t v);
  void set_double(const std::string& key, double v);
  void set_bool(const std::string& key, bool v);

  /// Getters throw ConfigError when the key is missing or unparsable; the
  /// *_or variants fall back to a default when the key is absent.
  std::string get_string(const std::string& key) const;
  std::string get_string_or(const std::string& key,
                            const std::string& fallback) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::uint64_t get_u64_or(const std::string& key,
                           std::uint64_t fallback) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key) const;
  bool get_bool_or(const std::string& key, bool fallback) const;

  std::string serialize() const;
  void write_file(const std::filesystem::path& path) const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

/// Fixed-precision decimal formatting; every number the library writes to
/// CSV or config files goes through this so reruns are byte-identical.
std::string format_double(double v, int precision = 6);

}  // namespace rtf
