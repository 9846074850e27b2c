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
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "rtf/errors.hpp"
#include "rtf/tensor.hpp"

namespace rtf {

// On-disk tensor record: rank (u64 LE), extents (u64 LE each), values as
// 32-bit LE floats. Checkpoints store a sequence of these plus a manifest
// mapping parameter names to byte offsets.

namespace detail {

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw IoError("tensor read: truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

inline void write_f32_le(std::ostream& os, float f) {
  std::uint32_t u;
  static_assert(sizeof(u) == sizeof(f));
  __builtin_memcpy(&u, &f, 4);
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline float read_f32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("tensor read: truncated values");
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= std::uint32_t(b[i]) << (8 * i);
  float f;
  __builtin_memcpy(&f, &u, 4);
  return f;
}

}  // namespace detail

template <class Real>
void write_tensor(std::ostream& os, const Tensor<Real>& t) {
  detail::write_u64_le(os, t.rank());
  for (std::size_t e : t.shape()) detail::write_u64_le(os, e);
  for (Real v : t.values()) detail::write_f32_le(os, static_cast<float>(v));
}

template <class Real>
Tensor<Real> read_tensor(std::istream& is) {
  std::uint64_t rank = detail::read_u64_le(is);
  if (rank > 8) throw IoError("tensor read: implausible rank");
  Shape shape(rank);
  for (std::uint64_t i = 0; i < rank; ++i) {
    shape[i] = static_cast<std::size_t>(detail::read_u64_le(is));
  }
  std::vector<Real> values(numel(shape));
  for (auto& v : values) v = static_cast<Real>(detail::read_f32_le(is));
  return Tensor<Real>::from_values(std::move(shape), std::move(values));
}

/// Writes named tensors back-to-back into `dir/tensors.bin`, a name->offset
/// manifest into `dir/manifest.txt`, and the config block verbatim into
/// `dir/config.txt`.
template <class Real>
void save_checkpoint(
    const std::filesystem::path& dir,
    const std::vector<std::pair<std::string, const Tensor<Real>*>>& tensors,
    const std::string& config_text) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::ofstream bin(dir / "tensors.bin", std::ios::binary);
  std::ofstream manifest(dir / "manifest.txt");
  if (!bin || !manifest) {
    throw IoError("checkpoint: cannot write to " + dir.string());
  }
  for (const auto& [name, t] : tensors) {
    manifest << name << ' ' << bin.tellp() << '\n';
    write_tensor(bin, *t);
  }
  std::ofstream cfg(dir / "config.txt");
  if (!cfg) throw IoError("checkpoint: cannot write config");
  cfg << config_text;
}

struct LoadedCheckpoint {
  std::map<std::string, std::uint64_t> offsets;
  std::string config_text;
  std::filesystem::path bin_path;

  template <class Real>
  Tensor<Real> tensor(const std::string& name) const {
    auto it = offsets.find(name);
    if (it == offsets.end()) {
      throw IoError("checkpoint: missing tensor '" + name + "'");
    }
    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw IoError("checkpoint: cannot open " + bin_path.string());
    bin.seekg(static_cast<std::streamoff>(it->second));
    return read_tensor<Real>(bin);
  }
};

inline LoadedCheckpoint open_checkpoint(const std::filesystem::path& dir) {
  LoadedCheckpoint ck;
  ck.bin_path = dir / "tensors.bin";
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) {
    throw IoError("checkpoint: no manifest at " + dir.string());
  }
  std::string name;
  std::uint64_t offset;
  while (manifest >> name >> offset) ck.offsets[name] = offset;
  std::ifstream cfg(dir / "config.txt");
  if (!cfg) throw IoError("checkpoint: no config at " + dir.string());
  std::string text((std::istreambuf_iterator<char>(cfg)),
                   std::istreambuf_iterator<char>());
  ck.config_text = std::move(text);
  return ck;
}

}  // namespace rtf
