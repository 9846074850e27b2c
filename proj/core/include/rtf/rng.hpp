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

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace rtf {

/// Seeded random source. All distribution draws are implemented on top of the
/// raw mt19937_64 stream (std:: distributions are implementation-defined and
/// would break cross-platform reproducibility of experiment outputs).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform draw in [0, 1) with 53 random mantissa bits.
  double uniform01() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  bool bernoulli(double p) { return uniform01() < p; }

  /// Standard normal via Box-Muller; consumes exactly two uniforms.
  double normal() {
    double u1 = 1.0 - uniform01();  // (0, 1], keeps the log finite
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  /// Normal(0, std) resampled until within [-clip, clip]. ViT-style init
  /// uses std=0.02, clip=2*std.
  double truncated_normal(double stddev, double clip) {
    for (;;) {
      double x = normal() * stddev;
      if (x >= -clip && x <= clip) return x;
    }
  }

  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n) {
    // Rejection sampling to avoid modulo bias.
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    for (;;) {
      std::uint64_t x = eng_();
      if (x < limit) return static_cast<std::size_t>(x % n);
    }
  }

  /// Fisher-Yates shuffle; std::shuffle's draw order is not pinned by the
  /// standard, this is.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Derives an independent stream seed from a base seed and a label
  /// (FNV-1a over the label, mixed with the base). Used to give every
  /// experiment cell and every purpose (init, shuffle, masks) its own stream.
  static std::uint64_t derive(std::uint64_t base, std::string_view label) {
    std::uint64_t h = 1469598103934665603ull ^ base;
    for (unsigned char c : label) {
      h ^= c;
      h *= 1099511628211ull;
    }
    // splitmix64 finalizer
    h ^= h >> 30;
    h *= 0xbf58476d1ce4e5b9ull;
    h ^= h >> 27;
    h *= 0x94d049bb133111ebull;
    h ^= h >> 31;
    return h;
  }

 private:
  static constexpr double kPi = 3.14159265358979323846;
  std::mt19937_64 eng_;
};

}  // namespace rtf
