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
#include <functional>
#include <string>
#include <vector>

#include "rtf/tensor.hpp"

namespace rtf {

inline constexpr double kGradCheckTol = 1e-4;
inline constexpr double kGradCheckStep = 1e-5;

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double seconds = 0.0;

  bool all_pass() const {
    for (const auto& e : entries) {
      if (!e.pass) return false;
    }
    return !entries.empty();
  }
};

/// Compares tape gradients against central finite differences (64-bit,
/// step 1e-5) for a scalar objective built by `build` from the given tracked
/// inputs. Returns the max relative error over all input entries, where
/// rel(a, b) = |a - b| / max(|a|, |b|, 1).
double finite_difference_check(
    std::vector<Tensor<double>*> inputs,
    const std::function<Tensor<double>(Tape<double>&)>& build);

/// Runs the finite-difference suite over every differentiable op and the
/// full two-branch model at a tiny configuration. Each op is checked over
/// ten seeds derived from `seed`, on random inputs in [-2, 2].
/// `inject_fault` deliberately corrupts one analytic gradient so harness
/// failure detection can be exercised end to end.
GradCheckReport run_gradcheck(std::uint64_t seed = 42,
                              bool inject_fault = false);

}  // namespace rtf
