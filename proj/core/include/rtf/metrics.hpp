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

#include <span>

namespace rtf {

/// Area under the ROC curve via the rank (Mann-Whitney) formulation:
/// the probability that a uniformly drawn positive outranks a uniformly
/// drawn negative, with ties counted 1/2. Tied scores get midranks.
/// Throws MetricError unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

}  // namespace rtf
