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
#include <optional>
#include <string>
#include <vector>

#include "rtf/image.hpp"
#include "rtf/rng.hpp"

namespace rtf {

/// One two-view classification sample: same-subject views and a binary label.
struct MultiViewSample {
  Image view1;
  Image view2;
  int label = 0;
  std::string id;
};

/// Generator bookkeeping for one sample: the discrete cue each view carries
/// (the bright square's side, 0 = left, 1 = right). -1 when unknown (loaded
/// from disk). These power the exact task oracles in tests.
struct CueInfo {
  int cue1 = -1;
  int cue2 = -1;
};

struct Split {
  std::vector<MultiViewSample> samples;
  std::vector<CueInfo> cues;  // parallel to samples; empty when loaded

  std::size_t size() const { return samples.size(); }
};

struct DataSet {
  Split train, val, test;
};

enum class TaskKind { Xor, Dominant };

std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

/// Synthetic two-view task description.
///   Xor:      each view shows a bright square on its left or right half;
///             label = side1 XOR side2, so neither view alone is informative.
///   Dominant: view2's square side always equals the label; view1's side
///             equals the label for a fraction `alpha` of samples.
/// Cue sides are discrete and balanced exactly, which makes stump accuracy
/// and view/label mutual information exact quantities.
struct TaskSpec {
  TaskKind kind = TaskKind::Xor;
  std::size_t n_train = 512;
  std::size_t n_val = 128;
  std::size_t n_test = 256;
  std::size_t image_size = 32;
  std::size_t channels = 1;
  double alpha = 0.9;   // Dominant only: fraction of label signal in view1
  double noise = 0.1;   // additive pixel noise std, clipped to [0,1]
  std::uint64_t seed = 1;
};

/// Deterministic generation: equal specs yield bit-identical datasets.
/// Splits are disjoint by id and class-balanced to 50% +- 2% (exactly 50%
/// when the split size divides evenly). Throws GenerationError otherwise.
DataSet generate(const TaskSpec& spec);

/// Loads `root/manifest.tsv` (columns id, view1_path, view2_path, label;
/// paths relative to root). Samples with a missing or unreadable view are
/// skipped, counted, and reported via `skipped`. Result is ordered by id.
/// Throws IoError if no complete sample remains.
Split load_pairs(const std::filesystem::path& root,
                 std::size_t* skipped = nullptr);

/// Loads a dataset exported by export_dataset: root/{train,val,test}.
DataSet load_dataset(const std::filesystem::path& root);

/// Writes PNGs plus manifest.tsv (and cues.tsv when cue metadata exists).
void export_split(const Split& split, const std::filesystem::path& dir);
void export_dataset(const DataSet& ds, const std::filesystem::path& root);

Image flip_horizontal(const Image& img);

/// Training-time augmentation: independent horizontal flips per view.
/// Label and geometry are unchanged; consumes exactly two Bernoulli draws.
MultiViewSample augment(const MultiViewSample& s, Rng& rng);

/// Replaces the other view with a copy of the kept one, for single-view
/// baselines with unchanged model capacity. `view` is 1 or 2.
DataSet restrict_to_view(const DataSet& ds, int view);

}  // namespace rtf
