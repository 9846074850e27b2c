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
#include <string>
#include <vector>

#include "rtf/data.hpp"
#include "rtf/model.hpp"

namespace rtf {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  bool augment = false;
};

void train_config_to_kv(const TrainConfig& cfg, KeyValues& kv);
TrainConfig train_config_from_kv(const KeyValues& kv);

struct RunRecord {
  std::vector<double> train_loss;  // per epoch, mean combined loss per sample
  std::vector<double> val_auc;     // per epoch
  double test_auc = 0.0;
  std::size_t best_epoch = 0;      // argmax of val_auc (first on ties)
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// Deterministic training under (seed, config): re-initializes the model
/// from the seed, runs AdamW for cfg.epochs epochs, scores validation AUC
/// after every epoch via forward_infer, and restores the parameters of the
/// epoch with the highest validation AUC before computing the test AUC.
/// epochs == 0 evaluates the freshly initialized model without any update.
/// Numerical divergence surfaces as NumericError.
RunRecord train(MultiViewModel<float>& model, const DataSet& ds,
                const TrainConfig& cfg);

/// Inference scores (raw logits) for a split, in sample order.
std::vector<double> infer_scores(MultiViewModel<float>& model,
                                 const Split& split,
                                 std::size_t batch_size = 32);

std::vector<int> split_labels(const Split& split);

/// Named model sizes for the ablation grid.
void apply_scale(ModelConfig& cfg, const std::string& scale);

struct CellKey {
  FusionKind strategy = FusionKind::Concat;
  bool rtf = true;
  double split_fraction = 0.75;
  std::string scale = "tiny";

  std::string to_string() const;
};

struct RunResult {
  CellKey key;
  std::uint64_t seed = 0;
  RunRecord record;
  bool failed = false;
  std::string error;
};

struct CellSummary {
  CellKey key;
  std::size_t n_ok = 0;
  std::size_t n_failed = 0;
  double val_mean = 0.0, val_std = 0.0;
  double test_mean = 0.0, test_std = 0.0;
};

struct MatrixResult {
  std::vector<RunResult> runs;
  std::vector<CellSummary> cells;

  std::size_t succeeded() const {
    std::size_t n = 0;
    for (const auto& r : runs) n += r.failed ? 0 : 1;
    return n;
  }
};

struct MatrixSpec {
  std::vector<double> splits = {0.75};
  std::vector<FusionKind> strategies = {FusionKind::Concat};
  std::vector<bool> rtf_options = {true, false};
  std::vector<std::string> scales = {"tiny"};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4};
  ModelConfig base_model;   // geometry; scale presets override capacity
  TrainConfig base_train;
};

/// Trains every (cell, seed) combination. Cells are independent: each run
/// re-seeds from (seed, cell key), so results do not depend on execution
/// order or on `jobs`. A failed run is recorded and the matrix continues.
MatrixResult run_matrix(const MatrixSpec& spec, const DataSet& ds,
                        std::size_t jobs = 1);

/// CLS-row attention mass on view-1 vs view-2 spatial tokens in the last
/// global block, averaged over heads and the two CLS rows, renormalized
/// over spatial columns. Defined for Concat fusion only.
struct AttentionBalance {
  double mass1 = 0.0;
  double mass2 = 0.0;
};

AttentionBalance attention_balance(MultiViewModel<float>& model,
                                   const MultiViewSample& sample);

/// Per-view CLS-attention grids (patches_per_side x patches_per_side,
/// row-major) plus the balance for one sample.
struct AttentionMaps {
  std::vector<double> grid1, grid2;
  std::size_t side = 0;
  AttentionBalance balance;
};

AttentionMaps attention_maps(MultiViewModel<float>& model,
                             const MultiViewSample& sample);

/// Writes, for the first n samples of the split in id order: per-view text
/// matrices, per-view grayscale heatmap PNGs (upscaled by patch size, jointly
/// normalized per sample), and balance.csv with one row per sample.
void export_attention(MultiViewModel<float>& model, const Split& split,
                      std::size_t n, const std::filesystem::path& dir);

void write_history_csv(const std::filesystem::path& path,
                       const RunRecord& rec);
void write_results_csv(const std::filesystem::path& path,
                       const MatrixResult& result);
void write_summary_csv(const std::filesystem::path& path,
                       const MatrixResult& result);

std::string fnv1a_hex(const std::string& text);

}  // namespace rtf
