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

#include "rtf/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include "rtf/image_io.hpp"
#include "rtf/metrics.hpp"
#include "rtf/optim.hpp"

namespace rtf {

void train_config_to_kv(const TrainConfig& cfg, KeyValues& kv) {
  kv.set_double("train.lr", cfg.lr);
  kv.set_double("train.weight_decay", cfg.weight_decay);
  kv.set_double("train.beta1", cfg.beta1);
  kv.set_double("train.beta2", cfg.beta2);
  kv.set_u64("train.epochs", cfg.epochs);
  kv.set_u64("train.batch_size", cfg.batch_size);
  kv.set_u64("train.seed", cfg.seed);
  kv.set_bool("train.augment", cfg.augment);
}

TrainConfig train_config_from_kv(const KeyValues& kv) {
  TrainConfig cfg;
  cfg.lr = kv.get_double_or("train.lr", cfg.lr);
  cfg.weight_decay = kv.get_double_or("train.weight_decay", cfg.weight_decay);
  cfg.beta1 = kv.get_double_or("train.beta1", cfg.beta1);
  cfg.beta2 = kv.get_double_or("train.beta2", cfg.beta2);
  cfg.epochs = kv.get_u64_or("train.epochs", cfg.epochs);
  cfg.batch_size = kv.get_u64_or("train.batch_size", cfg.batch_size);
  cfg.seed = kv.get_u64_or("train.seed", cfg.seed);
  cfg.augment = kv.get_bool_or("train.augment", cfg.augment);
  return cfg;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
  return buf;
}

std::vector<int> split_labels(const Split& split) {
  std::vector<int> out;
  out.reserve(split.size());
  for (const auto& s : split.samples) out.push_back(s.label);
  return out;
}

std::vector<double> infer_scores(MultiViewModel<float>& model,
                                 const Split& split, std::size_t batch_size) {
  std::vector<double> scores;
  scores.reserve(split.size());
  std::vector<const Image*> v1, v2;
  for (std::size_t i = 0; i < split.size(); i += batch_size) {
    const std::size_t end = std::min(i + batch_size, split.size());
    v1.clear();
    v2.clear();
    for (std::size_t j = i; j < end; ++j) {
      v1.push_back(&split.samples[j].view1);
      v2.push_back(&split.samples[j].view2);
    }
    Tensor<float> logits = model.forward_infer(v1, v2);
    for (std::size_t j = 0; j < logits.rows(); ++j) {
      scores.push_back(double(logits.values()[j]));
    }
  }
  return scores;
}

namespace {

std::string run_config_hash(const MultiViewModel<float>& model,
                            const TrainConfig& cfg) {
  KeyValues kv;
  model_config_to_kv(model.config(), kv);
  kv.set("fusion.strategy", to_string(model.strategy()));
  kv.set_bool("fusion.rtf", model.rtf_enabled());
  train_config_to_kv(cfg, kv);
  return fnv1a_hex(kv.serialize());
}

std::vector<std::vector<float>> snapshot_params(
    std::vector<Tensor<float>*> params) {
  std::vector<std::vector<float>> snap;
  snap.reserve(params.size());
  for (auto* p : params) snap.push_back(p->values());
  return snap;
}

void restore_params(std::vector<Tensor<float>*> params,
                    const std::vector<std::vector<float>>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i]->values() = snap[i];
  }
}

}  // namespace

RunRecord train(MultiViewModel<float>& model, const DataSet& ds,
                const TrainConfig& cfg) {
  if (cfg.batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (ds.train.size() == 0 || ds.val.size() == 0 || ds.test.size() == 0) {
    throw ContractError("train: dataset must have train/val/test splits");
  }

  RunRecord rec;
  rec.seed = cfg.seed;
  rec.config_hash = run_config_hash(model, cfg);

  Rng init_rng(Rng::derive(cfg.seed, "init"));
  model.init_params(init_rng);
  model.set_capture_attention(false);

  AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = cfg.weight_decay;
  ocfg.beta1 = cfg.beta1;
  ocfg.beta2 = cfg.beta2;
  AdamW<float> opt(model.params(), ocfg);

  Rng shuffle_rng(Rng::derive(cfg.seed, "shuffle"));
  Rng mask_rng(Rng::derive(cfg.seed, "rtf-mask"));
  Rng aug_rng(Rng::derive(cfg.seed, "augment"));

  const std::size_t n = ds.train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  double best_val = -1.0;
  std::vector<std::vector<float>> best_snapshot;

  const std::vector<int> val_labels = split_labels(ds.val);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::vector<MultiViewSample> aug_storage;
    std::vector<const Image*> v1, v2;
    std::vector<int> labels;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, n);
      v1.clear();
      v2.clear();
      labels.clear();
      aug_storage.clear();
      if (cfg.augment) aug_storage.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const MultiViewSample& s = ds.train.samples[order[k]];
        if (cfg.augment) {
          aug_storage.push_back(augment(s, aug_rng));
          v1.push_back(&aug_storage.back().view1);
          v2.push_back(&aug_storage.back().view2);
        } else {
          v1.push_back(&s.view1);
          v2.push_back(&s.view2);
        }
        labels.push_back(s.label);
      }
      model.zero_grads();
      auto out = model.forward_train(v1, v2, mask_rng);
      Tensor<float> loss = combined_loss(out, labels);
      backward(loss, *out.tape);
      opt.step();
      loss_sum += double(loss.item()) * double(end - start);
    }
    rec.train_loss.push_back(loss_sum / double(n));

    const std::vector<double> val_scores =
        infer_scores(model, ds.val, cfg.batch_size);
    const double v = auc(val_scores, val_labels);
    rec.val_auc.push_back(v);
    if (v > best_val) {
      best_val = v;
      rec.best_epoch = epoch;
      best_snapshot = snapshot_params(model.params());
    }
  }

  if (!best_snapshot.empty()) restore_params(model.params(), best_snapshot);

  const std::vector<double> test_scores =
      infer_scores(model, ds.test, cfg.batch_size);
  rec.test_auc = auc(test_scores, split_labels(ds.test));
  model.set_capture_attention(true);
  return rec;
}

void apply_scale(ModelConfig& cfg, const std::string& scale) {
  if (scale == "tiny") {
    cfg.dim = 32;
    cfg.depth = 4;
    cfg.heads = 4;
    cfg.mlp_ratio = 2.0;
  } else if (scale == "small") {
    cfg.dim = 48;
    cfg.depth = 6;
    cfg.heads = 6;
    cfg.mlp_ratio = 2.0;
  } else if (scale == "base") {
    cfg.dim = 64;
    cfg.depth = 8;
    cfg.heads = 8;
    cfg.mlp_ratio = 2.0;
  } else {
    throw ConfigError("unknown model scale '" + scale +
                      "' (expected tiny|small|base)");
  }
}

std::string CellKey::to_string() const {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "strategy=%s,rtf=%s,split=%.2f,scale=%s",
                rtf::to_string(strategy).c_str(), rtf ? "on" : "off",
                split_fraction, scale.c_str());
  return buf;
}

namespace {

struct TaskSpecEntry {
  CellKey key;
  std::size_t cell_index;
  std::uint64_t seed;
};

RunResult run_one(const CellKey& key, std::uint64_t seed,
                  const MatrixSpec& spec, const DataSet& ds) {
  RunResult result;
  result.key = key;
  result.seed = seed;
  try {
    ModelConfig mcfg = spec.base_model;
    apply_scale(mcfg, key.scale);
    mcfg.local_fraction = key.split_fraction;
    mcfg.validate();
    MultiViewModel<float> model(mcfg, key.strategy, key.rtf);
    TrainConfig tcfg = spec.base_train;
    tcfg.seed = Rng::derive(seed, key.to_string());
    result.record = train(model, ds, tcfg);
    result.record.seed = seed;  // report the caller-visible seed
  } catch (const Error& e) {
    result.failed = true;
    result.error = e.what();
  }
  return result;
}

CellSummary summarize(const CellKey& key,
                      const std::vector<const RunResult*>& runs) {
  CellSummary s;
  s.key = key;
  std::vector<double> vals, tests;
  for (const auto* r : runs) {
    if (r->failed) {
      ++s.n_failed;
      continue;
    }
    ++s.n_ok;
    const double best_val =
        r->record.val_auc.empty() ? 0.0
                                  : r->record.val_auc[r->record.best_epoch];
    vals.push_back(best_val);
    tests.push_back(r->record.test_auc);
  }
  auto mean = [](const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    return std::accumulate(xs.begin(), xs.end(), 0.0) / double(xs.size());
  };
  auto sample_std = [&](const std::vector<double>& xs, double m) {
    if (xs.size() < 2) return 0.0;
    double acc = 0.0;
    for (double x : xs) acc += (x - m) * (x - m);
    return std::sqrt(acc / double(xs.size() - 1));
  };
  s.val_mean = mean(vals);
  s.val_std = sample_std(vals, s.val_mean);
  s.test_mean = mean(tests);
  s.test_std = sample_std(tests, s.test_mean);
  return s;
}

}  // namespace

MatrixResult run_matrix(const MatrixSpec& spec, const DataSet& ds,
                        std::size_t jobs) {
  if (spec.splits.empty() || spec.strategies.empty() ||
      spec.rtf_options.empty() || spec.scales.empty() || spec.seeds.empty()) {
    throw ConfigError("run_matrix: grid must be nonempty on every axis");
  }
  std::vector<CellKey> cells;
  for (double split : spec.splits) {
    for (FusionKind strategy : spec.strategies) {
      for (bool rtf : spec.rtf_options) {
        for (const std::string& scale : spec.scales) {
          cells.push_back({strategy, rtf, split, scale});
        }
      }
    }
  }
  std::vector<TaskSpecEntry> tasks;
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    for (std::uint64_t seed : spec.seeds) {
      tasks.push_back({cells[ci], ci, seed});
    }
  }

  std::vector<RunResult> results(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      results[i] = run_one(tasks[i].key, tasks[i].seed, spec, ds);
    }
  };
  const std::size_t n_threads =
      std::max<std::size_t>(1, std::min(jobs, tasks.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  MatrixResult out;
  out.runs = std::move(results);
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    std::vector<const RunResult*> cell_runs;
    for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
      if (tasks[ti].cell_index == ci) cell_runs.push_back(&out.runs[ti]);
    }
    out.cells.push_back(summarize(cells[ci], cell_runs));
  }
  return out;
}

AttentionBalance attention_balance(MultiViewModel<float>& model,
                                   const MultiViewSample& sample) {
  if (model.strategy() != FusionKind::Concat) {
    throw UnsupportedError(
        "attention_balance: defined only for Concat fusion (token provenance "
        "is positional)");
  }
  model.set_capture_attention(true);
  (void)model.forward_infer(sample.view1, sample.view2);
  auto stage = model.global_stage();
  Tensor<float> attn = attention_weights(stage, stage.depth() - 1);
  const std::size_t heads = attn.shape()[0];
  const std::size_t t = attn.shape()[1];
  const std::size_t n = model.config().num_patches();
  // Fused Concat layout: [cls1, spatial1 x N, cls2, spatial2 x N].
  const std::size_t cls2 = n + 1;
  double mass1 = 0.0, mass2 = 0.0;
  for (std::size_t h = 0; h < heads; ++h) {
    const float* m = attn.values().data() + h * t * t;
    for (std::size_t cls_row : {std::size_t(0), cls2}) {
      const float* row = m + cls_row * t;
      for (std::size_t j = 1; j <= n; ++j) mass1 += double(row[j]);
      for (std::size_t j = cls2 + 1; j <= cls2 + n; ++j) {
        mass2 += double(row[j]);
      }
    }
  }
  const double total = mass1 + mass2;
  if (total <= 0.0) {
    throw NumericError("attention_balance: zero spatial attention mass");
  }
  return {mass1 / total, mass2 / total};
}

AttentionMaps attention_maps(MultiViewModel<float>& model,
                             const MultiViewSample& sample) {
  AttentionMaps maps;
  maps.balance = attention_balance(model, sample);
  auto stage = model.global_stage();
  Tensor<float> attn = attention_weights(stage, stage.depth() - 1);
  const std::size_t heads = attn.shape()[0];
  const std::size_t t = attn.shape()[1];
  const std::size_t n = model.config().num_patches();
  const std::size_t cls2 = n + 1;
  maps.side = model.config().patches_per_side();
  maps.grid1.assign(n, 0.0);
  maps.grid2.assign(n, 0.0);
  const double scale = 1.0 / double(2 * heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const float* m = attn.values().data() + h * t * t;
    for (std::size_t cls_row : {std::size_t(0), cls2}) {
      const float* row = m + cls_row * t;
      for (std::size_t j = 0; j < n; ++j) {
        maps.grid1[j] += double(row[1 + j]) * scale;
        maps.grid2[j] += double(row[cls2 + 1 + j]) * scale;
      }
    }
  }
  return maps;
}

namespace {

void write_grid_text(const std::filesystem::path& path,
                     const std::vector<double>& grid, std::size_t side) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      if (x) f << ' ';
      f << format_double(grid[y * side + x]);
    }
    f << '\n';
  }
}

void write_grid_png(const std::filesystem::path& path,
                    const std::vector<double>& grid, std::size_t side,
                    std::size_t cell, double norm) {
  Image img(side * cell, side * cell, 1);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const double v = grid[(y / cell) * side + (x / cell)];
      img.at(y, x, 0) = float(norm > 0.0 ? v / norm : 0.0);
    }
  }
  write_png(path, img);
}

}  // namespace

void export_attention(MultiViewModel<float>& model, const Split& split,
                      std::size_t n, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<const MultiViewSample*> ordered;
  for (const auto& s : split.samples) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(),
            [](const MultiViewSample* a, const MultiViewSample* b) {
              return a->id < b->id;
            });
  n = std::min(n, ordered.size());

  std::ofstream balance(dir / "balance.csv");
  if (!balance) throw IoError("cannot write balance.csv under " + dir.string());
  balance << "id,mass1,mass2\n";
  const std::size_t cell = model.config().patch_size;
  for (std::size_t i = 0; i < n; ++i) {
    const MultiViewSample& s = *ordered[i];
    AttentionMaps maps = attention_maps(model, s);
    double norm = 0.0;
    for (double v : maps.grid1) norm = std::max(norm, v);
    for (double v : maps.grid2) norm = std::max(norm, v);
    write_grid_text(dir / (s.id + "_v1.txt"), maps.grid1, maps.side);
    write_grid_text(dir / (s.id + "_v2.txt"), maps.grid2, maps.side);
    write_grid_png(dir / (s.id + "_v1.png"), maps.grid1, maps.side, cell,
                   norm);
    write_grid_png(dir / (s.id + "_v2.png"), maps.grid2, maps.side, cell,
                   norm);
    balance << s.id << ',' << format_double(maps.balance.mass1) << ','
            << format_double(maps.balance.mass2) << '\n';
  }
}

void write_history_csv(const std::filesystem::path& path,
                       const RunRecord& rec) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "epoch,train_loss,val_auc\n";
  for (std::size_t e = 0; e < rec.train_loss.size(); ++e) {
    f << e << ',' << format_double(rec.train_loss[e]) << ','
      << format_double(rec.val_auc[e]) << '\n';
  }
}

void write_results_csv(const std::filesystem::path& path,
                       const MatrixResult& result) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "strategy,rtf,split_fraction,scale,seed,val_auc,test_auc,status\n";
  for (const auto& r : result.runs) {
    f << to_string(r.key.strategy) << ',' << (r.key.rtf ? "on" : "off") << ','
      << format_double(r.key.split_fraction, 2) << ',' << r.key.scale << ','
      << r.seed << ',';
    if (r.failed) {
      f << ",,failed\n";
    } else {
      const double best_val =
          r.record.val_auc.empty() ? 0.0
                                   : r.record.val_auc[r.record.best_epoch];
      f << format_double(best_val) << ',' << format_double(r.record.test_auc)
        << ",ok\n";
    }
  }
}

void write_summary_csv(const std::filesystem::path& path,
                       const MatrixResult& result) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "strategy,rtf,split_fraction,scale,n_seeds,val_auc_mean,val_auc_std,"
       "test_auc_mean,test_auc_std,n_failed\n";
  for (const auto& c : result.cells) {
    f << to_string(c.key.strategy) << ',' << (c.key.rtf ? "on" : "off") << ','
      << format_double(c.key.split_fraction, 2) << ',' << c.key.scale << ','
      << c.n_ok << ',' << format_double(c.val_mean) << ','
      << format_double(c.val_std) << ',' << format_double(c.test_mean) << ','
      << format_double(c.test_std) << ',' << c.n_failed << '\n';
  }
}

}  // namespace rtf
