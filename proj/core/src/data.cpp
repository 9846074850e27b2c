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

#include "rtf/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "rtf/errors.hpp"
#include "rtf/image_io.hpp"

namespace rtf {

std::string to_string(TaskKind k) {
  return k == TaskKind::Xor ? "xor" : "dominant";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "xor") return TaskKind::Xor;
  if (s == "dominant") return TaskKind::Dominant;
  throw ConfigError("unknown task kind '" + s + "' (expected xor|dominant)");
}

namespace {

struct Item {
  int label;
  int cue1;
  int cue2;
};

void check_balance(const std::vector<Item>& items, const std::string& name) {
  std::size_t pos = 0;
  for (const auto& it : items) pos += std::size_t(it.label);
  const double frac = double(pos) / double(items.size());
  if (std::abs(frac - 0.5) > 0.02) {
    throw GenerationError("generate: split '" + name +
                          "' cannot satisfy 50% +- 2% class balance (" +
                          std::to_string(pos) + "/" +
                          std::to_string(items.size()) + " positive)");
  }
}

std::vector<Item> plan_items(const TaskSpec& spec, std::size_t n,
                             const std::string& name, Rng& rng) {
  if (n == 0) {
    throw GenerationError("generate: split '" + name + "' is empty");
  }
  std::vector<Item> items;
  items.reserve(n);
  if (spec.kind == TaskKind::Xor) {
    // Cycle the four (cue1, cue2) combinations so that for sizes divisible
    // by 4 each combination appears exactly n/4 times: the label is then
    // exactly balanced and exactly independent of each view's cue.
    for (std::size_t i = 0; i < n; ++i) {
      const int c1 = int((i % 4) >> 1);
      const int c2 = int(i % 2);
      items.push_back({c1 ^ c2, c1, c2});
    }
  } else {
    // View 2 always carries the label; view 1 disagrees on a deterministic
    // count of round((1-alpha) * class size) samples per class.
    if (spec.alpha < 0.0 || spec.alpha > 1.0) {
      throw GenerationError("generate: alpha must lie in [0,1]");
    }
    const std::size_t n_pos = n / 2;
    const std::size_t n_neg = n - n_pos;
    for (int label = 0; label <= 1; ++label) {
      const std::size_t n_class = label == 1 ? n_pos : n_neg;
      const std::size_t flips = std::size_t(
          std::lround((1.0 - spec.alpha) * double(n_class)));
      for (std::size_t i = 0; i < n_class; ++i) {
        const int cue1 = i < flips ? 1 - label : label;
        items.push_back({label, cue1, label});
      }
    }
  }
  check_balance(items, name);
  rng.shuffle(items);
  return items;
}

void render_view(Image& img, int side, int view_index, const TaskSpec& spec,
                 Rng& rng) {
  const std::size_t s = spec.image_size;
  const auto sq = std::max<std::size_t>(2, std::size_t(std::lround(0.3 * double(s))));
  const std::size_t x0 =
      std::size_t(std::lround((side == 0 ? 0.10 : 0.60) * double(s)));
  const std::size_t y0 =
      std::size_t(std::lround((view_index == 1 ? 0.125 : 0.56) * double(s)));
  constexpr float kBg = 0.1f;
  constexpr float kFg = 0.9f;
  std::fill(img.pixels.begin(), img.pixels.end(), kBg);
  for (std::size_t y = y0; y < std::min(y0 + sq, s); ++y) {
    for (std::size_t x = x0; x < std::min(x0 + sq, s); ++x) {
      for (std::size_t c = 0; c < spec.channels; ++c) img.at(y, x, c) = kFg;
    }
  }
  if (spec.noise > 0.0) {
    for (auto& p : img.pixels) {
      float v = p + float(rng.normal() * spec.noise);
      p = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    }
  }
}

Split make_split(const TaskSpec& spec, std::size_t n, const std::string& name,
                 std::uint64_t split_seed) {
  Rng rng(split_seed);
  std::vector<Item> items = plan_items(spec, n, name, rng);
  Split split;
  split.samples.reserve(n);
  split.cues.reserve(n);
  const std::string prefix = to_string(spec.kind) + "-" + name + "-";
  for (std::size_t i = 0; i < n; ++i) {
    MultiViewSample s;
    s.view1 = Image(spec.image_size, spec.image_size, spec.channels);
    s.view2 = Image(spec.image_size, spec.image_size, spec.channels);
    render_view(s.view1, items[i].cue1, 1, spec, rng);
    render_view(s.view2, items[i].cue2, 2, spec, rng);
    s.label = items[i].label;
    char id[64];
    std::snprintf(id, sizeof(id), "%s%05zu", prefix.c_str(), i);
    s.id = id;
    split.samples.push_back(std::move(s));
    split.cues.push_back({items[i].cue1, items[i].cue2});
  }
  return split;
}

}  // namespace

DataSet generate(const TaskSpec& spec) {
  if (spec.image_size < 8) {
    throw GenerationError("generate: image_size must be at least 8");
  }
  if (spec.channels != 1 && spec.channels != 3) {
    throw GenerationError("generate: channels must be 1 or 3");
  }
  DataSet ds;
  ds.train = make_split(spec, spec.n_train, "train",
                        Rng::derive(spec.seed, "split:train"));
  ds.val =
      make_split(spec, spec.n_val, "val", Rng::derive(spec.seed, "split:val"));
  ds.test = make_split(spec, spec.n_test, "test",
                       Rng::derive(spec.seed, "split:test"));
  return ds;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, '\t')) out.push_back(field);
  return out;
}

}  // namespace

Split load_pairs(const std::filesystem::path& root, std::size_t* skipped) {
  const auto manifest_path = root / "manifest.tsv";
  std::ifstream manifest(manifest_path);
  if (!manifest) {
    throw IoError("load_pairs: no manifest at " + manifest_path.string());
  }
  Split split;
  std::size_t skip_count = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (lineno == 1 && !fields.empty() && fields[0] == "id") continue;
    if (fields.size() != 4) {
      throw IoError("load_pairs: manifest line " + std::to_string(lineno) +
                    ": expected 4 tab-separated fields");
    }
    if (fields[3] != "0" && fields[3] != "1") {
      throw IoError("load_pairs: manifest line " + std::to_string(lineno) +
                    ": label must be 0 or 1");
    }
    MultiViewSample s;
    s.id = fields[0];
    s.label = fields[3] == "1" ? 1 : 0;
    try {
      s.view1 = read_png(root / fields[1]);
      s.view2 = read_png(root / fields[2]);
    } catch (const IoError& e) {
      std::cerr << "warning: skipping sample '" << s.id << "': " << e.what()
                << "\n";
      ++skip_count;
      continue;
    }
    split.samples.push_back(std::move(s));
  }
  std::sort(split.samples.begin(), split.samples.end(),
            [](const MultiViewSample& a, const MultiViewSample& b) {
              return a.id < b.id;
            });
  if (skipped != nullptr) *skipped = skip_count;
  if (split.samples.empty()) {
    throw IoError("load_pairs: no complete sample under " + root.string());
  }
  return split;
}

DataSet load_dataset(const std::filesystem::path& root) {
  DataSet ds;
  ds.train = load_pairs(root / "train");
  ds.val = load_pairs(root / "val");
  ds.test = load_pairs(root / "test");
  return ds;
}

void export_split(const Split& split, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.tsv");
  if (!manifest) {
    throw IoError("export: cannot write manifest under " + dir.string());
  }
  manifest << "id\tview1_path\tview2_path\tlabel\n";
  for (const auto& s : split.samples) {
    const std::string v1 = s.id + "_v1.png";
    const std::string v2 = s.id + "_v2.png";
    write_png(dir / v1, s.view1);
    write_png(dir / v2, s.view2);
    manifest << s.id << '\t' << v1 << '\t' << v2 << '\t' << s.label << '\n';
  }
  if (!split.cues.empty()) {
    std::ofstream cues(dir / "cues.tsv");
    cues << "id\tcue1\tcue2\n";
    for (std::size_t i = 0; i < split.samples.size(); ++i) {
      cues << split.samples[i].id << '\t' << split.cues[i].cue1 << '\t'
           << split.cues[i].cue2 << '\n';
    }
  }
}

void export_dataset(const DataSet& ds, const std::filesystem::path& root) {
  export_split(ds.train, root / "train");
  export_split(ds.val, root / "val");
  export_split(ds.test, root / "test");
}

Image flip_horizontal(const Image& img) {
  Image out(img.height, img.width, img.channels);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < img.channels; ++c) {
        out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
      }
    }
  }
  return out;
}

MultiViewSample augment(const MultiViewSample& s, Rng& rng) {
  MultiViewSample out = s;
  if (rng.bernoulli(0.5)) out.view1 = flip_horizontal(out.view1);
  if (rng.bernoulli(0.5)) out.view2 = flip_horizontal(out.view2);
  return out;
}

namespace {

Split restrict_split(const Split& in, int view) {
  Split out = in;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    auto& s = out.samples[i];
    if (view == 1) {
      s.view2 = s.view1;
    } else {
      s.view1 = s.view2;
    }
    if (i < out.cues.size()) {
      auto& c = out.cues[i];
      (view == 1 ? c.cue2 : c.cue1) = (view == 1 ? c.cue1 : c.cue2);
    }
  }
  return out;
}

}  // namespace

DataSet restrict_to_view(const DataSet& ds, int view) {
  if (view != 1 && view != 2) {
    throw ContractError("restrict_to_view: view must be 1 or 2");
  }
  DataSet out;
  out.train = restrict_split(ds.train, view);
  out.val = restrict_split(ds.val, view);
  out.test = restrict_split(ds.test, view);
  return out;
}

}  // namespace rtf
