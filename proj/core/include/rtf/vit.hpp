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
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rtf/image.hpp"
#include "rtf/ops.hpp"
#include "rtf/rng.hpp"
#include "rtf/tensor.hpp"

namespace rtf {

/// Token matrix convention: rank-2 (T x D), row 0 is the CLS token and rows
/// 1..T-1 are spatial tokens in row-major patch order.
template <class Real>
using TokenSet = Tensor<Real>;

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kInitStd = 0.02;

struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 1;
  std::size_t dim = 32;
  std::size_t depth = 4;
  std::size_t heads = 4;
  double mlp_ratio = 2.0;
  double local_fraction = 0.75;
  /// When false, view 2 gets its own copy of the patch embedding and local
  /// blocks instead of sharing view 1's.
  bool shared_local = true;

  std::size_t patches_per_side() const { return image_size / patch_size; }
  std::size_t num_patches() const {
    return patches_per_side() * patches_per_side();
  }
  std::size_t tokens() const { return num_patches() + 1; }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t mlp_hidden() const {
    return static_cast<std::size_t>(std::lround(mlp_ratio * double(dim)));
  }
  std::size_t head_dim() const { return dim / heads; }
  std::size_t local_blocks() const {
    return static_cast<std::size_t>(
        std::lround(local_fraction * double(depth)));
  }
  std::size_t global_blocks() const { return depth - local_blocks(); }

  void validate() const {
    if (patch_size == 0 || image_size % patch_size != 0) {
      throw ConfigError("model: image_size " + std::to_string(image_size) +
                        " not divisible by patch_size " +
                        std::to_string(patch_size));
    }
    if (heads == 0 || dim % heads != 0) {
      throw ConfigError("model: dim " + std::to_string(dim) +
                        " not divisible by heads " + std::to_string(heads));
    }
    if (channels == 0) throw ConfigError("model: channels must be positive");
    if (mlp_ratio <= 0.0) {
      throw ConfigError("model: mlp_ratio must be positive");
    }
    const std::size_t lb = local_blocks();
    if (lb < 1 || lb > depth - 1) {
      throw ConfigError(
          "model: local_fraction " + format_fraction(local_fraction) +
          " yields " + std::to_string(lb) + " local blocks of " +
          std::to_string(depth) + "; need between 1 and " +
          std::to_string(depth - 1));
    }
  }

 private:
  static std::string format_fraction(double f) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", f);
    return buf;
  }
};

template <class Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& w,
                    const Tensor<Real>& b, Tape<Real>& tape) {
  return add(matmul(x, w, tape), broadcast_rows(b, x.rows(), tape), tape);
}

/// Truncated-normal fill (std 0.02, clipped at two sigma), the usual ViT
/// weight init.
template <class Real>
void randomize_weight(Tensor<Real>& w, Rng& rng) {
  for (auto& v : w.values()) {
    v = static_cast<Real>(rng.truncated_normal(kInitStd, 2.0 * kInitStd));
  }
}

template <class Real>
struct LayerNormParams {
  Tensor<Real> gain;
  Tensor<Real> bias;

  void allocate(std::size_t dim) {
    gain = Tensor<Real>(Shape{dim}, Real(1), /*tracked=*/true);
    bias = Tensor<Real>(Shape{dim}, Real(0), /*tracked=*/true);
  }
};

/// One pre-norm transformer block:
///   x += MHSA(LN(x));  x += MLP(LN(x))
/// The post-softmax attention of the most recent forward is cached per block
/// when capture_attention is set (needed for attention-map export).
template <class Real>
struct EncoderBlock {
  LayerNormParams<Real> norm_attn;
  Tensor<Real> wq, bq, wk, bk, wv, bv, wo, bo;
  LayerNormParams<Real> norm_mlp;
  Tensor<Real> w1, b1, w2, b2;
  std::size_t heads = 1;
  bool capture_attention = true;
  std::optional<Tensor<Real>> cached_attention;  // heads x T x T, untracked

  void allocate(std::size_t dim, std::size_t n_heads, std::size_t hidden) {
    heads = n_heads;
    norm_attn.allocate(dim);
    norm_mlp.allocate(dim);
    wq = Tensor<Real>(Shape{dim, dim}, Real(0), true);
    wk = Tensor<Real>(Shape{dim, dim}, Real(0), true);
    wv = Tensor<Real>(Shape{dim, dim}, Real(0), true);
    wo = Tensor<Real>(Shape{dim, dim}, Real(0), true);
    bq = Tensor<Real>(Shape{dim}, Real(0), true);
    bk = Tensor<Real>(Shape{dim}, Real(0), true);
    bv = Tensor<Real>(Shape{dim}, Real(0), true);
    bo = Tensor<Real>(Shape{dim}, Real(0), true);
    w1 = Tensor<Real>(Shape{dim, hidden}, Real(0), true);
    b1 = Tensor<Real>(Shape{hidden}, Real(0), true);
    w2 = Tensor<Real>(Shape{hidden, dim}, Real(0), true);
    b2 = Tensor<Real>(Shape{dim}, Real(0), true);
  }

  void randomize(Rng& rng) {
    randomize_weight(wq, rng);
    randomize_weight(wk, rng);
    randomize_weight(wv, rng);
    randomize_weight(wo, rng);
    randomize_weight(w1, rng);
    randomize_weight(w2, rng);
  }

  Tensor<Real> forward(const Tensor<Real>& x, Tape<Real>& tape) {
    const std::size_t dim = wq.rows();
    if (x.rank() != 2 || x.cols() != dim) {
      throw DimensionError("encoder block: token dim mismatch: input " +
                           shape_str(x.shape()) + " vs block dim " +
                           std::to_string(dim));
    }
    const std::size_t t = x.rows();
    const std::size_t dh = dim / heads;
    const Real scale = Real(1) / static_cast<Real>(std::sqrt(double(dh)));

    Tensor<Real> h = layer_norm(x, norm_attn.gain, norm_attn.bias,
                                Real(kLayerNormEps), tape);
    Tensor<Real> q = linear(h, wq, bq, tape);
    Tensor<Real> k = linear(h, wk, bk, tape);
    Tensor<Real> v = linear(h, wv, bv, tape);

    Tensor<Real> heads_out;
    Tensor<Real> attn_snapshot;
    if (capture_attention) {
      attn_snapshot = Tensor<Real>(Shape{heads, t, t});
    }
    for (std::size_t hd = 0; hd < heads; ++hd) {
      Tensor<Real> qh = slice_channels(q, hd * dh, (hd + 1) * dh, tape);
      Tensor<Real> kh = slice_channels(k, hd * dh, (hd + 1) * dh, tape);
      Tensor<Real> vh = slice_channels(v, hd * dh, (hd + 1) * dh, tape);
      Tensor<Real> scores = mul_scalar(
          matmul(qh, transpose_last2(kh, tape), tape), scale, tape);
      Tensor<Real> attn = softmax_rows(scores, tape);
      if (capture_attention) {
        std::copy(attn.values().begin(), attn.values().end(),
                  attn_snapshot.values().begin() + hd * t * t);
      }
      Tensor<Real> oh = matmul(attn, vh, tape);
      heads_out = hd == 0 ? oh : concat_along(heads_out, oh, 1, tape);
    }
    if (capture_attention) cached_attention = attn_snapshot;

    Tensor<Real> attn_out = linear(heads_out, wo, bo, tape);
    Tensor<Real> x1 = add(x, attn_out, tape);

    Tensor<Real> h2 =
        layer_norm(x1, norm_mlp.gain, norm_mlp.bias, Real(kLayerNormEps), tape);
    Tensor<Real> m =
        linear(gelu(linear(h2, w1, b1, tape), tape), w2, b2, tape);
    return add(x1, m, tape);
  }

  void collect_params(const std::string& prefix,
                      std::vector<std::pair<std::string, Tensor<Real>*>>& out) {
    out.emplace_back(prefix + ".norm_attn.gain", &norm_attn.gain);
    out.emplace_back(prefix + ".norm_attn.bias", &norm_attn.bias);
    out.emplace_back(prefix + ".attn.wq", &wq);
    out.emplace_back(prefix + ".attn.bq", &bq);
    out.emplace_back(prefix + ".attn.wk", &wk);
    out.emplace_back(prefix + ".attn.bk", &bk);
    out.emplace_back(prefix + ".attn.wv", &wv);
    out.emplace_back(prefix + ".attn.bv", &bv);
    out.emplace_back(prefix + ".attn.wo", &wo);
    out.emplace_back(prefix + ".attn.bo", &bo);
    out.emplace_back(prefix + ".norm_mlp.gain", &norm_mlp.gain);
    out.emplace_back(prefix + ".norm_mlp.bias", &norm_mlp.bias);
    out.emplace_back(prefix + ".mlp.w1", &w1);
    out.emplace_back(prefix + ".mlp.b1", &b1);
    out.emplace_back(prefix + ".mlp.w2", &w2);
    out.emplace_back(prefix + ".mlp.b2", &b2);
  }
};

/// Non-owning run of consecutive blocks. The local and global stages of a
/// split encoder are two disjoint EncoderStage views over one block vector.
template <class Real>
struct EncoderStage {
  std::span<EncoderBlock<Real>> blocks;

  std::size_t depth() const { return blocks.size(); }

  Tensor<Real> forward(Tensor<Real> z, Tape<Real>& tape) {
    for (auto& b : blocks) z = b.forward(z, tape);
    return z;
  }
};

template <class Real>
Tensor<Real> stage_forward(const Tensor<Real>& z, EncoderStage<Real> stage,
                           Tape<Real>& tape) {
  return stage.forward(z, tape);
}

/// Post-softmax attention (heads x T x T) of one block for the last forward
/// pass through it.
template <class Real>
Tensor<Real> attention_weights(const EncoderStage<Real>& stage,
                               std::size_t block_index) {
  if (block_index >= stage.blocks.size()) {
    throw DimensionError("attention_weights: block index " +
                         std::to_string(block_index) + " out of range for " +
                         std::to_string(stage.blocks.size()) + " blocks");
  }
  const auto& cache = stage.blocks[block_index].cached_attention;
  if (!cache.has_value()) {
    throw StateError(
        "attention_weights: no cached forward pass for this block");
  }
  return *cache;
}

/// Learned patch projection + CLS token + learned positional embeddings.
template <class Real>
struct PatchEmbed {
  Tensor<Real> proj_w;  // (patch_size^2 * channels) x dim
  Tensor<Real> proj_b;  // dim
  Tensor<Real> cls;     // 1 x dim
  Tensor<Real> pos;     // (N+1) x dim

  void allocate(const ModelConfig& cfg) {
    proj_w = Tensor<Real>(Shape{cfg.patch_dim(), cfg.dim}, Real(0), true);
    proj_b = Tensor<Real>(Shape{cfg.dim}, Real(0), true);
    cls = Tensor<Real>(Shape{1, cfg.dim}, Real(0), true);
    pos = Tensor<Real>(Shape{cfg.tokens(), cfg.dim}, Real(0), true);
  }

  void randomize(Rng& rng) {
    randomize_weight(proj_w, rng);
    randomize_weight(cls, rng);
    randomize_weight(pos, rng);
  }

  TokenSet<Real> forward(const Image& img, const ModelConfig& cfg,
                         Tape<Real>& tape) const {
    if (img.height != cfg.image_size || img.width != cfg.image_size ||
        img.channels != cfg.channels) {
      throw DimensionError(
          "patch_embed: image " + std::to_string(img.height) + "x" +
          std::to_string(img.width) + "x" + std::to_string(img.channels) +
          " does not match configured " + std::to_string(cfg.image_size) +
          "x" + std::to_string(cfg.image_size) + "x" +
          std::to_string(cfg.channels));
    }
    const std::size_t p = cfg.patch_size;
    const std::size_t side = cfg.patches_per_side();
    const std::size_t pd = cfg.patch_dim();
    // Patch pixels are constants; only the projection is differentiable.
    Tensor<Real> patches(Shape{cfg.num_patches(), pd});
    for (std::size_t py = 0; py < side; ++py) {
      for (std::size_t px = 0; px < side; ++px) {
        Real* dst = patches.values().data() + (py * side + px) * pd;
        std::size_t i = 0;
        for (std::size_t y = 0; y < p; ++y) {
          for (std::size_t x = 0; x < p; ++x) {
            for (std::size_t c = 0; c < cfg.channels; ++c) {
              dst[i++] =
                  static_cast<Real>(img.at(py * p + y, px * p + x, c));
            }
          }
        }
      }
    }
    Tensor<Real> tok = linear(patches, proj_w, proj_b, tape);
    Tensor<Real> with_cls = concat_along(cls, tok, 0, tape);
    return add(with_cls, pos, tape);
  }

  void collect_params(const std::string& prefix,
                      std::vector<std::pair<std::string, Tensor<Real>*>>& out) {
    out.emplace_back(prefix + ".proj_w", &proj_w);
    out.emplace_back(prefix + ".proj_b", &proj_b);
    out.emplace_back(prefix + ".cls", &cls);
    out.emplace_back(prefix + ".pos", &pos);
  }
};

template <class Real>
TokenSet<Real> patch_embed(const Image& img, const ModelConfig& cfg,
                           const PatchEmbed<Real>& params, Tape<Real>& tape) {
  return params.forward(img, cfg, tape);
}

}  // namespace rtf
