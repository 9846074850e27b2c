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

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rtf/config.hpp"
#include "rtf/fusion.hpp"
#include "rtf/image.hpp"
#include "rtf/serialize.hpp"
#include "rtf/vit.hpp"

namespace rtf {

template <class Real>
struct BranchOutputs {
  Tensor<Real> y_hat;                      // Bx1 logits, global branch
  std::optional<Tensor<Real>> y_hat_rtf;   // Bx1 logits, RTF branch
  std::shared_ptr<Tape<Real>> tape;        // graph both branches live on
};

inline void model_config_to_kv(const ModelConfig& cfg, KeyValues& kv) {
  kv.set_u64("model.image_size", cfg.image_size);
  kv.set_u64("model.patch_size", cfg.patch_size);
  kv.set_u64("model.channels", cfg.channels);
  kv.set_u64("model.dim", cfg.dim);
  kv.set_u64("model.depth", cfg.depth);
  kv.set_u64("model.heads", cfg.heads);
  kv.set_double("model.mlp_ratio", cfg.mlp_ratio);
  kv.set_double("model.local_fraction", cfg.local_fraction);
  kv.set_bool("model.shared_local", cfg.shared_local);
}

inline ModelConfig model_config_from_kv(const KeyValues& kv) {
  ModelConfig cfg;
  cfg.image_size = kv.get_u64_or("model.image_size", cfg.image_size);
  cfg.patch_size = kv.get_u64_or("model.patch_size", cfg.patch_size);
  cfg.channels = kv.get_u64_or("model.channels", cfg.channels);
  cfg.dim = kv.get_u64_or("model.dim", cfg.dim);
  cfg.depth = kv.get_u64_or("model.depth", cfg.depth);
  cfg.heads = kv.get_u64_or("model.heads", cfg.heads);
  cfg.mlp_ratio = kv.get_double_or("model.mlp_ratio", cfg.mlp_ratio);
  cfg.local_fraction =
      kv.get_double_or("model.local_fraction", cfg.local_fraction);
  cfg.shared_local = kv.get_bool_or("model.shared_local", cfg.shared_local);
  cfg.validate();
  return cfg;
}

/// Two-view classifier: a local encoder applied to each view independently,
/// a fusion step, the global encoder on the fused tokens, and one shared
/// linear head. Training adds a second branch that fuses with random token
/// selection; inference runs the global branch only and consumes no
/// randomness.
template <class Real>
class MultiViewModel {
 public:
  MultiViewModel(ModelConfig cfg, FusionKind strategy, bool rtf_enabled)
      : cfg_(cfg), strategy_(strategy), rtf_enabled_(rtf_enabled) {
    cfg_.validate();
    embed_.allocate(cfg_);
    blocks_.resize(cfg_.depth);
    for (auto& b : blocks_) {
      b.allocate(cfg_.dim, cfg_.heads, cfg_.mlp_hidden());
    }
    if (!cfg_.shared_local) {
      embed2_.emplace();
      embed2_->allocate(cfg_);
      local2_.resize(cfg_.local_blocks());
      for (auto& b : local2_) {
        b.allocate(cfg_.dim, cfg_.heads, cfg_.mlp_hidden());
      }
    }
    head_w_ = Tensor<Real>(Shape{cfg_.dim, 1}, Real(0), true);
    head_b_ = Tensor<Real>(Shape{1}, Real(0), true);
  }

  void init_params(Rng& rng) {
    embed_.randomize(rng);
    for (auto& b : blocks_) b.randomize(rng);
    if (embed2_) embed2_->randomize(rng);
    for (auto& b : local2_) b.randomize(rng);
    randomize_weight(head_w_, rng);
    for (auto& v : head_b_.values()) v = Real(0);
  }

  const ModelConfig& config() const { return cfg_; }
  FusionKind strategy() const { return strategy_; }
  bool rtf_enabled() const { return rtf_enabled_; }
  void set_rtf_enabled(bool on) { rtf_enabled_ = on; }

  EncoderStage<Real> local_stage() {
    return {std::span(blocks_.data(), cfg_.local_blocks())};
  }
  /// View 2's local stage; identical to local_stage() when weights are shared.
  EncoderStage<Real> local_stage_view2() {
    if (cfg_.shared_local) return local_stage();
    return {std::span(local2_.data(), local2_.size())};
  }
  EncoderStage<Real> global_stage() {
    return {std::span(blocks_.data() + cfg_.local_blocks(),
                      cfg_.global_blocks())};
  }
  PatchEmbed<Real>& embed() { return embed_; }
  PatchEmbed<Real>& embed_view2() {
    return cfg_.shared_local ? embed_ : *embed2_;
  }

  void set_capture_attention(bool on) {
    for (auto& b : blocks_) b.capture_attention = on;
    for (auto& b : local2_) b.capture_attention = on;
  }

  std::vector<std::pair<std::string, Tensor<Real>*>> named_params() {
    std::vector<std::pair<std::string, Tensor<Real>*>> out;
    embed_.collect_params("embed", out);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      blocks_[i].collect_params("block." + std::to_string(i), out);
    }
    if (embed2_) embed2_->collect_params("embed2", out);
    for (std::size_t i = 0; i < local2_.size(); ++i) {
      local2_[i].collect_params("block2." + std::to_string(i), out);
    }
    out.emplace_back("head.w", &head_w_);
    out.emplace_back("head.b", &head_b_);
    return out;
  }

  std::vector<Tensor<Real>*> params() {
    std::vector<Tensor<Real>*> out;
    for (auto& [name, t] : named_params()) out.push_back(t);
    return out;
  }

  std::size_t param_count() {
    std::size_t n = 0;
    for (auto* t : params()) n += t->size();
    return n;
  }

  void zero_grads() {
    for (auto* t : params()) t->zero_grad();
  }

  /// Training forward. Local representations of both views are computed once
  /// per sample and consumed by both fusion branches; the RTF branch draws
  /// one fresh mask (and one fresh p) per sample from `rng`. The attention
  /// cache ends up holding the global branch of the last sample.
  BranchOutputs<Real> forward_train(std::span<const Image* const> x1,
                                    std::span<const Image* const> x2,
                                    Rng& rng) {
    if (x1.size() != x2.size() || x1.empty()) {
      throw ContractError("forward_train: need equal, nonempty view batches");
    }
    auto tape = std::make_shared<Tape<Real>>();
    Tensor<Real> y_hat, y_hat_rtf;
    for (std::size_t i = 0; i < x1.size(); ++i) {
      auto [z1, z2] = encode_local(*x1[i], *x2[i], *tape);
      if (rtf_enabled_) {
        RtfMask mask = sample_rtf_mask(cfg_.num_patches(), rng);
        Tensor<Real> zr = rtf_fuse(z1, z2, mask, *tape);
        Tensor<Real> gr = global_stage().forward(zr, *tape);
        Tensor<Real> lr = head_logit(gr, /*rtf_branch=*/true, *tape);
        y_hat_rtf =
            i == 0 ? lr : concat_along(y_hat_rtf, lr, 0, *tape);
      }
      Tensor<Real> lg = global_branch_logit(z1, z2, *tape);
      y_hat = i == 0 ? lg : concat_along(y_hat, lg, 0, *tape);
    }
    BranchOutputs<Real> out;
    out.y_hat = y_hat;
    if (rtf_enabled_) out.y_hat_rtf = y_hat_rtf;
    out.tape = tape;
    return out;
  }

  BranchOutputs<Real> forward_train(const Image& x1, const Image& x2,
                                    Rng& rng) {
    const Image* a = &x1;
    const Image* b = &x2;
    return forward_train(std::span(&a, 1), std::span(&b, 1), rng);
  }

  /// Inference: the global branch only. No mask sampling, no rng parameter,
  /// no tape recording; bit-identical to forward_train's y_hat under the
  /// same parameters and inputs.
  Tensor<Real> forward_infer(std::span<const Image* const> x1,
                             std::span<const Image* const> x2) {
    if (x1.size() != x2.size() || x1.empty()) {
      throw ContractError("forward_infer: need equal, nonempty view batches");
    }
    Tape<Real> tape;
    tape.set_recording(false);
    Tensor<Real> y_hat;
    for (std::size_t i = 0; i < x1.size(); ++i) {
      auto [z1, z2] = encode_local(*x1[i], *x2[i], tape);
      Tensor<Real> lg = global_branch_logit(z1, z2, tape);
      y_hat = i == 0 ? lg : concat_along(y_hat, lg, 0, tape);
    }
    return y_hat;
  }

  Tensor<Real> forward_infer(const Image& x1, const Image& x2) {
    const Image* a = &x1;
    const Image* b = &x2;
    return forward_infer(std::span(&a, 1), std::span(&b, 1));
  }

  /// Classifier input per fusion strategy: the CLS row for Average and for
  /// the RTF branch, the mean of the two views' CLS rows for ClsCat/Concat.
  Tensor<Real> head_forward(const Tensor<Real>& z_fused_out,
                            FusionKind strategy, bool rtf_branch,
                            Tape<Real>& tape) {
    Tensor<Real> in;
    if (rtf_branch || strategy == FusionKind::Average) {
      in = slice_tokens(z_fused_out, 0, 1, tape);
    } else {
      const std::size_t cls2 =
          strategy == FusionKind::ClsCat ? 1 : z_fused_out.rows() / 2;
      in = mul_scalar(add(slice_tokens(z_fused_out, 0, 1, tape),
                          slice_tokens(z_fused_out, cls2, cls2 + 1, tape),
                          tape),
                      Real(0.5), tape);
    }
    return linear(in, head_w_, head_b_, tape);
  }

  void save(const std::filesystem::path& dir) {
    std::vector<std::pair<std::string, const Tensor<Real>*>> named;
    for (auto& [name, t] : named_params()) named.emplace_back(name, t);
    KeyValues kv;
    model_config_to_kv(cfg_, kv);
    kv.set("fusion.strategy", rtf::to_string(strategy_));
    kv.set_bool("fusion.rtf", rtf_enabled_);
    save_checkpoint(dir, named, kv.serialize());
  }

  static MultiViewModel load(const std::filesystem::path& dir) {
    LoadedCheckpoint ck = open_checkpoint(dir);
    KeyValues kv = KeyValues::parse_text(ck.config_text);
    ModelConfig cfg = model_config_from_kv(kv);
    FusionKind strategy = fusion_from_string(kv.get_string("fusion.strategy"));
    bool rtf = kv.get_bool("fusion.rtf");
    MultiViewModel m(cfg, strategy, rtf);
    for (auto& [name, t] : m.named_params()) {
      Tensor<Real> loaded = ck.template tensor<Real>(name);
      if (loaded.shape() != t->shape()) {
        throw IoError("checkpoint: tensor '" + name + "' has shape " +
                      shape_str(loaded.shape()) + ", expected " +
                      shape_str(t->shape()));
      }
      t->values() = loaded.values();
    }
    return m;
  }

 private:
  std::pair<Tensor<Real>, Tensor<Real>> encode_local(const Image& x1,
                                                     const Image& x2,
                                                     Tape<Real>& tape) {
    Tensor<Real> z1 = embed_.forward(x1, cfg_, tape);
    z1 = local_stage().forward(z1, tape);
    Tensor<Real> z2 = embed_view2().forward(x2, cfg_, tape);
    z2 = local_stage_view2().forward(z2, tape);
    return {z1, z2};
  }

  Tensor<Real> global_branch_logit(const Tensor<Real>& z1,
                                   const Tensor<Real>& z2, Tape<Real>& tape) {
    Tensor<Real> zg = fuse(strategy_, z1, z2, tape);
    Tensor<Real> gg = global_stage().forward(zg, tape);
    return head_logit(gg, /*rtf_branch=*/false, tape);
  }

  Tensor<Real> head_logit(const Tensor<Real>& z, bool rtf_branch,
                          Tape<Real>& tape) {
    return head_forward(z, strategy_, rtf_branch, tape);
  }

  ModelConfig cfg_;
  FusionKind strategy_;
  bool rtf_enabled_;
  PatchEmbed<Real> embed_;
  std::optional<PatchEmbed<Real>> embed2_;
  std::vector<EncoderBlock<Real>> blocks_;   // local then global
  std::vector<EncoderBlock<Real>> local2_;   // twin local blocks, view 2
  Tensor<Real> head_w_, head_b_;
};

/// Sum of the per-branch mean BCE losses: the RTF term is added, unweighted,
/// whenever the RTF branch was produced.
template <class Real>
Tensor<Real> combined_loss(const BranchOutputs<Real>& out,
                           std::span<const int> labels) {
  if (!out.tape) throw ContractError("combined_loss: outputs carry no tape");
  if (labels.size() != out.y_hat.rows()) {
    throw DimensionError("combined_loss: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(out.y_hat.rows()) +
                         " logits");
  }
  std::vector<Real> tv(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw ValidationError("combined_loss: labels must be in {0,1}");
    }
    tv[i] = static_cast<Real>(labels[i]);
  }
  Tensor<Real> targets =
      Tensor<Real>::from_values(Shape{labels.size(), 1}, std::move(tv));
  Tensor<Real> loss = bce_with_logits(out.y_hat, targets, *out.tape);
  if (out.y_hat_rtf.has_value()) {
    loss = add(loss, bce_with_logits(*out.y_hat_rtf, targets, *out.tape),
               *out.tape);
  }
  return loss;
}

}  // namespace rtf
