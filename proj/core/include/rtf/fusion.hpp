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
#include <string>
#include <vector>

#include "rtf/ops.hpp"
#include "rtf/rng.hpp"
#include "rtf/tensor.hpp"
#include "rtf/vit.hpp"

namespace rtf {

/// How the two views' token sets are merged before the global encoder.
///   Average: elementwise mean of all tokens, output N+1 tokens.
///   ClsCat:  keep only the two CLS tokens, output 2 tokens.
///   Concat:  all tokens of both views back to back, output 2(N+1) tokens.
enum class FusionKind { Average, ClsCat, Concat };

inline std::string to_string(FusionKind k) {
  switch (k) {
    case FusionKind::Average:
      return "average";
    case FusionKind::ClsCat:
      return "clscat";
    case FusionKind::Concat:
      return "concat";
  }
  return "?";
}

inline FusionKind fusion_from_string(const std::string& s) {
  if (s == "average") return FusionKind::Average;
  if (s == "clscat") return FusionKind::ClsCat;
  if (s == "concat") return FusionKind::Concat;
  throw ConfigError("unknown fusion strategy '" + s +
                    "' (expected average|clscat|concat)");
}

/// Per-sample training-time token selection mask. bits[i] set means spatial
/// token i+1 is taken from view 1. The shared keep probability p is drawn
/// fresh from U(0,1) for every mask.
struct RtfMask {
  std::vector<std::uint8_t> bits;
  double p = 0.0;

  /// Loggable form, leftmost character = spatial token 1.
  std::string bit_string() const {
    std::string s(bits.size(), '0');
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (bits[i]) s[i] = '1';
    }
    return s;
  }
};

/// n independent Bernoulli(p) bits for a caller-supplied p. Exposed so tests
/// can pin the degenerate p=0 / p=1 cases.
inline RtfMask sample_rtf_mask_given_p(std::size_t n, double p, Rng& rng) {
  if (n == 0) {
    throw ContractError("sample_rtf_mask: need at least one spatial token");
  }
  RtfMask m;
  m.p = p;
  m.bits.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    m.bits[i] = rng.bernoulli(p) ? 1 : 0;
  }
  return m;
}

/// Draws p ~ U(0,1) once, then n Bernoulli(p) bits.
inline RtfMask sample_rtf_mask(std::size_t n, Rng& rng) {
  if (n == 0) {
    throw ContractError("sample_rtf_mask: need at least one spatial token");
  }
  double p = rng.uniform01();
  return sample_rtf_mask_given_p(n, p, rng);
}

namespace detail {

template <class Real>
void require_same_cols(const char* op, const TokenSet<Real>& a,
                       const TokenSet<Real>& b) {
  require_rank2(op, a);
  require_rank2(op, b);
  if (a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": token dims disagree: " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace detail

/// z = (z1 + z2) / 2 over all tokens. Token counts and dims must match.
template <class Real>
TokenSet<Real> fuse_average(const TokenSet<Real>& z1, const TokenSet<Real>& z2,
                            Tape<Real>& tape) {
  detail::require_same_cols("fuse_average", z1, z2);
  if (z1.rows() != z2.rows()) {
    throw DimensionError("fuse_average: token counts disagree: " +
                         shape_str(z1.shape()) + " vs " +
                         shape_str(z2.shape()));
  }
  return mul_scalar(add(z1, z2, tape), Real(0.5), tape);
}

/// Keeps only the two CLS tokens: output is {z1_cls, z2_cls}.
template <class Real>
TokenSet<Real> fuse_cls_cat(const TokenSet<Real>& z1, const TokenSet<Real>& z2,
                            Tape<Real>& tape) {
  detail::require_same_cols("fuse_cls_cat", z1, z2);
  return concat_along(slice_tokens(z1, 0, 1, tape),
                      slice_tokens(z2, 0, 1, tape), 0, tape);
}

/// All tokens of both views back to back:
/// {z1_cls, z1_spatial..., z2_cls, z2_spatial...}. Token counts may differ.
template <class Real>
TokenSet<Real> fuse_concat(const TokenSet<Real>& z1, const TokenSet<Real>& z2,
                           Tape<Real>& tape) {
  detail::require_same_cols("fuse_concat", z1, z2);
  return concat_along(z1, z2, 0, tape);
}

/// Training-time random token fusion: spatial token i comes from view 1 when
/// bits[i] is set and from view 2 otherwise (an exact row copy); the CLS
/// token is the mean of the two views' CLS tokens. Output has N+1 tokens.
template <class Real>
TokenSet<Real> rtf_fuse(const TokenSet<Real>& z1, const TokenSet<Real>& z2,
                        const RtfMask& mask, Tape<Real>& tape) {
  detail::require_same_cols("rtf_fuse", z1, z2);
  if (z1.rows() != z2.rows()) {
    throw DimensionError("rtf_fuse: token counts disagree: " +
                         shape_str(z1.shape()) + " vs " +
                         shape_str(z2.shape()));
  }
  const std::size_t n = z1.rows() - 1;
  if (mask.bits.size() != n) {
    throw DimensionError("rtf_fuse: mask length " +
                         std::to_string(mask.bits.size()) +
                         " does not match " + std::to_string(n) +
                         " spatial tokens");
  }
  TokenSet<Real> cls =
      mul_scalar(add(slice_tokens(z1, 0, 1, tape),
                     slice_tokens(z2, 0, 1, tape), tape),
                 Real(0.5), tape);
  TokenSet<Real> spatial =
      select_rows(slice_tokens(z1, 1, n + 1, tape),
                  slice_tokens(z2, 1, n + 1, tape), mask.bits, tape);
  return concat_along(cls, spatial, 0, tape);
}

/// Baseline fusion dispatch.
template <class Real>
TokenSet<Real> fuse(FusionKind kind, const TokenSet<Real>& z1,
                    const TokenSet<Real>& z2, Tape<Real>& tape) {
  switch (kind) {
    case FusionKind::Average:
      return fuse_average(z1, z2, tape);
    case FusionKind::ClsCat:
      return fuse_cls_cat(z1, z2, tape);
    case FusionKind::Concat:
      return fuse_concat(z1, z2, tape);
  }
  throw ContractError("fuse: invalid strategy");
}

}  // namespace rtf
