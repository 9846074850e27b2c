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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rtf/tensor.hpp"

namespace rtf {

namespace detail {

// C(MxP) += A(MxK) * B(KxP). ikj order keeps the inner loop contiguous.
template <class Real>
void gemm_acc(const Real* a, const Real* b, Real* c, std::size_t m,
              std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* ai = a + i * k;
    Real* ci = c + i * p;
    for (std::size_t kk = 0; kk < k; ++kk) {
      Real av = ai[kk];
      const Real* bk = b + kk * p;
      for (std::size_t j = 0; j < p; ++j) ci[j] += av * bk[j];
    }
  }
}

// C(MxP) += A^T * B with A stored as (KxM), B as (KxP).
template <class Real>
void gemm_atb_acc(const Real* a, const Real* b, Real* c, std::size_t k,
                  std::size_t m, std::size_t p) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    const Real* ak = a + kk * m;
    const Real* bk = b + kk * p;
    for (std::size_t i = 0; i < m; ++i) {
      Real av = ak[i];
      Real* ci = c + i * p;
      for (std::size_t j = 0; j < p; ++j) ci[j] += av * bk[j];
    }
  }
}

// C(MxJ) += A(MxN) * B^T with B stored as (JxN).
template <class Real>
void gemm_abt_acc(const Real* a, const Real* b, Real* c, std::size_t m,
                  std::size_t n, std::size_t j) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* ai = a + i * n;
    Real* ci = c + i * j;
    for (std::size_t jj = 0; jj < j; ++jj) {
      const Real* bj = b + jj * n;
      Real acc = Real(0);
      for (std::size_t nn = 0; nn < n; ++nn) acc += ai[nn] * bj[nn];
      ci[jj] += acc;
    }
  }
}

template <class Real>
void require_rank2(const char* op, const Tensor<Real>& t) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a rank-2 tensor, got " +
                         shape_str(t.shape()));
  }
}

template <class Real>
void require_same_shape(const char* op, const Tensor<Real>& a,
                        const Tensor<Real>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch: " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <class Real>
bool should_record(const Tape<Real>& tape, std::initializer_list<bool> tracked) {
  if (!tape.recording()) return false;
  for (bool t : tracked) {
    if (t) return true;
  }
  return false;
}

template <class Real>
Real sigmoid_stable(Real l) {
  if (l >= Real(0)) {
    return Real(1) / (Real(1) + std::exp(-l));
  }
  Real e = std::exp(l);
  return e / (Real(1) + e);
}

}  // namespace detail

/// Matrix product [MxK]*[KxP] -> [MxP]. Backward: dA += dC*B^T, dB += A^T*dC.
template <class Real>
Tensor<Real> matmul(Tensor<Real> a, Tensor<Real> b, Tape<Real>& tape) {
  detail::require_rank2("matmul", a);
  detail::require_rank2("matmul", b);
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree: " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
  Tensor<Real> out(Shape{m, p});
  detail::gemm_acc(a.values().data(), b.values().data(), out.values().data(),
                   m, k, p);
  guard_finite("matmul", out);
  if (detail::should_record(tape, {a.tracked(), b.tracked()})) {
    out.set_tracked(true);
    tape.push("matmul", [a, b, out, m, k, p]() mutable {
      if (!out.has_grad()) return;
      const Real* dc = out.grad().data();
      if (a.tracked()) {
        detail::gemm_abt_acc(dc, b.values().data(), a.grad().data(), m, p, k);
      }
      if (b.tracked()) {
        detail::gemm_atb_acc(a.values().data(), dc, b.grad().data(), m, k, p);
      }
    });
  }
  return out;
}

/// Row-wise softmax with max subtraction. Rows sum to 1.
template <class Real>
Tensor<Real> softmax_rows(Tensor<Real> a, Tape<Real>& tape) {
  detail::require_rank2("softmax_rows", a);
  const std::size_t r = a.rows(), c = a.cols();
  Tensor<Real> out(Shape{r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const Real* x = a.values().data() + i * c;
    Real* y = out.values().data() + i * c;
    Real mx = x[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    Real sum = Real(0);
    for (std::size_t j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    Real inv = Real(1) / sum;
    for (std::size_t j = 0; j < c; ++j) y[j] *= inv;
  }
  guard_finite("softmax_rows", out);
  if (detail::should_record(tape, {a.tracked()})) {
    out.set_tracked(true);
    tape.push("softmax_rows", [a, out, r, c]() mutable {
      if (!out.has_grad()) return;
      const Real* y = out.values().data();
      const Real* dy = out.grad().data();
      Real* dx = a.grad().data();
      for (std::size_t i = 0; i < r; ++i) {
        const Real* yi = y + i * c;
        const Real* dyi = dy + i * c;
        Real dot = Real(0);
        for (std::size_t j = 0; j < c; ++j) dot += dyi[j] * yi[j];
        Real* dxi = dx + i * c;
        for (std::size_t j = 0; j < c; ++j) dxi[j] += yi[j] * (dyi[j] - dot);
      }
    });
  }
  return out;
}

/// Per-row normalization to mean 0 / unit variance (biased), then an affine
/// map by the row vectors gain and bias.
template <class Real>
Tensor<Real> layer_norm(Tensor<Real> a, Tensor<Real> gain,
                        Tensor<Real> bias, Real eps, Tape<Real>& tape) {
  detail::require_rank2("layer_norm", a);
  if (eps <= Real(0)) {
    throw ContractError("layer_norm: eps must be positive");
  }
  const std::size_t r = a.rows(), c = a.cols();
  if (gain.rank() != 1 || gain.size() != c || bias.rank() != 1 ||
      bias.size() != c) {
    throw DimensionError("layer_norm: gain/bias must be length-" +
                         std::to_string(c) + " vectors, got " +
                         shape_str(gain.shape()) + " and " +
                         shape_str(bias.shape()));
  }
  Tensor<Real> out(Shape{r, c});
  auto xhat = std::make_shared<std::vector<Real>>(r * c);
  auto inv_std = std::make_shared<std::vector<Real>>(r);
  for (std::size_t i = 0; i < r; ++i) {
    const Real* x = a.values().data() + i * c;
    Real mean = Real(0);
    for (std::size_t j = 0; j < c; ++j) mean += x[j];
    mean /= Real(c);
    Real var = Real(0);
    for (std::size_t j = 0; j < c; ++j) {
      Real d = x[j] - mean;
      var += d * d;
    }
    var /= Real(c);
    Real inv = Real(1) / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    Real* xh = xhat->data() + i * c;
    Real* y = out.values().data() + i * c;
    for (std::size_t j = 0; j < c; ++j) {
      xh[j] = (x[j] - mean) * inv;
      y[j] = xh[j] * gain.values()[j] + bias.values()[j];
    }
  }
  guard_finite("layer_norm", out);
  if (detail::should_record(tape,
                            {a.tracked(), gain.tracked(), bias.tracked()})) {
    out.set_tracked(true);
    tape.push("layer_norm", [a, gain, bias, out, xhat, inv_std, r,
                             c]() mutable {
      if (!out.has_grad()) return;
      const Real* dy = out.grad().data();
      for (std::size_t i = 0; i < r; ++i) {
        const Real* dyi = dy + i * c;
        const Real* xh = xhat->data() + i * c;
        if (bias.tracked()) {
          Real* db = bias.grad().data();
          for (std::size_t j = 0; j < c; ++j) db[j] += dyi[j];
        }
        if (gain.tracked()) {
          Real* dg = gain.grad().data();
          for (std::size_t j = 0; j < c; ++j) dg[j] += dyi[j] * xh[j];
        }
        if (a.tracked()) {
          // h = dy .* gain; dx = inv*(h - mean(h) - xhat*mean(h.*xhat))
          Real mean_h = Real(0), mean_hx = Real(0);
          for (std::size_t j = 0; j < c; ++j) {
            Real h = dyi[j] * gain.values()[j];
            mean_h += h;
            mean_hx += h * xh[j];
          }
          mean_h /= Real(c);
          mean_hx /= Real(c);
          Real inv = (*inv_std)[i];
          Real* dx = a.grad().data() + i * c;
          for (std::size_t j = 0; j < c; ++j) {
            Real h = dyi[j] * gain.values()[j];
            dx[j] += inv * (h - mean_h - xh[j] * mean_hx);
          }
        }
      }
    });
  }
  return out;
}

/// Exact GELU: 0.5*x*(1 + erf(x/sqrt(2))).
template <class Real>
Tensor<Real> gelu(Tensor<Real> a, Tape<Real>& tape) {
  Tensor<Real> out(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) {
    Real x = a.values()[i];
    out.values()[i] =
        Real(0.5) * x * (Real(1) + std::erf(x * Real(0.7071067811865476)));
  }
  guard_finite("gelu", out);
  if (detail::should_record(tape, {a.tracked()})) {
    out.set_tracked(true);
    tape.push("gelu", [a, out, n]() mutable {
      if (!out.has_grad()) return;
      const Real* dy = out.grad().data();
      Real* dx = a.grad().data();
      for (std::size_t i = 0; i < n; ++i) {
        Real x = a.values()[i];
        Real cdf =
            Real(0.5) * (Real(1) + std::erf(x * Real(0.7071067811865476)));
        Real pdf = Real(0.3989422804014327) * std::exp(Real(-0.5) * x * x);
        dx[i] += dy[i] * (cdf + x * pdf);
      }
    });
  }
  return out;
}

/// Elementwise sum; shapes must match exactly.
template <class Real>
Tensor<Real> add(Tensor<Real> a, Tensor<Real> b, Tape<Real>& tape) {
  detail::require_same_shape("add", a, b);
  Tensor<Real> out(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) {
    out.values()[i] = a.values()[i] + b.values()[i];
  }
  guard_finite("add", out);
  if (detail::should_record(tape, {a.tracked(), b.tracked()})) {
    out.set_tracked(true);
    tape.push("add", [a, b, out, n]() mutable {
      if (!out.has_grad()) return;
      const Real* dc = out.grad().data();
      if (a.tracked()) {
        Real* da = a.grad().data();
        for (std::size_t i = 0; i < n; ++i) da[i] += dc[i];
      }
      if (b.tracked()) {
        Real* db = b.grad().data();
        for (std::size_t i = 0; i < n; ++i) db[i] += dc[i];
      }
    });
  }
  return out;
}

/// Elementwise (Hadamard) product; shapes must match exactly.
template <class Real>
Tensor<Real> mul(Tensor<Real> a, Tensor<Real> b, Tape<Real>& tape) {
  detail::require_same_shape("mul", a, b);
  Tensor<Real> out(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) {
    out.values()[i] = a.values()[i] * b.values()[i];
  }
  guard_finite("mul", out);
  if (detail::should_record(tape, {a.tracked(), b.tracked()})) {
    out.set_tracked(true);
    tape.push("mul", [a, b, out, n]() mutable {
      if (!out.has_grad()) return;
      const Real* dc = out.grad().data();
      if (a.tracked()) {
        Real* da = a.grad().data();
        for (std::size_t i = 0; i < n; ++i) da[i] += dc[i] * b.values()[i];
      }
      if (b.tracked()) {
        Real* db = b.grad().data();
        for (std::size_t i = 0; i < n; ++i) db[i] += dc[i] * a.values()[i];
      }
    });
  }
  return out;
}

/// Scalar-times-tensor (the one sanctioned broadcast).
template <class Real>
Tensor<Real> mul_scalar(Tensor<Real> a, Real s, Tape<Real>& tape) {
  Tensor<Real> out(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * s;
  guard_finite("mul_scalar", out);
  if (detail::should_record(tape, {a.tracked()})) {
    out.set_tracked(true);
    tape.push("mul_scalar", [a, out, s, n]() mutable {
      if (!out.has_grad()) return;
      const Real* dc = out.grad().data();
      Real* da = a.grad().data();
      for (std::size_t i = 0; i < n; ++i) da[i] += dc[i] * s;
    });
  }
  return out;
}

/// Materializes a length-D vector as `rows` identical rows. Keeps binary ops
/// strict about shapes while letting linear layers carry a bias.
template <class Real>
Tensor<Real> broadcast_rows(Tensor<Real> v, std::size_t rows,
                            Tape<Real>& tape) {
  if (v.rank() != 1) {
    throw DimensionError("broadcast_rows: expected a rank-1 tensor, got " +
                         shape_str(v.shape()));
  }
  const std::size_t c = v.size();
  Tensor<Real> out(Shape{rows, c});
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy(v.values().begin(), v.values().end(),
              out.values().begin() + i * c);
  }
  guard_finite("broadcast_rows", out);
  if (detail::should_record(tape, {v.tracked()})) {
    out.set_tracked(true);
    tape.push("broadcast_rows", [v, out, rows, c]() mutable {
      if (!out.has_grad()) return;
      const Real* dc = out.grad().data();
      Real* dv = v.grad().data();
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < c; ++j) dv[j] += dc[i * c + j];
      }
    });
  }
  return out;
}

/// Mean over one axis; the axis is removed from the shape.
template <class Real>
Tensor<Real> mean_over(Tensor<Real> a, std::size_t axis, Tape<Real>& tape) {
  if (axis >= a.rank()) {
    throw DimensionError("mean_over: axis " + std::to_string(axis) +
                         " out of bounds for shape " + shape_str(a.shape()));
  }
  const Shape& s = a.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t ext = s[axis];
  Shape os;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) os.push_back(s[i]);
  }
  Tensor<Real> out(os);
  const Real scale = Real(1) / Real(ext);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < ext; ++k) {
      const Real* src = a.values().data() + (o * ext + k) * inner;
      Real* dst = out.values().data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i] * scale;
    }
  }
  guard_finite("mean_over", out);
  if (detail::should_record(tape, {a.tracked()})) {
    out.set_tracked(true);
    tape.push("mean_over", [a, out, outer, ext, inner, scale]() mutable {
      if (!out.has_grad()) return;
      const Real* dc = out.grad().data();
      Real* da = a.grad().data();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t k = 0; k < ext; ++k) {
          Real* dst = da + (o * ext + k) * inner;
          const Real* src = dc + o * inner;
          for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i] * scale;
        }
      }
    });
  }
  return out;
}

/// Full reduction to a rank-0 scalar.
template <class Real>
Tensor<Real> sum_all(Tensor<Real> a, Tape<Real>& tape) {
  Real acc = Real(0);
  for (Real v : a.values()) acc += v;
  Tensor<Real> out = Tensor<Real>::scalar(acc);
  guard_finite("sum_all", out);
  if (detail::should_record(tape, {a.tracked()})) {
    out.set_tracked(true);
    tape.push("sum_all", [a, out]() mutable {
      if (!out.has_grad()) return;
      Real g = out.grad()[0];
      Real* da = a.grad().data();
      for (std::size_t i = 0; i < a.size(); ++i) da[i] += g;
    });
  }
  return out;
}

/// Concatenation of two rank-2 tensors along axis 0 (tokens) or 1 (channels).
template <class Real>
Tensor<Real> concat_along(Tensor<Real> a, Tensor<Real> b, std::size_t axis,
                          Tape<Real>& tape) {
  detail::require_rank2("concat_along", a);
  detail::require_rank2("concat_along", b);
  if (axis > 1) {
    throw DimensionError("concat_along: axis " + std::to_string(axis) +
                         " out of bounds for rank-2 tensors");
  }
  const std::size_t other = 1 - axis;
  if (a.shape()[other] != b.shape()[other]) {
    throw DimensionError("concat_along: shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()) +
                         " disagree on axis " + std::to_string(other));
  }
  Shape os = a.shape();
  os[axis] += b.shape()[axis];
  Tensor<Real> out(os);
  const std::size_t ra = a.rows(), ca = a.cols(), cb = b.cols();
  if (axis == 0) {
    std::copy(a.values().begin(), a.values().end(), out.values().begin());
    std::copy(b.values().begin(), b.values().end(),
              out.values().begin() + a.size());
  } else {
    for (std::size_t i = 0; i < ra; ++i) {
      std::copy(a.values().begin() + i * ca, a.values().begin() + (i + 1) * ca,
                out.values().begin() + i * (ca + cb));
      std::copy(b.values().begin() + i * cb, b.values().begin() + (i + 1) * cb,
                out.values().begin() + i * (ca + cb) + ca);
    }
  }
  guard_finite("concat_along", out);
  if (detail::should_record(tape, {a.tracked(), b.tracked()})) {
    out.set_tracked(true);
    tape.push("concat_along", [a, b, out, axis, ra, ca, cb]() mutable {
      if (!out.has_grad()) return;
      const Real* dc = out.grad().data();
      if (axis == 0) {
        if (a.tracked()) {
          Real* da = a.grad().data();
          for (std::size_t i = 0; i < a.size(); ++i) da[i] += dc[i];
        }
        if (b.tracked()) {
          Real* db = b.grad().data();
          for (std::size_t i = 0; i < b.size(); ++i) db[i] += dc[a.size() + i];
        }
      } else {
        for (std::size_t i = 0; i < ra; ++i) {
          const Real* row = dc + i * (ca + cb);
          if (a.tracked()) {
            Real* da = a.grad().data() + i * ca;
            for (std::size_t j = 0; j < ca; ++j) da[j] += row[j];
          }
          if (b.tracked()) {
            Real* db = b.grad().data() + i * cb;
            for (std::size_t j = 0; j < cb; ++j) db[j] += row[ca + j];
          }
        }
      }
    });
  }
  return out;
}

/// Contiguous row range [begin, end) of a rank-2 tensor.
template <class Real>
Tensor<Real> slice_tokens(Tensor<Real> a, std::size_t begin, std::size_t end,
                          Tape<Real>& tape) {
  detail::require_rank2("slice_tokens", a);
  if (begin >= end || end > a.rows()) {
    throw DimensionError("slice_tokens: range [" + std::to_string(begin) +
                         ", " + std::to_string(end) +
                         ") invalid for shape " + shape_str(a.shape()));
  }
  const std::size_t c = a.cols(), r = end - begin;
  Tensor<Real> out(Shape{r, c});
  std::copy(a.values().begin() + begin * c, a.values().begin() + end * c,
            out.values().begin());
  guard_finite("slice_tokens", out);
  if (detail::should_record(tape, {a.tracked()})) {
    out.set_tracked(true);
    tape.push("slice_tokens", [a, out, begin, r, c]() mutable {
      if (!out.has_grad()) return;
      const Real* dc = out.grad().data();
      Real* da = a.grad().data() + begin * c;
      for (std::size_t i = 0; i < r * c; ++i) da[i] += dc[i];
    });
  }
  return out;
}

/// Contiguous column range [begin, end) of a rank-2 tensor. Used to split
/// token matrices into per-head channels.
template <class Real>
Tensor<Real> slice_channels(Tensor<Real> a, std::size_t begin,
                            std::size_t end, Tape<Real>& tape) {
  detail::require_rank2("slice_channels", a);
  if (begin >= end || end > a.cols()) {
    throw DimensionError("slice_channels: range [" + std::to_string(begin) +
                         ", " + std::to_string(end) +
                         ") invalid for shape " + shape_str(a.shape()));
  }
  const std::size_t r = a.rows(), ca = a.cols(), c = end - begin;
  Tensor<Real> out(Shape{r, c});
  for (std::size_t i = 0; i < r; ++i) {
    std::copy(a.values().begin() + i * ca + begin,
              a.values().begin() + i * ca + end,
              out.values().begin() + i * c);
  }
  guard_finite("slice_channels", out);
  if (detail::should_record(tape, {a.tracked()})) {
    out.set_tracked(true);
    tape.push("slice_channels", [a, out, begin, r, ca, c]() mutable {
      if (!out.has_grad()) return;
      const Real* dc = out.grad().data();
      Real* da = a.grad().data();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          da[i * ca + begin + j] += dc[i * c + j];
        }
      }
    });
  }
  return out;
}

/// Transpose of a rank-2 tensor.
template <class Real>
Tensor<Real> transpose_last2(Tensor<Real> a, Tape<Real>& tape) {
  detail::require_rank2("transpose_last2", a);
  const std::size_t r = a.rows(), c = a.cols();
  Tensor<Real> out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      out.values()[j * r + i] = a.values()[i * c + j];
    }
  }
  guard_finite("transpose_last2", out);
  if (detail::should_record(tape, {a.tracked()})) {
    out.set_tracked(true);
    tape.push("transpose_last2", [a, out, r, c]() mutable {
      if (!out.has_grad()) return;
      const Real* dc = out.grad().data();
      Real* da = a.grad().data();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) da[i * c + j] += dc[j * r + i];
      }
    });
  }
  return out;
}

/// Row router: output row i is a byte-for-byte copy of a's row when bits[i]
/// is set, of b's row otherwise. Gradients flow only to the selected row.
template <class Real>
Tensor<Real> select_rows(Tensor<Real> a, Tensor<Real> b,
                         const std::vector<std::uint8_t>& bits,
                         Tape<Real>& tape) {
  detail::require_rank2("select_rows", a);
  detail::require_same_shape("select_rows", a, b);
  if (bits.size() != a.rows()) {
    throw DimensionError("select_rows: mask length " +
                         std::to_string(bits.size()) + " does not match " +
                         std::to_string(a.rows()) + " rows");
  }
  const std::size_t r = a.rows(), c = a.cols();
  Tensor<Real> out(Shape{r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const auto& src = bits[i] ? a.values() : b.values();
    std::copy(src.begin() + i * c, src.begin() + (i + 1) * c,
              out.values().begin() + i * c);
  }
  guard_finite("select_rows", out);
  if (detail::should_record(tape, {a.tracked(), b.tracked()})) {
    out.set_tracked(true);
    auto mask = std::make_shared<std::vector<std::uint8_t>>(bits);
    tape.push("select_rows", [a, b, out, mask, r, c]() mutable {
      if (!out.has_grad()) return;
      const Real* dc = out.grad().data();
      for (std::size_t i = 0; i < r; ++i) {
        Tensor<Real>& dst = (*mask)[i] ? a : b;
        if (!dst.tracked()) continue;
        Real* d = dst.grad().data() + i * c;
        for (std::size_t j = 0; j < c; ++j) d[j] += dc[i * c + j];
      }
    });
  }
  return out;
}

/// Mean binary cross-entropy over a [Bx1] logit column, computed in log space:
/// max(l,0) - l*y + log1p(exp(-|l|)). Targets must be exactly 0 or 1.
template <class Real>
Tensor<Real> bce_with_logits(Tensor<Real> logits, Tensor<Real> targets,
                             Tape<Real>& tape) {
  detail::require_rank2("bce_with_logits", logits);
  if (logits.cols() != 1) {
    throw DimensionError("bce_with_logits: expected a Bx1 logit column, got " +
                         shape_str(logits.shape()));
  }
  detail::require_same_shape("bce_with_logits", logits, targets);
  const std::size_t n = logits.rows();
  for (Real y : targets.values()) {
    if (y != Real(0) && y != Real(1)) {
      throw ValidationError("bce_with_logits: targets must be in {0,1}");
    }
  }
  Real acc = Real(0);
  for (std::size_t i = 0; i < n; ++i) {
    Real l = logits.values()[i];
    Real y = targets.values()[i];
    acc += std::max(l, Real(0)) - l * y + std::log1p(std::exp(-std::abs(l)));
  }
  Tensor<Real> out = Tensor<Real>::scalar(acc / Real(n));
  guard_finite("bce_with_logits", out);
  if (detail::should_record(tape, {logits.tracked()})) {
    out.set_tracked(true);
    tape.push("bce_with_logits", [logits, targets, out, n]() mutable {
      if (!out.has_grad()) return;
      Real g = out.grad()[0] / Real(n);
      Real* dl = logits.grad().data();
      for (std::size_t i = 0; i < n; ++i) {
        Real s = detail::sigmoid_stable(logits.values()[i]);
        dl[i] += g * (s - targets.values()[i]);
      }
    });
  }
  return out;
}

}  // namespace rtf
