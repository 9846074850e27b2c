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
#include <vector>

#include "rtf/errors.hpp"
#include "rtf/tensor.hpp"

namespace rtf {

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (lr <= 0.0) throw ConfigError("adamw: lr must be positive");
    if (weight_decay < 0.0) {
      throw ConfigError("adamw: weight_decay must be non-negative");
    }
    if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0) {
      throw ConfigError("adamw: betas must lie in (0,1)");
    }
  }
};

/// AdamW: first/second-moment estimates with bias correction, and the decay
/// applied directly to the weights rather than through the gradient. A
/// parameter with no gradient buffer this step is treated as zero-gradient
/// (it still decays).
template <class Real>
class AdamW {
 public:
  AdamW(std::vector<Tensor<Real>*> params, AdamWConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    state_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      state_[i].m.assign(params_[i]->size(), Real(0));
      state_[i].v.assign(params_[i]->size(), Real(0));
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      Tensor<Real>& p = *params_[pi];
      auto& st = state_[pi];
      const bool has_grad = p.has_grad();
      const Real* g = has_grad ? p.grad().data() : nullptr;
      Real* w = p.values().data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = has_grad ? double(g[i]) : 0.0;
        st.m[i] = Real(cfg_.beta1 * double(st.m[i]) + (1.0 - cfg_.beta1) * gi);
        st.v[i] =
            Real(cfg_.beta2 * double(st.v[i]) + (1.0 - cfg_.beta2) * gi * gi);
        const double mhat = double(st.m[i]) / bc1;
        const double vhat = double(st.v[i]) / bc2;
        double wi = double(w[i]);
        wi -= cfg_.lr * cfg_.weight_decay * wi;  // decoupled decay
        wi -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        if (!std::isfinite(wi)) {
          throw NumericError("adamw: non-finite parameter update");
        }
        w[i] = Real(wi);
      }
    }
  }

  std::size_t steps_taken() const { return t_; }

 private:
  struct State {
    std::vector<Real> m, v;
  };
  std::vector<Tensor<Real>*> params_;
  AdamWConfig cfg_;
  std::vector<State> state_;
  std::size_t t_ = 0;
};

}  // namespace rtf
