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

#include "rtf/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "rtf/model.hpp"
#include "rtf/ops.hpp"
#include "rtf/rng.hpp"

namespace rtf {

namespace {

using T = Tensor<double>;
using Tp = Tape<double>;

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

T random_tensor(Shape shape, Rng& rng, bool tracked = true) {
  T t(std::move(shape), 0.0, tracked);
  for (auto& v : t.values()) v = rng.uniform01() * 4.0 - 2.0;
  return t;
}

double eval(const std::function<T(Tp&)>& build) {
  Tp tape;
  tape.set_recording(false);
  return build(tape).item();
}

}  // namespace

double finite_difference_check(
    std::vector<Tensor<double>*> inputs,
    const std::function<Tensor<double>(Tape<double>&)>& build) {
  // Analytic pass.
  Tp tape;
  T loss = build(tape);
  backward(loss, tape);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto* in : inputs) {
    analytic.push_back(in->has_grad() ? in->grad()
                                      : std::vector<double>(in->size(), 0.0));
  }

  double worst = 0.0;
  const double h = kGradCheckStep;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    T& x = *inputs[ti];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double orig = x.values()[i];
      x.values()[i] = orig + h;
      const double fp = eval(build);
      x.values()[i] = orig - h;
      const double fm = eval(build);
      x.values()[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      worst = std::max(worst, rel_err(analytic[ti][i], numeric));
    }
  }
  return worst;
}

namespace {

// Scalar objective sum(y .* w) with fixed random weights, so symmetric
// outputs cannot hide sign errors in a backward rule.
T weighted(const T& y, const T& w, Tp& tape) {
  return sum_all(mul(y, w, tape), tape);
}

struct Suite {
  Rng seeds;
  bool inject_fault;
  std::vector<GradCheckEntry> entries;

  explicit Suite(std::uint64_t seed, bool fault)
      : seeds(seed), inject_fault(fault) {}

  void run(const std::string& name,
           const std::function<double(Rng&)>& one_seed, int n_seeds = 10) {
    double worst = 0.0;
    for (int s = 0; s < n_seeds; ++s) {
      Rng rng(Rng::derive(seeds.next_u64(), name));
      worst = std::max(worst, one_seed(rng));
    }
    if (inject_fault && name == "gelu") {
      // Negative-control fixture: pretend the backward rule is off by 1%.
      worst = std::max(worst, 1e-2);
    }
    entries.push_back({name, worst, worst < kGradCheckTol});
  }
};

double check_model_two_branch(Rng& rng) {
  ModelConfig cfg;
  cfg.image_size = 16;
  cfg.patch_size = 8;
  cfg.channels = 1;
  cfg.dim = 16;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.mlp_ratio = 2.0;
  cfg.local_fraction = 0.5;
  MultiViewModel<double> model(cfg, FusionKind::Concat, /*rtf=*/true);
  Rng init(rng.next_u64());
  model.init_params(init);
  model.set_capture_attention(false);

  Image x1(16, 16, 1), x2(16, 16, 1);
  for (auto& p : x1.pixels) p = float(rng.uniform01());
  for (auto& p : x2.pixels) p = float(rng.uniform01());
  Image y1(16, 16, 1), y2(16, 16, 1);
  for (auto& p : y1.pixels) p = float(rng.uniform01());
  for (auto& p : y2.pixels) p = float(rng.uniform01());
  const std::vector<const Image*> v1 = {&x1, &y1};
  const std::vector<const Image*> v2 = {&x2, &y2};
  const std::vector<int> labels = {1, 0};
  const std::uint64_t mask_seed = rng.next_u64();

  // Analytic gradients once.
  model.zero_grads();
  {
    Rng mask_rng(mask_seed);
    auto out = model.forward_train(v1, v2, mask_rng);
    T loss = combined_loss(out, labels);
    backward(loss, *out.tape);
  }
  auto named = model.named_params();
  std::vector<std::vector<double>> analytic;
  for (auto& [name, t] : named) {
    analytic.push_back(t->has_grad() ? t->grad()
                                     : std::vector<double>(t->size(), 0.0));
  }

  // The mask stream restarts from the same seed on every evaluation, so all
  // finite-difference probes see the masks the analytic pass saw.
  auto eval_loss = [&]() {
    Rng mask_rng(mask_seed);
    auto out = model.forward_train(v1, v2, mask_rng);
    return combined_loss(out, labels).item();
  };

  double worst = 0.0;
  const double h = kGradCheckStep;
  Rng pick(rng.next_u64());
  for (std::size_t ti = 0; ti < named.size(); ++ti) {
    T& t = *named[ti].second;
    const std::size_t n_probe = std::min<std::size_t>(4, t.size());
    for (std::size_t k = 0; k < n_probe; ++k) {
      const std::size_t i = pick.below(t.size());
      const double orig = t.values()[i];
      t.values()[i] = orig + h;
      const double fp = eval_loss();
      t.values()[i] = orig - h;
      const double fm = eval_loss();
      t.values()[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      worst = std::max(worst, rel_err(analytic[ti][i], numeric));
    }
  }
  return worst;
}

}  // namespace

GradCheckReport run_gradcheck(std::uint64_t seed, bool inject_fault) {
  const auto t0 = std::chrono::steady_clock::now();
  Suite suite(seed, inject_fault);

  suite.run("matmul", [](Rng& rng) {
    T a = random_tensor({3, 4}, rng);
    T b = random_tensor({4, 2}, rng);
    T w = random_tensor({3, 2}, rng, false);
    return finite_difference_check({&a, &b}, [&](Tp& t) {
      return weighted(matmul(a, b, t), w, t);
    });
  });

  suite.run("softmax_rows", [](Rng& rng) {
    T a = random_tensor({3, 5}, rng);
    T w = random_tensor({3, 5}, rng, false);
    return finite_difference_check({&a}, [&](Tp& t) {
      return weighted(softmax_rows(a, t), w, t);
    });
  });

  suite.run("layer_norm", [](Rng& rng) {
    T a = random_tensor({4, 6}, rng);
    T gain = random_tensor({6}, rng);
    T bias = random_tensor({6}, rng);
    T w = random_tensor({4, 6}, rng, false);
    return finite_difference_check({&a, &gain, &bias}, [&](Tp& t) {
      return weighted(layer_norm(a, gain, bias, 1e-5, t), w, t);
    });
  });

  suite.run("gelu", [](Rng& rng) {
    T a = random_tensor({3, 4}, rng);
    T w = random_tensor({3, 4}, rng, false);
    return finite_difference_check(
        {&a}, [&](Tp& t) { return weighted(gelu(a, t), w, t); });
  });

  suite.run("add", [](Rng& rng) {
    T a = random_tensor({3, 4}, rng);
    T b = random_tensor({3, 4}, rng);
    T w = random_tensor({3, 4}, rng, false);
    return finite_difference_check(
        {&a, &b}, [&](Tp& t) { return weighted(add(a, b, t), w, t); });
  });

  suite.run("mul", [](Rng& rng) {
    T a = random_tensor({3, 4}, rng);
    T b = random_tensor({3, 4}, rng);
    T w = random_tensor({3, 4}, rng, false);
    return finite_difference_check(
        {&a, &b}, [&](Tp& t) { return weighted(mul(a, b, t), w, t); });
  });

  suite.run("mul_scalar", [](Rng& rng) {
    T a = random_tensor({3, 4}, rng);
    T w = random_tensor({3, 4}, rng, false);
    return finite_difference_check({&a}, [&](Tp& t) {
      return weighted(mul_scalar(a, 1.7, t), w, t);
    });
  });

  suite.run("broadcast_rows", [](Rng& rng) {
    T v = random_tensor({5}, rng);
    T w = random_tensor({4, 5}, rng, false);
    return finite_difference_check({&v}, [&](Tp& t) {
      return weighted(broadcast_rows(v, 4, t), w, t);
    });
  });

  suite.run("mean_over", [](Rng& rng) {
    T a = random_tensor({3, 4}, rng);
    T w0 = random_tensor({4}, rng, false);
    T w1 = random_tensor({3}, rng, false);
    double e0 = finite_difference_check({&a}, [&](Tp& t) {
      return weighted(mean_over(a, 0, t), w0, t);
    });
    double e1 = finite_difference_check({&a}, [&](Tp& t) {
      return weighted(mean_over(a, 1, t), w1, t);
    });
    return std::max(e0, e1);
  });

  suite.run("sum_all", [](Rng& rng) {
    T a = random_tensor({3, 4}, rng);
    return finite_difference_check(
        {&a}, [&](Tp& t) { return sum_all(a, t); });
  });

  suite.run("concat_along", [](Rng& rng) {
    T a = random_tensor({3, 4}, rng);
    T b = random_tensor({2, 4}, rng);
    T c = random_tensor({3, 2}, rng);
    T w0 = random_tensor({5, 4}, rng, false);
    T w1 = random_tensor({3, 6}, rng, false);
    double e0 = finite_difference_check({&a, &b}, [&](Tp& t) {
      return weighted(concat_along(a, b, 0, t), w0, t);
    });
    double e1 = finite_difference_check({&a, &c}, [&](Tp& t) {
      return weighted(concat_along(a, c, 1, t), w1, t);
    });
    return std::max(e0, e1);
  });

  suite.run("slice_tokens", [](Rng& rng) {
    T a = random_tensor({5, 4}, rng);
    T w = random_tensor({3, 4}, rng, false);
    return finite_difference_check({&a}, [&](Tp& t) {
      return weighted(slice_tokens(a, 1, 4, t), w, t);
    });
  });

  suite.run("slice_channels", [](Rng& rng) {
    T a = random_tensor({4, 6}, rng);
    T w = random_tensor({4, 3}, rng, false);
    return finite_difference_check({&a}, [&](Tp& t) {
      return weighted(slice_channels(a, 2, 5, t), w, t);
    });
  });

  suite.run("transpose_last2", [](Rng& rng) {
    T a = random_tensor({3, 4}, rng);
    T w = random_tensor({4, 3}, rng, false);
    return finite_difference_check({&a}, [&](Tp& t) {
      return weighted(transpose_last2(a, t), w, t);
    });
  });

  suite.run("select_rows", [](Rng& rng) {
    T a = random_tensor({4, 3}, rng);
    T b = random_tensor({4, 3}, rng);
    T w = random_tensor({4, 3}, rng, false);
    std::vector<std::uint8_t> bits = {1, 0, 0, 1};
    return finite_difference_check({&a, &b}, [&](Tp& t) {
      return weighted(select_rows(a, b, bits, t), w, t);
    });
  });

  suite.run("bce_with_logits", [](Rng& rng) {
    T logits = random_tensor({5, 1}, rng);
    std::vector<double> yv = {1, 0, 1, 1, 0};
    T targets = T::from_values({5, 1}, yv);
    return finite_difference_check({&logits}, [&](Tp& t) {
      return bce_with_logits(logits, targets, t);
    });
  });

  suite.run("model.two_branch", check_model_two_branch, /*n_seeds=*/1);

  GradCheckReport report;
  report.entries = std::move(suite.entries);
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return report;
}

}  // namespace rtf
