// Copyright 2026 The SecAgg Lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "secagg_lab/nn.hpp"
#include "secagg_lab/rng.hpp"

namespace secagg_lab::attacks {

enum class GradientDistance { Euclidean, Cosine };
enum class InversionInit { Zeros, Gaussian, Explicit };
enum class InversionOptimizer { GradientDescent, Adam };

struct InversionConfig {
  GradientDistance distance = GradientDistance::Euclidean;
  double alpha = 0.0;  // weight of ||x||^2
  std::size_t steps = 5000;
  double learning_rate = 0.05;
  InversionOptimizer optimizer = InversionOptimizer::Adam;
  InversionInit init = InversionInit::Gaussian;
  double init_scale = 1.0;
  std::optional<Tensor> init_input;  // used with InversionInit::Explicit
  double fd_step = 1e-5;
  /// Stop once the gradient distance falls below this value.
  double tolerance = 1e-14;
  std::uint64_t seed = 1;
  nn::LossKind loss = nn::LossKind::CrossEntropy;

  void validate() const {
    if (steps < 1) throw ArgumentError("inversion: steps must be >= 1");
    if (alpha < 0.0) throw ArgumentError("inversion: alpha must be non-negative");
    if (!(learning_rate > 0.0) || !(fd_step > 0.0)) throw ArgumentError("inversion: step sizes must be positive");
    if (init == InversionInit::Explicit && !init_input) throw ArgumentError("inversion: explicit init needs an input");
  }
};

struct InversionResult {
  Tensor input;  // best candidate, 1 x d
  double distance = 0.0;
  double initial_distance = 0.0;
  std::size_t steps = 0;
  /// Target gradient carries no signal (all zero); nothing was reconstructed.
  bool degenerate = false;
  std::optional<std::string> failure;
};

inline double gradient_distance(const std::vector<double>& a, const std::vector<double>& b, GradientDistance d) {
  if (a.size() != b.size()) throw DimensionError("gradient_distance: length mismatch");
  if (d == GradientDistance::Euclidean) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - dot / std::sqrt(na * nb);
}

/// Gradient matching for one example with known label: minimises
/// d(grad(x), target) + alpha * ||x||^2 over x, differentiating the objective
/// with central finite differences in x.
inline InversionResult invert_gradient(const nn::Gradient& target_grad, const nn::ParamSet& params,
                                       const nn::Architecture& arch, const Tensor& label, const InversionConfig& cfg) {
  cfg.validate();
  nn::require_params_match(arch, params);
  params.require_congruent(target_grad, "invert_gradient");
  const std::size_t dim = arch.input_dim();
  if (label.rank() != 2 || label.rows() != 1 || label.cols() != arch.output_dim()) {
    throw DimensionError("invert_gradient: label must be 1 x " + std::to_string(arch.output_dim()));
  }
  const auto target = target_grad.flatten();

  InversionResult res;
  res.input = Tensor({1, dim});
  if (std::all_of(target.begin(), target.end(), [](double v) { return v == 0.0; })) {
    res.degenerate = true;
    res.failure = "target gradient is identically zero";
    res.distance = std::numeric_limits<double>::quiet_NaN();
    return res;
  }

  Tensor x({1, dim});
  if (cfg.init == InversionInit::Gaussian) {
    Rng rng = make_rng(cfg.seed, 0x1F);
    x = gaussian_tensor(rng, {1, dim}, cfg.init_scale);
  } else if (cfg.init == InversionInit::Explicit) {
    if (cfg.init_input->shape() != Shape{1, dim}) throw DimensionError("invert_gradient: init input shape");
    x = *cfg.init_input;
  }

  auto match = [&](const Tensor& cand) {
    const auto g = nn::backward(arch, params, nn::Batch{cand, label}, cfg.loss).grad.flatten();
    return gradient_distance(g, target, cfg.distance);
  };
  auto objective = [&](const Tensor& cand) {
    double reg = 0.0;
    for (double v : cand.storage()) reg += v * v;
    return match(cand) + cfg.alpha * reg;
  };

  res.initial_distance = match(x);
  res.input = x;
  res.distance = res.initial_distance;
  std::vector<double> m(dim, 0.0), v(dim, 0.0), grad(dim);
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-12;

  for (std::size_t step = 0; step < cfg.steps && res.distance > cfg.tolerance; ++step) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double keep = x[j];
      x[j] = keep + cfg.fd_step;
      const double up = objective(x);
      x[j] = keep - cfg.fd_step;
      const double down = objective(x);
      x[j] = keep;
      grad[j] = (up - down) / (2.0 * cfg.fd_step);
    }
    if (cfg.optimizer == InversionOptimizer::Adam) {
      const double t = static_cast<double>(step + 1);
      for (std::size_t j = 0; j < dim; ++j) {
        m[j] = b1 * m[j] + (1 - b1) * grad[j];
        v[j] = b2 * v[j] + (1 - b2) * grad[j] * grad[j];
        const double mh = m[j] / (1 - std::pow(b1, t)), vh = v[j] / (1 - std::pow(b2, t));
        x[j] -= cfg.learning_rate * mh / (std::sqrt(vh) + eps);
      }
    } else {
      for (std::size_t j = 0; j < dim; ++j) x[j] -= cfg.learning_rate * grad[j];
    }
    const double d = match(x);
    res.steps = step + 1;
    if (!std::isfinite(d) || !x.all_finite()) {
      res.failure = "non-finite objective at step " + std::to_string(step + 1);
      break;
    }
    if (d < res.distance) {
      res.distance = d;
      res.input = x;
    }
  }
  return res;
}

}  // namespace secagg_lab::attacks
