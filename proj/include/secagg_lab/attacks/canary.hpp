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
#include <optional>
#include <string>
#include <vector>

#include "secagg_lab/data.hpp"
#include "secagg_lab/nn.hpp"
#include "secagg_lab/rng.hpp"
#include "secagg_lab/secure_agg.hpp"

namespace secagg_lab::attacks {

/// One LayerNorm channel: the scalars (gamma_c, beta_c).
struct CanaryAddress {
  std::size_t layer = 0;
  std::size_t channel = 0;

  nn::ParamAddress gamma() const { return {layer, 0, channel}; }
  nn::ParamAddress beta() const { return {layer, 1, channel}; }
};

/// Checks that `xi` names a LayerNorm channel whose output feeds a ReLU.
inline void require_canary_site(const nn::Architecture& arch, const CanaryAddress& xi) {
  if (xi.layer >= arch.size() || !nn::is_layer_norm(arch[xi.layer])) {
    throw ArgumentError("canary address: layer " + std::to_string(xi.layer) + " is not a LayerNorm");
  }
  const auto& ln = std::get<nn::LayerNormSpec>(arch[xi.layer]);
  if (xi.channel >= ln.dim) {
    throw ArgumentError("canary address: channel " + std::to_string(xi.channel) + " out of range");
  }
  if (xi.layer + 1 >= arch.size() || !nn::is_activation(arch[xi.layer + 1], nn::ActivationFn::ReLU)) {
    throw ArgumentError("canary address: LayerNorm at layer " + std::to_string(xi.layer) + " does not feed a ReLU");
  }
}

struct CanaryTrainer {
  double learning_rate = 0.05;
  std::size_t max_steps = 20000;
  std::size_t batch_size = 32;
  /// x_t replaces one row of every `inject_every`-th batch.
  std::size_t inject_every = 2;
  /// The balanced loss is evaluated over the shadow set every `check_every` steps.
  std::size_t check_every = 50;
  std::uint64_t seed = 1;
};

struct CanarySpec {
  CanaryAddress xi;
  Tensor target;  // 1 x d
  double alpha_pos = 32.0;
  double alpha_neg = 1.0;
  double stop_loss = 0.01;
  CanaryTrainer trainer;
};

struct CanaryInjection {
  nn::ParamSet params;
  bool converged = false;
  std::size_t steps = 0;
  /// alpha_pos*(l(x_t)-1)^2 + alpha_neg*mean((l(x)+1)^2) over the shadow set.
  double final_loss = 0.0;
  double target_response = 0.0;
  std::optional<std::string> failure;
};

/// Pre-activation l_xi = gamma_c * xbar_c + beta_c for every row.
inline std::vector<double> canary_response(const nn::Architecture& arch, const nn::ParamSet& params,
                                           const CanaryAddress& xi, const Tensor& inputs) {
  require_canary_site(arch, xi);
  const auto cache = nn::forward(arch, params, inputs);
  const Tensor& out = cache.output_of(xi.layer);
  std::vector<double> r(out.rows());
  for (std::size_t i = 0; i < out.rows(); ++i) r[i] = out.at(i, xi.channel);
  return r;
}

namespace detail {

inline double balanced_canary_loss(const std::vector<double>& shadow_response, double target_response,
                                   const CanarySpec& c) {
  double neg = 0.0;
  for (double l : shadow_response) neg += (l + 1.0) * (l + 1.0);
  neg /= static_cast<double>(shadow_response.size());
  return c.alpha_pos * (target_response - 1.0) * (target_response - 1.0) + c.alpha_neg * neg;
}

}  // namespace detail

/// Trains every parameter before the canary LayerNorm plus (gamma_c, beta_c) so
/// that l_xi is positive on x_t and negative on the shadow set. Layers after the
/// LayerNorm and its other channels are left untouched.
inline CanaryInjection inject_canary(const nn::ParamSet& base, const nn::Architecture& arch, const CanarySpec& c,
                                     const data::Dataset& shadow) {
  require_canary_site(arch, c.xi);
  nn::require_params_match(arch, base);
  if (c.target.rank() != 2 || c.target.rows() != 1 || c.target.cols() != arch.input_dim()) {
    throw DimensionError("inject_canary: target must be 1 x " + std::to_string(arch.input_dim()));
  }
  if (shadow.size() < 2 || shadow.dims() != arch.input_dim()) {
    throw ArgumentError("inject_canary: shadow set must hold at least two rows of the input width");
  }
  for (std::size_t i = 0; i < shadow.size(); ++i) {
    auto r = shadow.inputs.row(i);
    if (std::equal(r.begin(), r.end(), c.target.storage().begin())) {
      throw ArgumentError("inject_canary: target example appears in the shadow set");
    }
  }
  const auto& tr = c.trainer;
  if (tr.batch_size < 2 || tr.inject_every < 1 || tr.check_every < 1 || !(tr.learning_rate > 0.0)) {
    throw ArgumentError("inject_canary: invalid trainer settings");
  }

  CanaryInjection res{base, false, 0, 0.0, 0.0, std::nullopt};
  nn::ParamSet& p = res.params;
  Rng rng = make_rng(tr.seed, 0xCA);
  const std::size_t n = std::min(tr.batch_size, shadow.size());
  const std::size_t d = arch.input_dim();
  const std::size_t ch = c.xi.channel;

  auto evaluate = [&] {
    res.target_response = canary_response(arch, p, c.xi, c.target).front();
    res.final_loss = detail::balanced_canary_loss(canary_response(arch, p, c.xi, shadow.inputs), res.target_response, c);
    return res.final_loss;
  };

  for (std::size_t step = 0;; ++step) {
    if (step % tr.check_every == 0 && evaluate() < c.stop_loss && res.target_response > 0.0) {
      res.converged = true;
      res.steps = step;
      break;
    }
    if (step == tr.max_steps) {
      res.steps = step;
      break;
    }
    const auto rows = sample_without_replacement(rng, shadow.size(), n);
    Tensor x({n, d});
    for (std::size_t i = 0; i < n; ++i) {
      auto src = shadow.inputs.row(rows[i]);
      std::copy(src.begin(), src.end(), x.row(i).begin());
    }
    std::optional<std::size_t> pos_row;
    if (step % tr.inject_every == 0) {
      pos_row = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
      std::copy(c.target.storage().begin(), c.target.storage().end(), x.row(*pos_row).begin());
    }
    const auto cache = nn::forward(arch, p, x);
    const Tensor& out = cache.output_of(c.xi.layer);
    Tensor seed(out.shape());
    for (std::size_t i = 0; i < n; ++i) {
      const bool positive = pos_row && *pos_row == i;
      const double goal = positive ? 1.0 : -1.0;
      const double alpha = positive ? c.alpha_pos : c.alpha_neg;
      seed.at(i, ch) = 2.0 * alpha * (out.at(i, ch) - goal) / static_cast<double>(n);
    }
    const nn::Gradient g = nn::backpropagate(arch, p, cache, c.xi.layer, seed);
    for (std::size_t l = 0; l < c.xi.layer; ++l)
      for (std::size_t t = 0; t < p.layer(l).size(); ++t) {
        Tensor& w = p.tensor(l, t);
        const Tensor& gw = g.tensor(l, t);
        for (std::size_t e = 0; e < w.size(); ++e) w[e] -= tr.learning_rate * gw[e];
      }
    p.at(c.xi.gamma()) -= tr.learning_rate * g.at(c.xi.gamma());
    p.at(c.xi.beta()) -= tr.learning_rate * g.at(c.xi.beta());
  }
  if (!p.all_finite()) {
    res.converged = false;
    res.failure = "canary training diverged";
  } else if (!res.converged) {
    res.failure = "canary loss " + std::to_string(res.final_loss) + " above stop_loss after " +
                  std::to_string(res.steps) + " steps";
  }
  return res;
}

/// gamma_c = beta_c = 0: the ReLU after the channel sees exact zeros, so both
/// scalars get exactly zero gradient for any input.
inline nn::ParamSet suppress_at(const nn::ParamSet& base, const CanaryAddress& xi) {
  nn::ParamSet out = base;
  if (xi.layer >= out.num_layers() || out.layer(xi.layer).size() != 2 || out.tensor(xi.layer, 0).rank() != 1 ||
      xi.channel >= out.tensor(xi.layer, 0).size()) {
    throw ArgumentError("suppress_at: address does not name a LayerNorm channel");
  }
  out.at(xi.gamma()) = 0.0;
  out.at(xi.beta()) = 0.0;
  return out;
}

inline double detection_threshold(const sa::RingConfig& ring) { return 2.0 * ring.step(); }

/// True iff either scalar at xi exceeds the quantization floor.
inline bool detect_canary(const nn::ParamSet& aggregate, const CanaryAddress& xi, double threshold) {
  return std::fabs(aggregate.at(xi.gamma())) > threshold || std::fabs(aggregate.at(xi.beta())) > threshold;
}

inline bool detect_canary(const nn::ParamSet& aggregate, const CanaryAddress& xi,
                          const sa::RingConfig& ring = {}) {
  return detect_canary(aggregate, xi, detection_threshold(ring));
}

/// What the server reads at xi after secure aggregation when every non-target
/// contributes exact zeros there: the target's value, fixed-point rounded.
inline double through_ring(double x, const sa::RingConfig& ring) {
  return sa::decode_scalar(sa::encode_scalar(x, ring), ring);
}

// ---------------------------------------------------------------------------
// Membership evaluation over batch sweeps

struct CanaryCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  double accuracy() const { return total() ? static_cast<double>(tp + tn) / static_cast<double>(total()) : 0.0; }
  double precision() const { return tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 1.0; }
  double recall() const { return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 1.0; }

  CanaryCounts& operator+=(const CanaryCounts& o) {
    tp += o.tp, fp += o.fp, tn += o.tn, fn += o.fn;
    return *this;
  }
};

/// Sweeps `pool` in contiguous batches of `batch_size` on the target model:
/// each clean batch must not fire; the same batch with its first row replaced
/// by x_t must fire. Detection is read through the fixed-point ring.
inline CanaryCounts evaluate_canary(const nn::Architecture& arch, const nn::ParamSet& target_params,
                                    const CanaryAddress& xi, const Tensor& x_t, std::size_t x_t_class,
                                    const data::Dataset& pool, std::size_t batch_size, nn::LossKind loss,
                                    const sa::RingConfig& ring = {}) {
  if (batch_size < 1 || pool.size() < batch_size) throw ArgumentError("evaluate_canary: pool smaller than batch");
  CanaryCounts counts;
  const double thr = detection_threshold(ring);
  auto fires = [&](const nn::Batch& b) {
    const auto g = nn::backward(arch, target_params, b, loss).grad;
    return std::fabs(through_ring(g.at(xi.gamma()), ring)) > thr || std::fabs(through_ring(g.at(xi.beta()), ring)) > thr;
  };
  std::vector<std::size_t> rows(batch_size);
  for (std::size_t start = 0; start + batch_size <= pool.size(); start += batch_size) {
    std::iota(rows.begin(), rows.end(), start);
    nn::Batch b = pool.batch(rows);
    if (fires(b)) ++counts.fp;
    else ++counts.tn;
    std::copy(x_t.storage().begin(), x_t.storage().end(), b.inputs.row(0).begin());
    for (double& v : b.labels.row(0)) v = 0.0;
    b.labels.at(0, x_t_class) = 1.0;
    if (fires(b)) ++counts.tp;
    else ++counts.fn;
  }
  return counts;
}

}  // namespace secagg_lab::attacks
