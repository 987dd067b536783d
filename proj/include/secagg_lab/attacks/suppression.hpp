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
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "secagg_lab/nn.hpp"
#include "secagg_lab/round.hpp"

namespace secagg_lab::attacks {

/// Strategy does not fit the architecture.
class InapplicableStrategy : public Error {
 public:
  using Error::Error;
};

enum class SuppressionVariant { ZeroKernelNegBias, NegativeKernel, LargeNegativeBias, NormZero, TerminalKill };

inline const char* to_string(SuppressionVariant v) {
  switch (v) {
    case SuppressionVariant::ZeroKernelNegBias: return "zero_kernel_neg_bias";
    case SuppressionVariant::NegativeKernel: return "negative_kernel";
    case SuppressionVariant::LargeNegativeBias: return "large_negative_bias";
    case SuppressionVariant::NormZero: return "norm_zero";
    case SuppressionVariant::TerminalKill: return "terminal_kill";
  }
  return "?";
}

inline SuppressionVariant suppression_variant_from_string(const std::string& s) {
  for (auto v : {SuppressionVariant::ZeroKernelNegBias, SuppressionVariant::NegativeKernel,
                 SuppressionVariant::LargeNegativeBias, SuppressionVariant::NormZero, SuppressionVariant::TerminalKill})
    if (s == to_string(v)) return v;
  throw ArgumentError("unknown suppression strategy '" + s + "'");
}

struct SuppressionStrategy {
  SuppressionVariant variant = SuppressionVariant::ZeroKernelNegBias;
  /// Magnitude of the negative biases planted in killed ReLU units.
  double bias_magnitude = 1.0;
  /// Known bound on |input| (LargeNegativeBias).
  double input_bound = 10.0;
  /// LayerNorm to zero (NormZero); defaults to the first LayerNorm feeding a ReLU.
  std::optional<std::size_t> norm_layer;
};

/// Dead parameters plus the flat mask of scalars whose gradient they suppress.
/// Uncovered scalars (the terminal bias when it cannot be killed) are excluded from recovery.
struct Forgery {
  nn::ParamSet params;
  std::vector<bool> covered;

  std::size_t covered_count() const { return static_cast<std::size_t>(std::count(covered.begin(), covered.end(), true)); }
};

namespace detail {

/// A Dense layer followed by the non-Dense layers up to the next Dense.
struct Block {
  std::size_t dense = 0;
  std::vector<std::size_t> norms;
  std::optional<nn::ActivationFn> activation;
  std::optional<std::size_t> activation_layer;
};

inline std::vector<Block> blocks_of(const nn::Architecture& arch) {
  std::vector<Block> blocks;
  for (std::size_t l = 0; l < arch.size(); ++l) {
    if (nn::is_dense(arch[l])) {
      blocks.push_back({l, {}, std::nullopt, std::nullopt});
    } else if (blocks.empty()) {
      throw InapplicableStrategy("suppression needs the architecture to start with a Dense layer");
    } else if (nn::is_layer_norm(arch[l])) {
      if (blocks.back().activation) throw InapplicableStrategy("LayerNorm after an activation is not supported");
      blocks.back().norms.push_back(l);
    } else {
      if (blocks.back().activation) throw InapplicableStrategy("two activations in one block");
      blocks.back().activation = std::get<nn::ActivationSpec>(arch[l]).fn;
      blocks.back().activation_layer = l;
    }
  }
  return blocks;
}

inline bool ends_in_relu(const Block& b) { return b.activation == nn::ActivationFn::ReLU; }

inline void fill(Tensor& t, double v) {
  for (double& e : t.storage()) e = v;
}

/// Forces a block's output to be exactly 0 for every input when its incoming
/// activation is already exactly 0 (or its kernel is zeroed): bias -m before a
/// ReLU, and any LayerNorm in the block gets scale 0 and shift -m.
inline void kill_relu_block(const nn::Architecture& arch, nn::ParamSet& p, const Block& b, double m) {
  if (std::get<nn::DenseSpec>(arch[b.dense]).has_bias) fill(p.tensor(b.dense, 1), -m);
  for (auto ln : b.norms) {
    fill(p.tensor(ln, 0), 0.0);
    fill(p.tensor(ln, 1), -m);
  }
}

/// Silences every block after `from` given that block `from` outputs exact zeros.
/// Returns whether the terminal Dense bias remains uncovered.
inline bool silence_downstream(const nn::Architecture& arch, nn::ParamSet& p, const std::vector<Block>& blocks,
                               std::size_t from, double m) {
  for (std::size_t b = from + 1; b < blocks.size(); ++b) {
    const bool terminal = b + 1 == blocks.size();
    if (ends_in_relu(blocks[b])) {
      kill_relu_block(arch, p, blocks[b], m);
      continue;
    }
    if (!terminal) {
      throw InapplicableStrategy("block at layer " + std::to_string(blocks[b].dense) +
                                 " does not end in ReLU and cannot be silenced");
    }
    if (!blocks[b].norms.empty()) throw InapplicableStrategy("terminal block with LayerNorm cannot be silenced");
    return std::get<nn::DenseSpec>(arch[blocks[b].dense]).has_bias;
  }
  return false;
}

inline std::vector<bool> coverage(const nn::Architecture& arch, const nn::ParamSet& p, bool terminal_bias_uncovered) {
  std::vector<bool> covered(p.scalar_count(), true);
  if (terminal_bias_uncovered) {
    const auto t = *arch.terminal_dense();
    const auto start = p.flat_index_of({t, 1, 0});
    for (std::size_t i = 0; i < p.tensor(t, 1).size(); ++i) covered[start + i] = false;
  }
  return covered;
}

}  // namespace detail

/// Dead-layer forgery: parameters whose gradient is exactly zero on the covered
/// scalars for every input (within `input_bound` for LargeNegativeBias).
inline Forgery forge_dead_params(const nn::Architecture& arch, const SuppressionStrategy& strategy,
                                 const nn::ParamSet& base) {
  nn::require_params_match(arch, base);
  const auto blocks = detail::blocks_of(arch);
  if (blocks.empty()) throw InapplicableStrategy("architecture has no Dense layer");
  const double m = strategy.bias_magnitude;
  if (!(m > 0.0)) throw ArgumentError("bias_magnitude must be positive");
  nn::ParamSet p = base;
  bool terminal_bias_uncovered = false;

  switch (strategy.variant) {
    case SuppressionVariant::ZeroKernelNegBias: {
      // Zero kernel + non-positive bias on every ReLU block.
      if (!detail::ends_in_relu(blocks.front())) {
        throw InapplicableStrategy("zero_kernel_neg_bias needs the first block to end in ReLU");
      }
      detail::fill(p.tensor(blocks.front().dense, 0), 0.0);
      detail::kill_relu_block(arch, p, blocks.front(), m);
      for (std::size_t b = 1; b < blocks.size(); ++b)
        if (detail::ends_in_relu(blocks[b])) detail::fill(p.tensor(blocks[b].dense, 0), 0.0);
      terminal_bias_uncovered = detail::silence_downstream(arch, p, blocks, 0, m);
      break;
    }
    case SuppressionVariant::NegativeKernel: {
      // Strictly negative kernel on a ReLU block whose input is itself a ReLU output (x >= 0).
      if (blocks.size() < 2 || !detail::ends_in_relu(blocks[0]) || !detail::ends_in_relu(blocks[1]) ||
          !blocks[1].norms.empty()) {
        throw InapplicableStrategy("negative_kernel needs two leading Dense->ReLU blocks without LayerNorm");
      }
      for (double& v : p.tensor(blocks[1].dense, 0).storage()) v = -std::fabs(v) - 0.01;
      detail::kill_relu_block(arch, p, blocks[1], m);
      terminal_bias_uncovered = detail::silence_downstream(arch, p, blocks, 1, m);
      break;
    }
    case SuppressionVariant::LargeNegativeBias: {
      // Honest kernel; bias below the largest reachable pre-activation for |x| <= input_bound.
      const auto& b0 = blocks.front();
      if (!detail::ends_in_relu(b0) || !b0.norms.empty() || !std::get<nn::DenseSpec>(arch[b0.dense]).has_bias) {
        throw InapplicableStrategy("large_negative_bias needs a leading Dense(bias)->ReLU block");
      }
      if (!(strategy.input_bound > 0.0)) throw ArgumentError("input_bound must be positive");
      const Tensor& kernel = p.tensor(b0.dense, 0);
      Tensor& bias = p.tensor(b0.dense, 1);
      for (std::size_t j = 0; j < kernel.cols(); ++j) {
        double reach = 0.0;
        for (std::size_t i = 0; i < kernel.rows(); ++i) reach += std::fabs(kernel.at(i, j));
        bias[j] = -(reach * strategy.input_bound + m);
      }
      terminal_bias_uncovered = detail::silence_downstream(arch, p, blocks, 0, m);
      break;
    }
    case SuppressionVariant::NormZero: {
      std::optional<std::size_t> which;
      for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (!detail::ends_in_relu(blocks[b])) continue;
        for (auto ln : blocks[b].norms)
          if (!strategy.norm_layer ? !which : *strategy.norm_layer == ln) which = b;
      }
      if (!which) throw InapplicableStrategy("norm_zero needs a LayerNorm followed by ReLU");
      const auto& blk = blocks[*which];
      const std::size_t ln = strategy.norm_layer.value_or(blk.norms.front());
      detail::fill(p.tensor(ln, 0), 0.0);
      detail::fill(p.tensor(ln, 1), 0.0);
      // Later norms in the same block would re-normalise a zero row to their shift.
      for (auto other : blk.norms)
        if (other > ln) {
          detail::fill(p.tensor(other, 0), 0.0);
          detail::fill(p.tensor(other, 1), 0.0);
        }
      terminal_bias_uncovered = detail::silence_downstream(arch, p, blocks, *which, m);
      break;
    }
    case SuppressionVariant::TerminalKill: {
      if (blocks.size() < 2) throw InapplicableStrategy("terminal_kill needs at least two Dense layers");
      const auto& last = blocks.back();
      const auto& pen = blocks[blocks.size() - 2];
      if (!last.norms.empty()) throw InapplicableStrategy("terminal_kill: terminal block has a LayerNorm");
      const auto act = pen.activation.value_or(nn::ActivationFn::Identity);
      double zero_input = 0.0;  // phi_p(zero_input) == 0 exactly
      switch (act) {
        case nn::ActivationFn::ReLU: zero_input = -m; break;
        case nn::ActivationFn::Sigmoid: zero_input = -1000.0; break;  // exp(1000) overflows, sigmoid == 0
        case nn::ActivationFn::Identity: zero_input = 0.0; break;
        case nn::ActivationFn::Softmax:
          throw InapplicableStrategy("terminal_kill: softmax penultimate output cannot be zero");
      }
      detail::fill(p.tensor(last.dense, 0), 0.0);
      detail::fill(p.tensor(pen.dense, 0), 0.0);
      const bool pen_bias = std::get<nn::DenseSpec>(arch[pen.dense]).has_bias;
      if (pen.norms.empty()) {
        if (pen_bias) detail::fill(p.tensor(pen.dense, 1), zero_input);
        else if (zero_input != 0.0) throw InapplicableStrategy("terminal_kill: penultimate layer needs a bias");
      } else {
        if (pen_bias) detail::fill(p.tensor(pen.dense, 1), 0.0);
        for (auto ln : pen.norms) {
          detail::fill(p.tensor(ln, 0), 0.0);
          detail::fill(p.tensor(ln, 1), zero_input);
        }
      }
      const bool last_bias = std::get<nn::DenseSpec>(arch[last.dense]).has_bias;
      if (last_bias && detail::ends_in_relu(last)) {
        detail::fill(p.tensor(last.dense, 1), -m);
      } else {
        terminal_bias_uncovered = last_bias;
      }
      break;
    }
  }
  return {std::move(p), detail::coverage(arch, base, terminal_bias_uncovered)};
}

/// Fraction of scalars that are exactly zero, optionally restricted to a mask.
inline double gradient_sparsity(const nn::ParamSet& g, const std::vector<bool>* mask = nullptr) {
  const auto flat = g.flatten();
  std::size_t total = 0, zeros = 0;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    ++total;
    zeros += flat[i] == 0.0 ? 1 : 0;
  }
  return total ? static_cast<double>(zeros) / static_cast<double>(total) : 0.0;
}

inline double gradient_sparsity(std::span<const double> values) {
  if (values.empty()) return 0.0;
  const auto zeros = std::count(values.begin(), values.end(), 0.0);
  return static_cast<double>(zeros) / static_cast<double>(values.size());
}

// ---------------------------------------------------------------------------
// End-to-end attack

enum class TargetPolicy { Fixed, RandomPerRound };

struct SuppressionResult {
  fl::RoundTranscript transcript;
  fl::UserId target = 0;
  bool recovered = false;
  /// FedSGD: the target's gradient. FedAVG: the target's local model Theta^(t,k).
  std::optional<nn::ParamSet> recovered_update;
  /// FedAVG only: Theta^(t,k)_trgt - Theta^(t).
  std::optional<nn::ParamSet> gradient_signal;
  std::vector<bool> covered;
  std::optional<std::string> failure;
};

/// FedAVG with literal updates: v = (n-1) Theta-tilde + Theta_trgt, so Theta_trgt = v - (n-1) Theta-tilde.
inline nn::ParamSet recover_fedavg_literal(const nn::ParamSet& aggregate, const nn::ParamSet& dead, std::size_t n) {
  if (n < 2) throw ArgumentError("recover_fedavg_literal: needs at least two users");
  nn::ParamSet local = aggregate;
  local.axpy(-static_cast<double>(n - 1), dead);
  return local;
}

/// Sends honest Theta to the target and dead Theta-tilde to every other active
/// user, then solves the released aggregate for the target's update:
/// FedSGD v; FedAVG v - (n-1) Theta-tilde (or its batch-weighted analogue).
inline SuppressionResult suppression_attack(const fl::World& world, const fl::RoundConfig& cfg, fl::UserId target,
                                            const SuppressionStrategy& strategy, const fl::RoundOptions& opts = {},
                                            TargetPolicy policy = TargetPolicy::Fixed) {
  auto active = fl::select_users(world, cfg);
  if (policy == TargetPolicy::RandomPerRound) {
    Rng rng = make_rng(world.server_seed ^ 0x7A67, world.round);
    target = active[std::uniform_int_distribution<std::size_t>(0, active.size() - 1)(rng)];
  } else if (!std::binary_search(active.begin(), active.end(), target)) {
    // The server controls selection: swap the target in for the first sampled user.
    world.user(target);
    active.front() = target;
    std::sort(active.begin(), active.end());
  }
  if (active.size() < 2) throw ArgumentError("suppression_attack: needs at least two active users");

  Forgery forged = forge_dead_params(world.arch, strategy, world.params);
  auto honest = std::make_shared<const nn::ParamSet>(world.params);
  auto dead = std::make_shared<const nn::ParamSet>(forged.params);

  SuppressionResult res;
  res.target = target;
  res.covered = forged.covered;
  res.transcript = fl::run_round(world, cfg, fl::inconsistent_assignment(active, target, honest, dead), opts);
  const auto& tr = res.transcript;
  if (tr.aborted() || !tr.aggregate) {
    res.failure = "round aborted by " + tr.aborted_by.value_or("unknown");
    return res;
  }
  const nn::ParamSet& v = *tr.aggregate;
  if (cfg.mode == fl::Mode::FedSGD) {
    res.recovered_update = v;
  } else {
    nn::ParamSet local = v;
    if (cfg.weighting == fl::FedAvgWeighting::Literal) {
      local = recover_fedavg_literal(v, *dead, active.size());
    } else {
      double others = 0.0, target_b = 0.0;
      for (const auto& u : tr.users) (u.id == target ? target_b : others) += static_cast<double>(u.batch_count);
      local.axpy(-others, *dead);
      local *= 1.0 / target_b;
    }
    res.gradient_signal = local - *honest;
    res.recovered_update = std::move(local);
  }
  res.recovered = true;
  return res;
}

/// Largest |a - b| over covered coordinates.
inline double max_abs_error(const nn::ParamSet& a, const nn::ParamSet& b, const std::vector<bool>* mask = nullptr) {
  a.require_congruent(b, "max_abs_error");
  const auto fa = a.flatten(), fb = b.flatten();
  double worst = 0.0;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    worst = std::max(worst, std::fabs(fa[i] - fb[i]));
  }
  return worst;
}

}  // namespace secagg_lab::attacks
