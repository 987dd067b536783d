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

#include "secagg_lab/attacks/canary.hpp"
#include "secagg_lab/attacks/suppression.hpp"
#include "secagg_lab/round.hpp"

namespace secagg_lab::defense {

enum class AttackKind { None, Suppression, Canary };

inline const char* to_string(AttackKind k) {
  switch (k) {
    case AttackKind::None: return "none";
    case AttackKind::Suppression: return "suppression";
    case AttackKind::Canary: return "canary";
  }
  return "?";
}

struct AttackPlan {
  AttackKind kind = AttackKind::None;
  fl::UserId target = 0;
  attacks::TargetPolicy policy = attacks::TargetPolicy::Fixed;
  attacks::SuppressionStrategy strategy;
  /// Canary: the channel and the injected parameters sent to the target.
  attacks::CanaryAddress xi;
  fl::ParamsPtr canary_params;
};

struct DefendedOutcome {
  bool attack_attempted = false;
  bool attack_succeeded = false;
  std::optional<std::string> aborted_by;
  /// Defense that defeated the attack (an abort, or conditional SA garbling the aggregate).
  std::optional<std::string> stopped_by;
  std::optional<nn::ParamSet> new_params;
  fl::RoundTranscript transcript;
  fl::UserId target = 0;
  /// What the server extracted for the target (suppression only).
  std::optional<nn::ParamSet> recovered_update;
  /// Largest deviation between what the server learned and the target's true update.
  double recovery_error = 0.0;
};

/// The target's true update for this round, as a plaintext oracle: FedSGD the
/// gradient, FedAVG the local model Theta^(t,k).
inline nn::ParamSet target_oracle(const fl::World& world, const fl::RoundConfig& cfg, const nn::ParamSet& sent,
                                  fl::UserId target) {
  auto u = fl::local_update(world.arch, sent, world.user(target), cfg, world.round);
  if (cfg.mode == fl::Mode::FedAVG && cfg.weighting == fl::FedAvgWeighting::SampleWeighted) {
    u.payload *= 1.0 / static_cast<double>(u.batch_count);
  }
  return std::move(u.payload);
}

/// Quantization slack for a sum of n fixed-point values.
inline double quantization_bound(std::size_t n, const sa::RingConfig& ring) { return static_cast<double>(n) * ring.step(); }

namespace detail {

inline void attribute_failure(DefendedOutcome& out, const fl::RoundConfig& cfg) {
  if (out.attack_succeeded) return;
  if (out.aborted_by) out.stopped_by = out.aborted_by;
  else if (cfg.sa.enabled && cfg.defenses.conditional_sa) out.stopped_by = "conditional_sa";
  else out.stopped_by = "unknown";
}

}  // namespace detail

/// One round under `defenses` with an optional malicious plan. Guards run in the
/// order echo check, local update, zero guard, (conditional) SA.
inline DefendedOutcome run_defended_round(const fl::World& world, const fl::RoundConfig& base_cfg,
                                          const fl::DefenseConfig& defenses, const AttackPlan& plan,
                                          const fl::RoundOptions& opts = {}) {
  fl::RoundConfig cfg = base_cfg;
  cfg.defenses = defenses;
  DefendedOutcome out;
  switch (plan.kind) {
    case AttackKind::None: {
      out.transcript = fl::run_round(world, cfg, fl::honest_assignment(world, fl::select_users(world, cfg)), opts);
      break;
    }
    case AttackKind::Suppression: {
      out.attack_attempted = true;
      auto res = attacks::suppression_attack(world, cfg, plan.target, plan.strategy, opts, plan.policy);
      out.transcript = std::move(res.transcript);
      out.target = res.target;
      if (res.recovered) {
        out.recovered_update = res.recovered_update;
        const auto oracle = target_oracle(world, cfg, world.params, res.target);
        const std::size_t n = out.transcript.users.size();
        out.recovery_error = attacks::max_abs_error(*res.recovered_update, oracle, &res.covered);
        // FedAVG literal recovery subtracts (n-1) copies of Theta-tilde, each exact.
        out.attack_succeeded = out.recovery_error <= quantization_bound(n, cfg.sa.ring);
      }
      break;
    }
    case AttackKind::Canary: {
      out.attack_attempted = true;
      out.target = plan.target;
      if (!plan.canary_params) throw ArgumentError("canary plan needs injected parameters");
      auto active = fl::select_users(world, cfg);
      if (!std::binary_search(active.begin(), active.end(), plan.target)) {
        world.user(plan.target);
        active.front() = plan.target;
        std::sort(active.begin(), active.end());
      }
      auto suppressed = std::make_shared<const nn::ParamSet>(attacks::suppress_at(world.params, plan.xi));
      out.transcript = fl::run_round(world, cfg, fl::inconsistent_assignment(active, plan.target, plan.canary_params,
                                                                             suppressed), opts);
      if (out.transcript.aggregate) {
        const auto oracle = target_oracle(world, cfg, *plan.canary_params, plan.target);
        const auto& agg = *out.transcript.aggregate;
        out.recovery_error = std::max(std::fabs(agg.at(plan.xi.gamma()) - oracle.at(plan.xi.gamma())),
                                      std::fabs(agg.at(plan.xi.beta()) - oracle.at(plan.xi.beta())));
        out.attack_succeeded = out.recovery_error <= quantization_bound(active.size(), cfg.sa.ring);
      }
      break;
    }
  }
  out.aborted_by = out.transcript.aborted_by;
  if (out.transcript.new_params) out.new_params = *out.transcript.new_params;
  if (out.attack_attempted) detail::attribute_failure(out, cfg);
  return out;
}

}  // namespace secagg_lab::defense
