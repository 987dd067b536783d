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

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "secagg_lab/data.hpp"
#include "secagg_lab/nn.hpp"
#include "secagg_lab/rng.hpp"
#include "secagg_lab/secure_agg.hpp"

namespace secagg_lab::fl {

using sa::UserId;

enum class Mode { FedSGD, FedAVG };

inline const char* to_string(Mode m) { return m == Mode::FedSGD ? "fedsgd" : "fedavg"; }

/// How a FedAVG user turns its local model into the submitted update.
///   Literal:        Delta = Theta^(t,k);        server: sum(Delta) / sum(b_i)
///   SampleWeighted: Delta = b_i * Theta^(t,k);  server: sum(Delta) / sum(b_i)
enum class FedAvgWeighting { Literal, SampleWeighted };

struct UserState {
  UserId id = 0;
  data::Dataset dataset;
  std::uint64_t rng_seed = 0;
};

struct SecureAggConfig {
  bool enabled = true;
  sa::RingConfig ring;
  std::uint64_t setup_seed = 0x5EC;
};

struct ZeroGuardConfig {
  bool enabled = false;
  /// Entries with |x| <= threshold count as zero. 0 means exact zeros only.
  double threshold = 0.0;
  /// A dead network still trains the terminal Dense bias; skip it when testing for a null update.
  bool ignore_terminal_bias = true;
};

enum class EchoPayload { Digest, FullParameters };

struct DefenseConfig {
  ZeroGuardConfig zero_update_guard;
  bool signed_echo = false;
  EchoPayload echo_payload = EchoPayload::Digest;
  bool conditional_sa = false;

  bool any() const { return zero_update_guard.enabled || signed_echo || conditional_sa; }
};

struct RoundConfig {
  Mode mode = Mode::FedSGD;
  double eta = 0.1;
  std::size_t k = 1;
  std::size_t batch_size = 8;
  double active_fraction = 1.0;
  nn::LossKind loss = nn::LossKind::CrossEntropy;
  FedAvgWeighting weighting = FedAvgWeighting::Literal;
  SecureAggConfig sa;
  DefenseConfig defenses;

  void validate() const {
    if (!(eta > 0.0)) throw ArgumentError("round config: eta must be positive");
    if (mode == Mode::FedAVG && k < 1) throw ArgumentError("round config: FedAVG needs k >= 1");
    if (batch_size < 1) throw ArgumentError("round config: batch_size must be >= 1");
    if (!(active_fraction > 0.0 && active_fraction <= 1.0)) {
      throw ArgumentError("round config: active_fraction must be in (0, 1]");
    }
    if (sa.enabled) sa.ring.validate();
  }
};

struct ModelUpdate {
  nn::ParamSet payload;
  std::uint64_t batch_count = 0;
};

/// Minibatch of `batch_size` distinct rows (the whole dataset if it is smaller).
inline nn::Batch sample_batch(const data::Dataset& d, std::size_t batch_size, Rng& rng) {
  if (d.size() == 0) throw ArgumentError("sample_batch: empty dataset");
  const auto rows = sample_without_replacement(rng, d.size(), batch_size);
  return d.batch(rows);
}

inline Rng user_round_rng(const UserState& user, std::uint64_t round) { return make_rng(user.rng_seed, round); }

/// FedSGD: gradient on one random batch. FedAVG: k SGD steps starting from `params`.
inline ModelUpdate local_update(const nn::Architecture& arch, const nn::ParamSet& params, const UserState& user,
                                const RoundConfig& cfg, std::uint64_t round = 0) {
  if (user.dataset.size() == 0) throw ArgumentError("local_update: user " + std::to_string(user.id) + " has no data");
  nn::require_params_match(arch, params);
  Rng rng = user_round_rng(user, round);
  if (cfg.mode == Mode::FedSGD) {
    const nn::Batch b = sample_batch(user.dataset, cfg.batch_size, rng);
    return {nn::backward(arch, params, b, cfg.loss).grad, b.size()};
  }
  nn::ParamSet local = params;
  std::uint64_t seen = 0;
  for (std::size_t j = 0; j < cfg.k; ++j) {
    const nn::Batch b = sample_batch(user.dataset, cfg.batch_size, rng);
    local.axpy(-cfg.eta, nn::backward(arch, local, b, cfg.loss).grad);
    seen += b.size();
  }
  if (cfg.weighting == FedAvgWeighting::SampleWeighted) local *= static_cast<double>(seen);
  return {std::move(local), seen};
}

/// FedSGD: params - eta * v / divisor (divisor = |U|). FedAVG: v / divisor (divisor = sum b_i).
inline nn::ParamSet server_update(const nn::ParamSet& params, const nn::ParamSet& aggregate, const RoundConfig& cfg,
                                  double divisor) {
  if (!(divisor > 0.0)) throw ArgumentError("server_update: divisor must be positive");
  params.require_congruent(aggregate, "server_update");
  if (cfg.mode == Mode::FedSGD) {
    nn::ParamSet next = params;
    next.axpy(-cfg.eta / divisor, aggregate);
    return next;
  }
  return aggregate * (1.0 / divisor);
}

/// Public keys for signed echo; built by a trusted setup.
struct KeyPair {
  std::array<std::uint8_t, 32> public_key{};
  std::array<std::uint8_t, 64> secret_key{};
};

struct World {
  nn::Architecture arch;
  nn::ParamSet params;
  std::vector<UserState> users;
  std::uint64_t server_seed = 0;
  std::uint64_t round = 0;
  /// Indexed like `users`; empty when no signing keys were provisioned.
  std::vector<KeyPair> keys;

  const UserState& user(UserId id) const {
    for (const auto& u : users)
      if (u.id == id) return u;
    throw ArgumentError("unknown user " + std::to_string(id));
  }
  std::size_t index_of(UserId id) const {
    for (std::size_t i = 0; i < users.size(); ++i)
      if (users[i].id == id) return i;
    throw ArgumentError("unknown user " + std::to_string(id));
  }
};

/// Users with ids 0..n-1 holding the given datasets; seeds derived from `seed`.
inline World make_world(nn::Architecture arch, nn::ParamSet params, std::vector<data::Dataset> datasets,
                        std::uint64_t seed) {
  nn::require_params_match(arch, params);
  World w;
  w.arch = std::move(arch);
  w.params = std::move(params);
  w.server_seed = mix_seed(seed, 0x5E);
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    if (datasets[i].size() == 0) throw ArgumentError("make_world: user " + std::to_string(i) + " has no data");
    w.users.push_back({static_cast<UserId>(i), std::move(datasets[i]), mix_seed(seed, 0x1000 + i)});
  }
  return w;
}

/// Uniform sample without replacement of ceil(active_fraction * |users|) users, sorted by id.
inline std::vector<UserId> select_users(const World& world, const RoundConfig& cfg) {
  const std::size_t n = world.users.size();
  if (n == 0) throw ArgumentError("select_users: empty world");
  const auto count = static_cast<std::size_t>(std::ceil(cfg.active_fraction * static_cast<double>(n) - 1e-9));
  Rng rng = make_rng(world.server_seed, world.round);
  auto idx = sample_without_replacement(rng, n, std::max<std::size_t>(count, 1));
  std::vector<UserId> ids;
  for (auto i : idx) ids.push_back(world.users[i].id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace secagg_lab::fl
